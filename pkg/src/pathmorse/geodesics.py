"""Geodesic initial- and boundary-value problems, the action functional, and
the first variation with breaks.

Geodesics are stored with constant-speed parametrization on [0, 1]; the speed
c equals the dressed length, which for a geodesic also equals the action
S = integral of (g_ab v^a v^b)^(1/2) d tau.  On spheres the boundary-value
solver shoots within the 2-plane of the endpoints and selects the winding
family by an integer k: the solution's interior passes k times through the
start point or its antipode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import (
    AntipodalEndpoints,
    EndpointViolation,
    IntegrationFailure,
    NoConvergence,
    Unsupported,
)
from .geometry import _rk4_step

# Integration step bound in dressed arc length.
MAX_ARC_STEP = 2.0 * np.pi / 512.0
# Endpoint tolerance for boundary-value solutions, dressed metric.
ENDPOINT_TOL = 1e-8


@dataclass
class BreakDiscontinuity:
    """Velocity jump Delta v^a = v(tau+) - v(tau-) at an interior parameter."""

    tau: float
    delta_v: np.ndarray


@dataclass
class GeodesicPath:
    """Constant-speed curve samples on a uniform tau grid.

    ``velocities`` hold d x / d tau; at a break index the stored value is the
    left limit and the jump lives in ``breaks``.
    """

    taus: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    speed: float
    action: float
    p: np.ndarray
    q: np.ndarray
    breaks: List[BreakDiscontinuity] = field(default_factory=list)

    @property
    def n_samples(self):
        return len(self.taus)

    def velocity_sides(self, break_index):
        """(v-, v+) at the grid index of a break."""
        for br in self.breaks:
            if abs(self.taus[break_index] - br.tau) < 1e-12:
                vm = self.velocities[break_index]
                return vm, vm + br.delta_v
        raise ValueError(f"no break at sample {break_index}")

    def piece_slices(self):
        """Index ranges [i0, i1] of the smooth pieces between breaks."""
        idx = [0]
        for br in self.breaks:
            j = int(np.argmin(np.abs(self.taus - br.tau)))
            if abs(self.taus[j] - br.tau) > 1e-9:
                raise ValueError("break tau is not on the sample grid")
            idx.append(j)
        idx.append(len(self.taus) - 1)
        return [(idx[i], idx[i + 1]) for i in range(len(idx) - 1)]

    def piece_velocities(self, lo, hi):
        """Velocities on [lo, hi] with the right limit restored when the
        piece starts at a break (samples store the left limit there)."""
        vels = self.velocities[lo:hi + 1].copy()
        for br in self.breaks:
            if abs(self.taus[lo] - br.tau) < 1e-12:
                vels[0] = vels[0] + br.delta_v
        return vels


@dataclass
class SampledCurve:
    """A bare discretized curve for action evaluation; velocities optional."""

    taus: np.ndarray
    points: np.ndarray
    velocities: Optional[np.ndarray] = None
    breaks: List[BreakDiscontinuity] = field(default_factory=list)


def integrate_geodesic(model, p, v0, length) -> GeodesicPath:
    """Integrate the geodesic equation v^a nabla_a v^b = 0 from p.

    The initial direction is v0 (any magnitude); the curve is traversed for
    the requested dressed arc ``length`` with classical fixed-step RK4, step
    bounded by MAX_ARC_STEP, and on spheres each step is projected back to
    the sphere.
    """
    p = model.normalize_point(np.asarray(p, dtype=float))
    v0 = model.tangent_project(p, np.asarray(v0, dtype=float))
    nv = model.norm(p, v0)
    if not nv > 0.0:
        raise ValueError("initial direction must be nonzero")
    if not length > 0.0:
        raise ValueError("length must be positive")
    c = float(length)
    vel0 = (c / nv) * v0  # d x / d tau with |v|_g = c

    n_steps = max(8, int(math.ceil(length / MAX_ARC_STEP)))
    h = 1.0 / n_steps
    d = p.shape[0]
    pts = np.empty((n_steps + 1, d))
    vels = np.empty((n_steps + 1, d))
    pts[0], vels[0] = p, vel0
    x, v = p.copy(), vel0.copy()
    on_sphere = model.kind == "sphere"
    for j in range(n_steps):
        x, v = _rk4_step(model.acceleration, x, v, h)
        if on_sphere:
            x = x / np.linalg.norm(x)
            v = model.tangent_project(x, v)
        else:
            x = model.normalize_point(x)
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(v)):
            raise IntegrationFailure(f"non-finite state at step {j}")
        pts[j + 1], vels[j + 1] = x, v
    taus = np.linspace(0.0, 1.0, n_steps + 1)
    speeds = _speeds(model, pts, vels)
    action = _trapz(speeds, taus)
    return GeodesicPath(
        taus=taus, points=pts, velocities=vels, speed=c, action=float(action),
        p=p, q=pts[-1].copy(),
    )


def exponential_map(model, p, v):
    """exp_p(v): endpoint of the unit-parameter geodesic with velocity v."""
    length = float(model.norm(model.normalize_point(np.asarray(p, float)), np.asarray(v, float)))
    if length == 0.0:
        return np.asarray(p, dtype=float).copy()
    return integrate_geodesic(model, p, v, length).points[-1]


def solve_bvp(model, p, q, k=0) -> GeodesicPath:
    """Geodesic from p to q in the winding family k.

    On spheres the interior of the solution passes exactly k times through p
    or -p; endpoints may be neither identical nor antipodal.  Chart models
    support k = 0 only, found by Newton shooting on the initial velocity.
    """
    if model.kind == "sphere":
        return _solve_bvp_sphere(model, p, q, k)
    if k != 0:
        raise Unsupported("winding families beyond k = 0 require the sphere model")
    return _solve_bvp_chart(model, p, q)


def _solve_bvp_sphere(model, p, q, k):
    p = model.normalize_point(np.asarray(p, dtype=float))
    q = model.normalize_point(np.asarray(q, dtype=float))
    dot = float(np.dot(p, q))
    perp = q - dot * p
    s = float(np.linalg.norm(perp))
    theta = math.atan2(s, dot)  # base-metric angle in (0, pi)
    if theta < 1e-12:
        raise ValueError("endpoints are identical; the winding family is not defined")
    if np.pi - theta < 1e-9:
        raise AntipodalEndpoints("antipodal endpoints admit a continuum of geodesics")
    u_hat = perp / s
    direction = u_hat if k % 2 == 0 else -u_hat
    # elementary guess for the swept angle; Newton refines on the integrated flow
    ell = k * np.pi + theta if k % 2 == 0 else (k + 1) * np.pi - theta
    root_f = math.sqrt(model.factor)

    for attempt, offset in enumerate((0.0, 0.05, -0.05, 0.2, -0.2)):
        ell_try = ell + offset
        ok = False
        for _ in range(6):
            path = integrate_geodesic(model, p, direction, root_f * ell_try)
            x_end = path.points[-1]
            t_end = path.velocities[-1]
            t_end = t_end / np.linalg.norm(t_end)
            # remaining signed swept angle to q around the travel direction
            delta = math.atan2(float(np.dot(q, t_end)), float(np.dot(q, x_end)))
            ell_try += delta
            if abs(delta) < 1e-13 * max(1.0, ell_try):
                ok = True
                break
        in_band = k * np.pi < ell_try < (k + 1) * np.pi
        if ok and in_band:
            path = integrate_geodesic(model, p, direction, root_f * ell_try)
            if model.distance(path.points[-1], q) < ENDPOINT_TOL:
                path.q = q.copy()
                return path
    raise NoConvergence(f"sphere shooting failed for winding {k}")


def _solve_bvp_chart(model, p, q, tol=1e-12, max_iter=12):
    p = model.normalize_point(np.asarray(p, dtype=float))
    q = model.normalize_point(np.asarray(q, dtype=float))
    if np.allclose(p, q):
        raise ValueError("endpoints are identical")
    n = p.shape[0]
    u = q - p  # exact for a constant metric

    def endpoint(vel):
        return model.exp(p, vel, steps=32)

    for _ in range(max_iter):
        err = endpoint(u) - q
        if np.max(np.abs(err)) < tol:
            break
        h = 1e-6 * max(1.0, float(np.max(np.abs(u))))
        jac = np.empty((n, n))
        for j in range(n):
            du = np.zeros(n)
            du[j] = h
            jac[:, j] = (endpoint(u + du) - endpoint(u - du)) / (2 * h)
        try:
            u = u - np.linalg.solve(jac, err)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular shooting Jacobian") from exc
    else:
        raise NoConvergence("chart shooting did not converge")
    length = float(model.norm(p, u))
    path = integrate_geodesic(model, p, u, length)
    path.q = q.copy()
    return path


# ---------------------------------------------------------------------------
# action functional
# ---------------------------------------------------------------------------

def action(model, path) -> float:
    """Composite quadrature of S = integral (g_ab v^a v^b)^(1/2) d tau.

    Accepts any object with ``taus`` and ``points`` (velocities are taken
    from the object when present, else by central differences), so the value
    is parametrization invariant up to quadrature error.
    """
    taus = np.asarray(path.taus, dtype=float)
    pts = np.asarray(path.points, dtype=float)
    if len(taus) < 2:
        raise ValueError("a path needs at least 2 samples")
    vels = getattr(path, "velocities", None)
    if vels is None:
        vels = _fd_velocities(pts, taus)
    speeds = _speeds(model, pts, np.asarray(vels, dtype=float))
    return float(_trapz(speeds, taus))


def _speeds(model, pts, vels):
    if model.kind == "sphere":
        return np.sqrt(model.factor) * np.linalg.norm(vels, axis=-1)
    if getattr(model, "constant_metric", False):
        g = model.metric(pts[0])
        return np.sqrt(np.einsum("ja,ab,jb->j", vels, g, vels))
    return np.array([model.norm(x, v) for x, v in zip(pts, vels)])


def _fd_velocities(pts, taus):
    vels = np.empty_like(pts)
    vels[1:-1] = (pts[2:] - pts[:-2]) / (taus[2:] - taus[:-2])[:, None]
    vels[0] = (pts[1] - pts[0]) / (taus[1] - taus[0])
    vels[-1] = (pts[-1] - pts[-2]) / (taus[-1] - taus[-2])
    return vels


def _trapz(y, x):
    dx = np.diff(x)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * dx))


# ---------------------------------------------------------------------------
# covariant derivatives along a sampled curve
# ---------------------------------------------------------------------------

def covariant_deriv_field(model, pts, vels, field, taus):
    """D W / d tau of a field W along a smooth sampled curve: a 4th-order
    stencil for d W / d tau plus the connection term Gamma(v, W)."""
    m = len(taus)
    if m < 6:
        raise ValueError("piece too short for the derivative stencil")
    dt = taus[1] - taus[0]
    dw = np.empty_like(field)
    # interior: 5-point 4th-order central
    dw[2:-2] = (-field[4:] + 8 * field[3:-1] - 8 * field[1:-3] + field[:-4]) / (12 * dt)
    # near the edges: one-sided 2nd order
    dw[0] = (-3 * field[0] + 4 * field[1] - field[2]) / (2 * dt)
    dw[1] = (field[2] - field[0]) / (2 * dt)
    dw[-2] = (field[-1] - field[-3]) / (2 * dt)
    dw[-1] = (3 * field[-1] - 4 * field[-2] + field[-3]) / (2 * dt)
    if model.kind == "sphere":
        # Gamma^b_ac = x^b delta_ac: correction x <v, W>_euclid
        corr = pts * np.sum(vels * field, axis=-1, keepdims=True)
    elif getattr(model, "constant_metric", False):
        corr = 0.0
    else:
        corr = np.array(
            [
                np.einsum("bac,a,c->b", model.christoffel(x), v, f)
                for x, v, f in zip(pts, vels, field)
            ]
        )
    return dw + corr


def covariant_deriv_velocity(model, path, lo, hi):
    """D v / d tau on the smooth sample range [lo, hi]."""
    taus = path.taus[lo:hi + 1]
    pts = path.points[lo:hi + 1]
    if hasattr(path, "piece_velocities"):
        vels = path.piece_velocities(lo, hi)
    else:
        vels = path.velocities[lo:hi + 1].copy()
    return covariant_deriv_field(model, pts, vels, vels, taus)


def geodesic_residual(model, path) -> float:
    """max |v^a nabla_a v^b| in the dressed norm over interior samples of
    every smooth piece (two edge samples skipped per piece for the stencil)."""
    worst = 0.0
    for lo, hi in path.piece_slices():
        dv = covariant_deriv_velocity(model, path, lo, hi)
        pts = path.points[lo:hi + 1]
        interior = slice(2, len(dv) - 2)
        if model.kind == "sphere":
            norms = np.sqrt(model.factor) * np.linalg.norm(dv[interior], axis=-1)
        else:
            norms = np.array(
                [model.norm(x, w) for x, w in zip(pts[interior], dv[interior])]
            )
        if len(norms):
            worst = max(worst, float(np.max(norms)))
    return worst


# ---------------------------------------------------------------------------
# first variation
# ---------------------------------------------------------------------------

def first_variation(model, path, w) -> float:
    """dS(w) for a variation field w vanishing at the endpoints.

    Evaluates the break sum and the bulk integral of the first variation:

        dS(w) = - sum_i <w(tau_i), vhat+ - vhat-> - sum_pieces
                integral <w, D vhat / d tau> d tau,

    with pointwise unit tangents vhat = v / |v|_g.  On a path whose pieces
    share one constant speed c this reduces to the single-c break formula
    -(1/c) sum w Delta v - (1/c) integral w . v nabla v.
    """
    values = np.asarray(getattr(w, "values", w), dtype=float)
    if values.shape != path.points.shape:
        raise ValueError("variation field must share the path grid")
    scale = max(1.0, float(np.max(np.abs(values))))
    if (
        model.norm(path.points[0], values[0]) > 1e-9 * scale
        or model.norm(path.points[-1], values[-1]) > 1e-9 * scale
    ):
        raise EndpointViolation("variation field must vanish at both endpoints")

    total = 0.0
    for lo, hi in path.piece_slices():
        pts = path.points[lo:hi + 1]
        vels = path.piece_velocities(lo, hi)
        speeds = _speeds(model, pts, vels)
        vhat = vels / speeds[:, None]
        dvhat = covariant_deriv_field(model, pts, vels, vhat, path.taus[lo:hi + 1])
        integrand = np.array(
            [model.inner(x, wv, d) for x, wv, d in zip(pts, values[lo:hi + 1], dvhat)]
        )
        total -= _trapz(integrand, path.taus[lo:hi + 1])

    for br in path.breaks:
        j = int(np.argmin(np.abs(path.taus - br.tau)))
        vm, vp = path.velocity_sides(j)
        x = path.points[j]
        vm_hat = vm / model.norm(x, vm)
        vp_hat = vp / model.norm(x, vp)
        total -= float(model.inner(x, values[j], vp_hat - vm_hat))
    return total


def concatenate_paths(model, pieces) -> GeodesicPath:
    """Join geodesic pieces end to end into a broken path.

    Each piece occupies an equal tau width; the junction sample keeps the
    left-limit velocity and the jump is recorded as a break.
    """
    if len(pieces) < 2:
        raise ValueError("need at least two pieces")
    m = len(pieces)
    taus_all, pts_all, vels_all, breaks = [], [], [], []
    for i, piece in enumerate(pieces):
        if i > 0 and np.linalg.norm(piece.points[0] - pieces[i - 1].points[-1]) > 1e-9:
            raise ValueError("pieces do not share endpoints")
        local = piece.taus / m + i / m
        # velocities rescale by the tau compression factor m
        seg_v = piece.velocities * m
        if i == 0:
            taus_all.append(local)
            pts_all.append(piece.points)
            vels_all.append(seg_v)
        else:
            prev_v = vels_all[-1][-1]
            breaks.append(BreakDiscontinuity(tau=float(local[0]), delta_v=seg_v[0] - prev_v))
            taus_all.append(local[1:])
            pts_all.append(piece.points[1:])
            vels_all.append(seg_v[1:])
    taus = np.concatenate(taus_all)
    pts = np.concatenate(pts_all)
    vels = np.concatenate(vels_all)
    path = GeodesicPath(
        taus=taus, points=pts, velocities=vels,
        speed=float(np.mean([pc.speed * m for pc in pieces])),
        action=float(sum(pc.action for pc in pieces)),
        p=pts[0].copy(), q=pts[-1].copy(), breaks=breaks,
    )
    return path


def interpolate_points(model, path, taus):
    """Positions of ``path`` at arbitrary parameters, by geodesic
    interpolation between the bracketing samples."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    src = path.taus
    out = np.empty((len(taus), path.points.shape[1]))
    for i, t in enumerate(taus):
        j = min(int(np.searchsorted(src, t, side="right")) - 1, len(src) - 2)
        j = max(j, 0)
        frac = (t - src[j]) / (src[j + 1] - src[j])
        if frac <= 0.0:
            out[i] = path.points[j]
        elif frac >= 1.0:
            out[i] = path.points[j + 1]
        else:
            out[i] = model.exp(
                path.points[j], frac * model.log(path.points[j], path.points[j + 1])
            )
    return out


def great_circle_length(k: int, theta: float) -> float:
    """Base-metric arc length of the winding-k geodesic between points at
    angle theta on a unit sphere: k pi + theta for even k, (k+1) pi - theta
    for odd k."""
    return k * np.pi + theta if k % 2 == 0 else (k + 1) * np.pi - theta
