"""Jacobi fields, conjugate points, and the Morse index of a geodesic.

Two independent routes to the index are provided and must agree:

* integrate the matrix Jacobi equation D^2 A / ds^2 + R(A, vhat) vhat = 0
  along the geodesic, locate interior parameters where the normal block of A
  loses rank, and add up the rank deficiencies (conjugate-point counting);
* discretize the path by broken geodesics, form the Hessian of the energy
  functional at the critical polygon, and count its negative eigenvalues.

All derivative work happens in a parallel orthonormal frame along the curve,
where covariant derivatives become plain derivatives of the frame
components.  The second-variation operator is applied in the [0, 1]
parametrization,

    (Lambda w)^a = - D^2 w^a / d tau^2 - c^2 R(w, vhat) vhat,

whose normal eigenfields on a sphere of curvature K are sin(m pi tau) with
eigenvalues (m pi)^2 - c^2 K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import (
    ConjugateEndpoints,
    GridTooCoarse,
    SegmentCountTooSmall,
    Unsupported,
)
from .geodesics import GeodesicPath, interpolate_points

# Rank-deficiency threshold: a singular value of the normal block below this
# fraction of the largest singular value of A declares a conjugate direction.
RANK_RTOL = 1e-6
# Conjugate-point refinement terminates at this arc-length bracket width.
REFINE_TOL = 1e-10


@dataclass
class TangentField:
    """Vector field along a path, sampled on the path's parameter grid.

    When ``endpoint_zero`` is set the boundary values are stored as exact
    zeros, matching the admissible-variation boundary condition.
    """

    values: np.ndarray
    endpoint_zero: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.endpoint_zero:
            self.values = self.values.copy()
            self.values[0] = 0.0
            self.values[-1] = 0.0


def _field_values(w):
    return np.asarray(getattr(w, "values", w), dtype=float)


# ---------------------------------------------------------------------------
# parallel frames
# ---------------------------------------------------------------------------

def parallel_frame(model, path: GeodesicPath):
    """g-orthonormal parallel frame E[j, i, :] along the path, with E[:, 0]
    the unit tangent.

    On the sphere the normal legs are the constant ambient vectors orthogonal
    to the great-circle plane; on charts the transport equation
    F' = -Gamma(v) F is integrated sample to sample.
    """
    pts, vels = path.points, path.velocities
    m, d = pts.shape
    if model.kind == "sphere":
        root_f = np.sqrt(model.factor)
        e0 = vels / np.linalg.norm(vels, axis=1, keepdims=True)
        normals = model.parallel_normal_frame(pts[0], vels[0])  # (n-1, d)
        frame = np.empty((m, d - 1, d))
        frame[:, 0, :] = e0 / root_f
        for i, w in enumerate(normals):
            frame[:, i + 1, :] = w / root_f
        return frame
    # chart: Gram-Schmidt start, then discrete transport
    n = model.point_dim
    frame = np.empty((m, n, n))
    basis = [vels[0] / model.norm(pts[0], vels[0])]
    for e in np.eye(n):
        v = e.copy()
        for b in basis:
            v = v - model.inner(pts[0], v, b) * b
        nv = model.norm(pts[0], v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == n:
            break
    frame[0] = np.array(basis)
    flat = getattr(model, "constant_metric", False)
    dt = path.taus[1] - path.taus[0]
    for j in range(m - 1):
        if flat:
            frame[j + 1] = frame[j]
            continue
        # midpoint (RK2) transport step of F' = -Gamma(v) F
        def rate(x, v, f):
            gamma = model.christoffel(x)
            return -np.einsum("bac,a,ic->ib", gamma, v, f)

        xm = 0.5 * (pts[j] + pts[j + 1])
        vm = 0.5 * (vels[j] + vels[j + 1])
        k1 = rate(pts[j], vels[j], frame[j])
        k2 = rate(xm, vm, frame[j] + 0.5 * dt * k1)
        frame[j + 1] = frame[j] + dt * k2
    return frame


def frame_components(model, path, frame, w):
    """Coefficients a_i(tau) = g(w, E_i) of a field in the parallel frame."""
    vals = _field_values(w)
    if model.kind == "sphere":
        return model.factor * np.einsum("jd,jid->ji", vals, frame)
    return np.array(
        [
            [model.inner(x, v, frame[j, i]) for i in range(frame.shape[1])]
            for j, (x, v) in enumerate(zip(path.points, vals))
        ]
    )


def field_from_components(frame, comps):
    return np.einsum("ji,jid->jd", comps, frame)


def curvature_matrix(model, path, frame):
    """M[j, i, k] = g(E_i, R(E_k, vhat) vhat) at each sample: the frame
    representation of the geodesic-deviation curvature operator."""
    m, nt, _ = frame.shape
    if model.kind == "sphere":
        mat = model.curvature * np.eye(nt)
        mat[0, 0] = 0.0
        return np.broadcast_to(mat, (m, nt, nt)).copy()
    if getattr(model, "constant_metric", False):
        return np.zeros((m, nt, nt))
    out = np.empty((m, nt, nt))
    for j, x in enumerate(path.points):
        vhat = frame[j, 0]
        for k in range(nt):
            rw = model.jacobi_term(x, vhat, frame[j, k])
            for i in range(nt):
                out[j, i, k] = model.inner(x, frame[j, i], rw)
    return out


# ---------------------------------------------------------------------------
# Sturm-Liouville operator and the second variation
# ---------------------------------------------------------------------------

def apply_sturm_liouville(model, path: GeodesicPath, w) -> TangentField:
    """(Lambda w)^a = -D^2 w / d tau^2 - c^2 R(w, vhat) vhat along a geodesic.

    Covariant derivatives are taken as plain second differences of the
    parallel-frame components.  Endpoint samples are filled by copying the
    neighbouring interior value; they only ever enter integrals weighted by
    endpoint-zero fields.
    """
    vals = _field_values(w)
    m = len(path.taus)
    if m - 2 < 8:
        raise GridTooCoarse("need at least 8 interior samples")
    if path.breaks:
        raise ValueError("operator is defined along unbroken geodesics")
    frame = parallel_frame(model, path)
    comps = frame_components(model, path, frame, vals)
    dt = path.taus[1] - path.taus[0]
    second = np.empty_like(comps)
    # 4th-order interior stencil, 2nd-order beside the boundary
    second[2:-2] = (
        -comps[4:] + 16 * comps[3:-1] - 30 * comps[2:-2] + 16 * comps[1:-3] - comps[:-4]
    ) / (12 * dt**2)
    second[1] = (comps[2] - 2 * comps[1] + comps[0]) / dt**2
    second[-2] = (comps[-1] - 2 * comps[-2] + comps[-3]) / dt**2
    second[0] = second[1]
    second[-1] = second[-2]
    curv = curvature_matrix(model, path, frame)
    lam = -second - path.speed**2 * np.einsum("jik,jk->ji", curv, comps)
    return TangentField(values=field_from_components(frame, lam), endpoint_zero=False)


@dataclass
class SturmLiouvilleOperator:
    """The second-variation operator bound to one geodesic."""

    model: object
    path: GeodesicPath

    def __call__(self, w) -> TangentField:
        return apply_sturm_liouville(self.model, self.path, w)


def path_inner_product(model, path, w1, w2) -> float:
    """(w1, w2) = integral g_ab w1^a w2^b d tau over the path grid."""
    v1, v2 = _field_values(w1), _field_values(w2)
    if model.kind == "sphere":
        vals = model.factor * np.einsum("jd,jd->j", v1, v2)
    else:
        vals = np.array(
            [model.inner(x, a, b) for x, a, b in zip(path.points, v1, v2)]
        )
    dt = np.diff(path.taus)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * dt))


def second_variation_form(model, path: GeodesicPath, w1, w2) -> float:
    """S''(w1, w2) = (w1, Lambda w2) / c for endpoint-zero fields along an
    unbroken geodesic; symmetric, and zero exactly on Jacobi fields."""
    for w in (w1, w2):
        vals = _field_values(w)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if (
            np.linalg.norm(vals[0]) > 1e-9 * scale
            or np.linalg.norm(vals[-1]) > 1e-9 * scale
        ):
            raise ValueError("second variation requires endpoint-zero fields")
    lw2 = apply_sturm_liouville(model, path, w2)
    return path_inner_product(model, path, w1, lw2) / path.speed


# ---------------------------------------------------------------------------
# matrix Jacobi equation
# ---------------------------------------------------------------------------

@dataclass
class JacobiSolution:
    """Matrix Jacobi field along a geodesic in a parallel frame.

    Columns of ``basis[j]`` are the frame components of Jacobi fields with
    J(0) = 0 and (DJ/ds)(0) = E_i; the first frame leg is the unit tangent,
    so the normal block is ``basis[j][1:, 1:]``.
    """

    s_grid: np.ndarray
    basis: np.ndarray          # (m, nt, nt)
    basis_deriv: np.ndarray    # (m, nt, nt)
    frame: np.ndarray
    geodesic: GeodesicPath
    curvature: np.ndarray      # (m, nt, nt) frame curvature matrix
    conjugate_points: List[Tuple[float, int]] = field(default_factory=list)

    def _m_at(self, s):
        grid = self.s_grid
        j = np.clip(np.searchsorted(grid, s) - 1, 0, len(grid) - 2)
        frac = (s - grid[j]) / (grid[j + 1] - grid[j])
        return (1 - frac) * self.curvature[j] + frac * self.curvature[j + 1]

    def evaluate(self, s):
        """A(s) by a short re-integration from the nearest stored state."""
        grid = self.s_grid
        j = int(np.clip(np.searchsorted(grid, s) - 1, 0, len(grid) - 2))
        a, adot = self.basis[j].copy(), self.basis_deriv[j].copy()
        h_total = s - grid[j]
        steps = 2
        h = h_total / steps
        s_cur = grid[j]
        for _ in range(steps):
            a, adot = _jacobi_rk4(self._m_at, s_cur, a, adot, h)
            s_cur += h
        return a


def _jacobi_rk4(m_at, s, a, adot, h):
    def acc(s_, a_):
        return -m_at(s_) @ a_

    k1a, k1d = adot, acc(s, a)
    k2a, k2d = adot + 0.5 * h * k1d, acc(s + 0.5 * h, a + 0.5 * h * k1a)
    k3a, k3d = adot + 0.5 * h * k2d, acc(s + 0.5 * h, a + 0.5 * h * k2a)
    k4a, k4d = adot + h * k3d, acc(s + h, a + h * k3a)
    an = a + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
    dn = adot + (h / 6.0) * (k1d + 2 * k2d + 2 * k3d + k4d)
    return an, dn


def integrate_jacobi(model, geodesic: GeodesicPath) -> JacobiSolution:
    """Integrate A'' + M(s) A = 0 in dressed arc length with A(0) = 0,
    A'(0) = Id, using the same sample grid as the geodesic."""
    if geodesic.breaks:
        raise ValueError("Jacobi integration requires an unbroken geodesic")
    frame = parallel_frame(model, geodesic)
    curv = curvature_matrix(model, geodesic, frame)
    c = geodesic.speed
    s_grid = geodesic.taus * c
    m = len(s_grid)
    nt = frame.shape[1]
    a = np.zeros((m, nt, nt))
    adot = np.empty((m, nt, nt))
    adot[0] = np.eye(nt)
    h = s_grid[1] - s_grid[0]

    def m_at(s):
        j = np.clip(np.searchsorted(s_grid, s) - 1, 0, m - 2)
        frac = (s - s_grid[j]) / h
        return (1 - frac) * curv[j] + frac * curv[j + 1]

    cur_a, cur_d = a[0].copy(), adot[0].copy()
    for j in range(m - 1):
        cur_a, cur_d = _jacobi_rk4(m_at, s_grid[j], cur_a, cur_d, h)
        a[j + 1], adot[j + 1] = cur_a, cur_d
    return JacobiSolution(
        s_grid=s_grid, basis=a, basis_deriv=adot, frame=frame,
        geodesic=geodesic, curvature=curv,
    )


def _normal_min_max_sv(a_mat):
    """(smallest singular value of the normal block, largest of the full A)."""
    full = np.linalg.svd(a_mat, compute_uv=False)
    block = a_mat[1:, 1:]
    if block.size == 0:
        return np.inf, float(full[0]) if len(full) else 1.0
    sv = np.linalg.svd(block, compute_uv=False)
    return float(sv[-1]), float(full[0])


def detect_conjugate_points(sol: JacobiSolution, arc_length=None):
    """Interior parameters where the normal block of A(s) drops rank.

    Candidates are local minima of the smallest normal singular value on the
    stored grid; each is refined by golden-section bracketing down to
    REFINE_TOL in arc length and accepted when the refined singular value is
    below RANK_RTOL times the largest singular value of A there.  The
    multiplicity is the number of singular values under the threshold.
    """
    grid = sol.s_grid
    length = float(grid[-1] if arc_length is None else arc_length)
    if length > grid[-1] + 1e-12:
        raise ValueError("solution was not integrated to the requested length")
    nt = sol.basis.shape[1]
    if nt <= 1:
        sol.conjugate_points = []
        return []

    mins = np.empty(len(grid))
    maxes = np.empty(len(grid))
    for j in range(len(grid)):
        mins[j], maxes[j] = _normal_min_max_sv(sol.basis[j])

    found = []
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    for j in range(1, len(grid) - 1):
        if grid[j] <= 1e-8 or grid[j] >= length - 1e-7:
            continue
        if not (mins[j] <= mins[j - 1] and mins[j] <= mins[j + 1]):
            continue
        if mins[j] > 0.05 * max(maxes[j], 1e-30):
            continue
        lo, hi = grid[j - 1], min(grid[j + 1], length - 1e-9)

        def sigma(s):
            return _normal_min_max_sv(sol.evaluate(s))[0]

        x1 = hi - phi * (hi - lo)
        x2 = lo + phi * (hi - lo)
        f1, f2 = sigma(x1), sigma(x2)
        while hi - lo > REFINE_TOL:
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - phi * (hi - lo)
                f1 = sigma(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + phi * (hi - lo)
                f2 = sigma(x2)
        s_star = 0.5 * (lo + hi)
        a_star = sol.evaluate(s_star)
        full = np.linalg.svd(a_star, compute_uv=False)
        block_sv = np.linalg.svd(a_star[1:, 1:], compute_uv=False)
        threshold = RANK_RTOL * max(float(full[0]), 1e-30)
        mult = int(np.sum(block_sv < threshold))
        if mult > 0:
            if found and abs(found[-1][0] - s_star) < 1e-6:
                continue
            found.append((float(s_star), mult))
    sol.conjugate_points = found
    return found


def morse_index(model, geodesic: GeodesicPath, solution=None) -> int:
    """ind(gamma): total multiplicity of interior conjugate points.

    Raises ConjugateEndpoints when the endpoint itself is conjugate to the
    start, in which case the index is ill-defined.
    """
    sol = solution if solution is not None else integrate_jacobi(model, geodesic)
    length = float(sol.s_grid[-1])
    end_min, end_max = _normal_min_max_sv(sol.basis[-1])
    if end_min < RANK_RTOL * max(end_max, 1e-30):
        raise ConjugateEndpoints("geodesic endpoints are conjugate")
    pts = detect_conjugate_points(sol, length)
    return int(sum(mult for _, mult in pts))


# ---------------------------------------------------------------------------
# discretized second-variation spectrum
# ---------------------------------------------------------------------------

def node_tangent_basis(model, x):
    """g-orthonormal basis of the tangent space at x as rows of an array."""
    if model.kind == "sphere":
        d = model.point_dim
        basis = [x / np.linalg.norm(x)]
        for e in np.eye(d):
            v = e - sum(np.dot(e, b) * b for b in basis)
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                basis.append(v / nv)
            if len(basis) == d:
                break
        return np.array(basis[1:]) / np.sqrt(model.factor)
    g = model.metric(x)
    chol = np.linalg.cholesky(g)
    # rows e_a of inv(L) satisfy e_a g e_b = delta_ab since g = L L^T
    return np.linalg.inv(chol)


def _energy_gradient(model, nodes, dtau):
    """Plain gradient of E = sum d(x_{i-1}, x_i)^2 / (2 dtau) with respect to
    the interior nodes, as ambient/coordinate covectors paired with g."""
    if model.kind == "sphere":
        logs_next = model.log(nodes[1:-1], nodes[2:])
        logs_prev = model.log(nodes[1:-1], nodes[:-2])
        return -(logs_next + logs_prev) / dtau
    logs_next = np.stack([model.log(nodes[i], nodes[i + 1]) for i in range(1, len(nodes) - 1)])
    logs_prev = np.stack([model.log(nodes[i], nodes[i - 1]) for i in range(1, len(nodes) - 1)])
    return -(logs_next + logs_prev) / dtau


def hessian_spectrum(model, geodesic: GeodesicPath, lambda_segments: int):
    """Eigen-decomposition of the discretized energy Hessian at the geodesic.

    Returns ascending eigenvalues (normalized by the node inner product with
    weights dtau) and the eigenvector fields on the node grid, node-orthonormal.
    The energy form is used rather than the length so the reparametrization
    null directions are absent; its negative count equals the Morse index of
    the underlying constant-speed geodesic.
    """
    lam = int(lambda_segments)
    if lam < 4:
        raise SegmentCountTooSmall("need at least 4 segments")
    if model.kind == "chart" and not getattr(model, "constant_metric", False):
        raise Unsupported("energy Hessian needs the sphere model or a flat chart")
    taus = np.linspace(0.0, 1.0, lam + 1)
    nodes = interpolate_points(model, geodesic, taus)
    if model.kind == "sphere":
        nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
    dtau = 1.0 / lam
    bases = np.stack([node_tangent_basis(model, x) for x in nodes[1:-1]])  # (lam-1, nt, d)
    n_int, nt, d = bases.shape
    dim = n_int * nt

    def gradient_coords(node_arr):
        g_plain = _energy_gradient(model, node_arr, dtau)
        if model.kind == "sphere":
            pair = model.factor * np.einsum("iad,id->ia", bases, g_plain)
        else:
            g = model.metric(node_arr[0])
            pair = np.einsum("iad,de,ie->ia", bases, g, g_plain)
        return pair.ravel()

    h_step = 1e-5
    hess = np.empty((dim, dim))
    for col in range(dim):
        i, a = divmod(col, nt)
        moved = nodes.copy()
        moved[i + 1] = model.exp(nodes[i + 1], h_step * bases[i, a])
        gp = gradient_coords(moved)
        moved = nodes.copy()
        moved[i + 1] = model.exp(nodes[i + 1], -h_step * bases[i, a])
        gm = gradient_coords(moved)
        hess[:, col] = (gp - gm) / (2 * h_step)
    hess = 0.5 * (hess + hess.T)
    # node Gram is dtau * identity in the g-orthonormal node coordinates
    eigvals, eigvecs = np.linalg.eigh(hess / dtau)
    fields = np.zeros((dim, lam + 1, d))
    for k in range(dim):
        comp = eigvecs[:, k].reshape(n_int, nt)
        fields[k, 1:-1] = np.einsum("ia,iad->id", comp, bases)
    fields /= np.sqrt(dtau)
    return eigvals, fields, nodes


def hessian_spectrum_index(model, geodesic: GeodesicPath, lambda_segments: int) -> int:
    """Number of negative eigenvalues of the discretized energy Hessian."""
    eigvals, _, _ = hessian_spectrum(model, geodesic, lambda_segments)
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    count = int(np.sum(eigvals < -1e-9 * scale))
    if lambda_segments < 2 * (count + 1):
        raise SegmentCountTooSmall(
            f"{lambda_segments} segments cannot certify index {count}"
        )
    return count
