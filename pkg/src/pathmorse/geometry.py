"""Metric, connection, and curvature of the working manifold.

A particle of mass ``m`` on a Riemannian manifold ``(M, eta)`` with conserved
total energy ``E`` in a potential ``V`` moves, after eliminating time, along
geodesics of the conformally rescaled ("dressed") metric

    g_ab = m (E - 2V)^2 / (2 (E - V)) * eta_ab,

so all higher layers of the toolkit talk to a model of ``(M, g)``.  Two
concrete models are provided.

``SphereModel``
    The unit n-sphere embedded in R^{n+1}.  Points are unit vectors, tangent
    vectors are ambient vectors orthogonal to the point, and the Levi-Civita
    connection is the projected ambient derivative, which in ambient indices
    reads ``Gamma^b_ac = x^b delta_ac``.  A radial potential is constant on
    the sphere, so the dressing is a single positive factor: geodesics stay
    great circles, lengths scale by sqrt(factor), and the sectional curvature
    is K = 1/factor.

``ChartModel``
    A single coordinate chart with user-supplied metric components,
    differentiated analytically when a component Jacobian is supplied and by
    central finite differences otherwise.

Both models are immutable after construction and all evaluators are pure
functions of ``(model, x)``, so they are safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateMetric, NonphysicalSystem, OutOfChart

# Relative threshold below which |E - 2V| makes the conformal factor vanish.
DEGENERACY_RTOL = 1e-12
# Smallest admissible metric eigenvalue, relative to the largest.
METRIC_RANK_RTOL = 1e-10


def potential_from_spec(spec) -> Callable[[np.ndarray], float]:
    """Build a potential V from a catalog name.

    ``"zero"`` is the free particle.  ``"radial:c0,c1,..."`` is the polynomial
    V(r) = c0 + c1 r + c2 r^2 + ... in the ambient/coordinate radius r = |x|.
    A callable is passed through unchanged.
    """
    if callable(spec):
        return spec
    if spec is None or spec == "zero":
        return lambda x: 0.0
    if isinstance(spec, str) and spec.startswith("radial:"):
        coeffs = [float(c) for c in spec[len("radial:"):].split(",") if c.strip()]

        def radial(x, _c=tuple(coeffs)):
            r = float(np.linalg.norm(x))
            return sum(ck * r ** k for k, ck in enumerate(_c))

        return radial
    raise ValueError(f"unknown potential spec {spec!r}")


@dataclass(frozen=True)
class ConservativeSystem:
    """Mass, total energy, and potential defining the dressed metric.

    ``potential`` maps a point (ambient vector for spheres, coordinates for
    charts) to V at that point.  ``base_metric`` optionally names the
    undressed metric evaluator eta_ab(x); models supply their own when absent.
    """

    mass: float
    total_energy: float
    potential: Callable[[np.ndarray], float] = field(default=lambda x: 0.0)
    base_metric: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.mass > 0.0:
            raise NonphysicalSystem(f"mass must be positive, got {self.mass}")

    def conformal_factor(self, x) -> float:
        """m (E - 2V)^2 / (2 (E - V)) at the point x."""
        v = float(self.potential(np.asarray(x, dtype=float)))
        e = self.total_energy
        if not e - v > 0.0:
            raise NonphysicalSystem(
                f"E - V = {e - v:g} is not positive at x = {np.asarray(x)}"
            )
        if abs(e - 2.0 * v) < DEGENERACY_RTOL * abs(e):
            raise DegenerateMetric(
                f"conformal factor vanishes: |E - 2V| = {abs(e - 2.0 * v):g} at x = {np.asarray(x)}"
            )
        return self.mass * (e - 2.0 * v) ** 2 / (2.0 * (e - v))


def free_system(mass=2.0, total_energy=1.0) -> ConservativeSystem:
    """The V = 0 system; with the defaults the dressing factor m E / 2 is 1."""
    return ConservativeSystem(mass=mass, total_energy=total_energy)


def dressed_metric(system: ConservativeSystem, x, base=None) -> np.ndarray:
    """Conformally rescaled metric tensor at x.

    ``base`` overrides the system's undressed metric evaluator; by default a
    Euclidean eta is used, which is the ambient first fundamental form users
    want for flat charts.
    """
    x = np.asarray(x, dtype=float)
    factor = system.conformal_factor(x)
    if base is None:
        base = system.base_metric
    eta = np.eye(x.shape[0]) if base is None else np.asarray(base(x), dtype=float)
    return factor * eta


def _check_metric_rank(g, x):
    eigs = np.linalg.eigvalsh(g)
    if eigs[0] <= METRIC_RANK_RTOL * max(eigs[-1], 1.0):
        raise DegenerateMetric(f"metric not positive definite at x = {x}: eigs {eigs}")


class SphereModel:
    """Unit n-sphere in R^{n+1} with a constant conformal dressing.

    ``factor`` is the dressing evaluated on the sphere (radial potentials are
    constant there); ``curvature`` is the sectional curvature 1/factor of the
    dressed metric.  All lengths, speeds, and inner products reported by this
    model are in the dressed metric.
    """

    kind = "sphere"

    def __init__(self, n: int, system: Optional[ConservativeSystem] = None):
        if n < 1:
            raise ValueError("sphere dimension must be >= 1")
        self.n = n
        self.point_dim = n + 1
        self.system = system if system is not None else free_system()
        # Radial V is constant on |x| = 1; evaluate the factor once.
        probe = np.zeros(self.point_dim)
        probe[0] = 1.0
        self.factor = self.system.conformal_factor(probe)
        self.curvature = 1.0 / self.factor

    # -- points and tangents -------------------------------------------------

    def normalize_point(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def tangent_project(self, x, u):
        dot = np.sum(x * u, axis=-1, keepdims=True)
        return u - dot * x

    def random_tangent(self, x, rng):
        return self.tangent_project(x, rng.standard_normal(np.shape(x)))

    # -- metric data ---------------------------------------------------------

    def metric(self, x):
        """First fundamental form in ambient indices: factor * (I - x x^T)."""
        x = np.asarray(x, dtype=float)
        return self.factor * (np.eye(self.point_dim) - np.outer(x, x))

    def inner(self, x, u, w):
        return self.factor * np.sum(np.asarray(u) * np.asarray(w), axis=-1)

    def norm(self, x, u):
        return np.sqrt(self.inner(x, u, u))

    def christoffel(self, x):
        """Ambient connection coefficients Gamma^b_ac = x^b delta_ac.

        These encode the projected derivative D_a w^b = d_a w^b + x^b w_a for
        fields tangent to the sphere; a constant conformal factor does not
        change them.
        """
        x = np.asarray(x, dtype=float)
        d = self.point_dim
        gamma = np.zeros((d, d, d))
        for b in range(d):
            gamma[b] = x[b] * np.eye(d)
        return gamma

    def riemann(self, x):
        """Constant-curvature tensor R_abc^d = K (g_ac P_b^d - g_bc P_a^d)."""
        x = np.asarray(x, dtype=float)
        proj = np.eye(self.point_dim) - np.outer(x, x)
        g = self.factor * proj
        k = self.curvature
        # index layout: R[a, b, c, d] = R_abc^d
        return k * (
            np.einsum("ac,bd->abcd", g, proj) - np.einsum("bc,ad->abcd", g, proj)
        )

    def jacobi_term(self, x, vhat, w):
        """R_bcd^a vhat^b vhat^d w^c for a g-unit tangent vhat: the curvature
        term of the geodesic deviation equation.  Equals K (w - <w,vhat> vhat)."""
        k = self.curvature
        return k * (w - self.inner(x, w, vhat) * vhat)

    # -- geodesic primitives ---------------------------------------------------

    def acceleration(self, x, v):
        """Geodesic right-hand side x'' = -|x'|^2_euclid x on the unit sphere."""
        return -np.sum(v * v, axis=-1, keepdims=True) * x

    def exp(self, x, u):
        """Geodesic endpoint after unit parameter with initial velocity u.

        Valid for tangent u; a constant conformal factor leaves the map
        unchanged, so the formula is the round-sphere one.
        """
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        theta = np.linalg.norm(u, axis=-1, keepdims=True)
        # sin(theta)/theta with the exact theta -> 0 limit
        return np.cos(theta) * x + np.sinc(theta / np.pi) * u

    def log(self, x, y):
        """Initial velocity of the minimizing geodesic from x to y.

        Undefined at the antipode; callers keep segments strictly shorter
        than pi.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dot = np.sum(x * y, axis=-1, keepdims=True)
        tang = y - dot * x
        s = np.linalg.norm(tang, axis=-1, keepdims=True)
        theta = np.arctan2(s, dot)
        scale = np.where(s > 1e-300, theta / np.where(s > 1e-300, s, 1.0), 1.0)
        return scale * tang

    def distance(self, x, y):
        """Dressed geodesic distance sqrt(factor) * angle(x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dot = np.sum(x * y, axis=-1)
        cross = np.linalg.norm(y - dot[..., None] * x, axis=-1)
        return np.sqrt(self.factor) * np.arctan2(cross, dot)

    def parallel_normal_frame(self, p, direction):
        """Constant ambient vectors spanning the normal space of the great
        circle through p with initial direction ``direction``.

        Along that circle each returned vector is tangent to the sphere and
        parallel, so together with the unit tangent they form a parallel
        orthonormal frame (up to the 1/sqrt(factor) dressing normalization).
        """
        d = self.point_dim
        basis = [p / np.linalg.norm(p), direction / np.linalg.norm(direction)]
        for e in np.eye(d):
            v = e - sum(np.dot(e, b) * b for b in basis)
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                basis.append(v / nv)
            if len(basis) == d:
                break
        return np.array(basis[2:])


class ChartModel:
    """Single-chart manifold with user-supplied undressed metric components.

    Parameters
    ----------
    n : dimension of the chart.
    base_metric : callable x -> (n, n) array of eta_ab(x).
    system : conservative system providing the conformal dressing; defaults
        to the free system with factor 1.
    base_jacobian : optional callable x -> (n, n, n) array with
        J[a, b, c] = d eta_ab / d x^c, used instead of finite differences.
    domain : optional (lo, hi) coordinate box; leaving it raises OutOfChart.
    fd_step : finite-difference step, scaled by the coordinate magnitude.
    constant_metric : set True when g is independent of x (flat fast paths).
    """

    kind = "chart"

    def __init__(self, n, base_metric=None, system=None, base_jacobian=None,
                 domain=None, fd_step=1e-5, constant_metric=False):
        self.n = n
        self.point_dim = n
        self.system = system if system is not None else free_system()
        self._base = base_metric if base_metric is not None else (lambda x: np.eye(n))
        self._base_jac = base_jacobian
        self.domain = domain
        self.fd_step = fd_step
        self.constant_metric = constant_metric
        self._potential_is_constant = self._probe_constant_potential()

    @classmethod
    def euclidean(cls, n, system=None):
        return cls(n, base_metric=lambda x: np.eye(n), system=system,
                   base_jacobian=lambda x: np.zeros((n, n, n)),
                   constant_metric=True)

    def _probe_constant_potential(self):
        rng = np.random.default_rng(0)
        vals = [self.system.potential(0.5 * rng.standard_normal(self.n)) for _ in range(3)]
        return max(vals) - min(vals) < 1e-300

    # -- points and tangents -------------------------------------------------

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain is not None:
            lo, hi = self.domain
            if np.any(x < lo) or np.any(x > hi):
                raise OutOfChart(f"point {x} outside chart box {self.domain}")
        return x

    def normalize_point(self, x):
        return self.check_point(x)

    def tangent_project(self, x, u):
        return np.asarray(u, dtype=float)

    def random_tangent(self, x, rng):
        return rng.standard_normal(self.n)

    # -- metric data ---------------------------------------------------------

    def metric(self, x):
        x = self.check_point(x)
        g = self.system.conformal_factor(x) * np.asarray(self._base(x), dtype=float)
        _check_metric_rank(g, x)
        return g

    def metric_jacobian(self, x):
        """J[a, b, c] = d g_ab / d x^c of the dressed metric."""
        x = self.check_point(x)
        if self._base_jac is not None and self._potential_is_constant:
            f = self.system.conformal_factor(x)
            return f * np.asarray(self._base_jac(x), dtype=float)
        h = self.fd_step * max(1.0, float(np.max(np.abs(x))))
        jac = np.empty((self.n, self.n, self.n))
        for c in range(self.n):
            xp, xm = x.copy(), x.copy()
            xp[c] += h
            xm[c] -= h
            gp = self.system.conformal_factor(xp) * np.asarray(self._base(xp), dtype=float)
            gm = self.system.conformal_factor(xm) * np.asarray(self._base(xm), dtype=float)
            jac[:, :, c] = (gp - gm) / (2.0 * h)
        return jac

    def inner(self, x, u, w):
        g = self.metric(x)
        return np.einsum("...a,ab,...b->...", u, g, w)

    def norm(self, x, u):
        return np.sqrt(self.inner(x, u, u))

    def christoffel(self, x):
        """Levi-Civita Gamma^b_ac = 1/2 g^{bd} (d_a g_dc + d_c g_da - d_d g_ac)."""
        x = self.check_point(x)
        g = self.metric(x)
        ginv = np.linalg.inv(g)
        dg = self.metric_jacobian(x)  # dg[d, c, a] = d g_dc / d x^a
        # sum of derivative permutations, indices (a, c, d)
        bracket = (
            np.einsum("dca->acd", dg)  # d_a g_dc
            + np.einsum("dac->acd", dg)  # d_c g_da
            - np.einsum("acd->acd", dg)  # d_d g_ac
        )
        return 0.5 * np.einsum("bd,acd->bac", ginv, bracket)

    def riemann(self, x):
        """Curvature from the commutator convention
        (nabla_a nabla_b - nabla_b nabla_a) w_c = R_abc^d w_d, i.e.

            R_abc^d = d_b Gamma^d_ac - d_a Gamma^d_bc
                      + Gamma^e_ac Gamma^d_be - Gamma^e_bc Gamma^d_ae.
        """
        x = self.check_point(x)
        h = self.fd_step * max(1.0, float(np.max(np.abs(x))))
        dgamma = np.empty((self.n, self.n, self.n, self.n))
        for c in range(self.n):
            xp, xm = x.copy(), x.copy()
            xp[c] += h
            xm[c] -= h
            dgamma[c] = (self.christoffel(xp) - self.christoffel(xm)) / (2.0 * h)
        gamma = self.christoffel(x)
        # dgamma[b, d, a, c] = d_b Gamma^d_ac
        term = np.einsum("bdac->abcd", dgamma) - np.einsum("adbc->abcd", dgamma)
        term += np.einsum("eac,dbe->abcd", gamma, gamma)
        term -= np.einsum("ebc,dae->abcd", gamma, gamma)
        return term

    def jacobi_term(self, x, vhat, w):
        """R_bcd^a vhat^b vhat^d w^c, the geodesic deviation curvature term."""
        riem = self.riemann(x)
        return np.einsum("bcda,b,c,d->a", riem, vhat, w, vhat)

    # -- geodesic primitives ---------------------------------------------------

    def acceleration(self, x, v):
        gamma = self.christoffel(x)
        return -np.einsum("bac,...a,...c->...b", gamma, v, v)

    def exp(self, x, u, steps=16):
        """Endpoint of the geodesic with initial velocity u after unit parameter."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.constant_metric:
            return x + u
        h = 1.0 / steps
        xs, vs = x.copy(), u.copy()
        for _ in range(steps):
            xs, vs = _rk4_step(self.acceleration, xs, vs, h)
        return xs

    def log(self, x, y, tol=1e-12, max_iter=20):
        """Initial velocity whose exp reaches y; Newton fixed point, exact in
        one step for a constant metric."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.constant_metric:
            return y - x
        u = y - x
        for _ in range(max_iter):
            err = self.exp(x, u) - y
            if np.max(np.abs(err)) < tol:
                return u
            u = u - err
        from .errors import NoConvergence

        raise NoConvergence(f"chart log did not converge from {x} to {y}")

    def distance(self, x, y):
        u = self.log(x, y)
        return float(self.norm(x, u))


def _rk4_step(acc, x, v, h):
    """One classical Runge-Kutta step of x' = v, v' = acc(x, v)."""
    k1x, k1v = v, acc(x, v)
    k2x, k2v = v + 0.5 * h * k1v, acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = v + 0.5 * h * k2v, acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = v + h * k3v, acc(x + h * k3x, v + h * k3v)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    vn = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return xn, vn


def sphere_chart_s2(system=None):
    """Round S^2 in spherical coordinates (theta, phi): a chart-model mirror
    of the embedded sphere, used to cross-check connection and curvature."""

    def metric(x):
        theta = x[0]
        return np.array([[1.0, 0.0], [0.0, np.sin(theta) ** 2]])

    def jacobian(x):
        theta = x[0]
        jac = np.zeros((2, 2, 2))
        jac[1, 1, 0] = 2.0 * np.sin(theta) * np.cos(theta)
        return jac

    eps = 1e-3
    return ChartModel(
        2,
        base_metric=metric,
        base_jacobian=jacobian,
        system=system,
        domain=(np.array([eps, -8.0]), np.array([np.pi - eps, 8.0])),
    )
