"""Jacobi equation, conjugate points, and both index routes.

Closed-form oracles: on a unit sphere the normal Jacobi field with J(0) = 0
is sin(s), so conjugate points sit at multiples of pi with multiplicity
n - 1; the second-variation eigenfields are sin(m pi tau) with eigenvalues
(m pi)^2 - c^2.
"""

import numpy as np
import pytest

from pathmorse.errors import ConjugateEndpoints, GridTooCoarse, SegmentCountTooSmall
from pathmorse.geodesics import integrate_geodesic, solve_bvp
from pathmorse.geometry import SphereModel, free_system
from pathmorse.jacobi import (
    SturmLiouvilleOperator,
    TangentField,
    apply_sturm_liouville,
    detect_conjugate_points,
    frame_components,
    hessian_spectrum,
    hessian_spectrum_index,
    integrate_jacobi,
    morse_index,
    parallel_frame,
    path_inner_product,
    second_variation_form,
)


def _normal_sine_field(model, path, m=1):
    """sin(m pi tau) times the first parallel normal frame leg."""
    frame = parallel_frame(model, path)
    prof = np.sin(m * np.pi * path.taus)
    vals = prof[:, None] * frame[:, 1, :]
    return TangentField(values=vals)


def _random_endpoint_zero(model, path, seed):
    rng = np.random.default_rng(seed)
    frame = parallel_frame(model, path)
    nt = frame.shape[1]
    coef = rng.standard_normal((3, nt))
    vals = np.zeros_like(path.points)
    for m in range(1, 4):
        prof = np.sin(m * np.pi * path.taus)
        vals += prof[:, None] * np.einsum("i,jid->jd", coef[m - 1], frame)
    return TangentField(values=vals)


# ---------------------------------------------------------------------------
# Sturm-Liouville operator
# ---------------------------------------------------------------------------

def test_sturm_liouville_flat_line(flat2):
    # straight line, w = sin(pi tau) e: Lambda w = pi^2 sin(pi tau) e
    path = integrate_geodesic(flat2, np.zeros(2), np.array([1.0, 0.0]), 3.0)
    e = np.array([0.0, 1.0])
    w = TangentField(values=np.sin(np.pi * path.taus)[:, None] * e)
    lw = apply_sturm_liouville(flat2, path, w)
    expected = np.pi**2 * np.sin(np.pi * path.taus)[:, None] * e
    interior = slice(2, -2)
    assert np.max(np.abs(lw.values[interior] - expected[interior])) < 1e-3


def test_sturm_liouville_parallel_constant_field(flat2):
    path = integrate_geodesic(flat2, np.zeros(2), np.array([1.0, 0.0]), 2.0)
    w = TangentField(values=np.tile([0.0, 1.0], (path.n_samples, 1)), endpoint_zero=False)
    lw = apply_sturm_liouville(flat2, path, w)
    assert np.max(np.abs(lw.values[1:-1])) < 1e-9


def test_sturm_liouville_sphere_eigenfield(s2, quarter_endpoints):
    # w = sin(pi s / L) normal on a great circle: eigenvalue (pi/L)^2 - 1
    # times c^2 in the tau parametrization
    p, q = quarter_endpoints
    for k in (0, 1):
        path = solve_bvp(s2, p, q, k)
        c = path.speed
        w = _normal_sine_field(s2, path)
        lw = apply_sturm_liouville(s2, path, w)
        expected = ((np.pi / c) ** 2 - 1.0) * c**2 * w.values
        interior = slice(2, -2)
        err = np.max(np.abs(lw.values[interior] - expected[interior]))
        assert err < 1e-3 * max(1.0, np.max(np.abs(expected)))


def test_sturm_liouville_grid_too_coarse(flat2):
    path = integrate_geodesic(flat2, np.zeros(2), np.array([1.0, 0.0]), 1.0)
    short = type(path)(
        taus=path.taus[::64], points=path.points[::64], velocities=path.velocities[::64],
        speed=path.speed, action=path.action, p=path.p, q=path.q,
    )
    with pytest.raises(GridTooCoarse):
        apply_sturm_liouville(flat2, short, TangentField(values=np.zeros_like(short.points)))


def test_sturm_liouville_self_adjoint(s2, quarter_endpoints):
    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 1)
    op = SturmLiouvilleOperator(s2, path)
    for seed in range(3):
        w1 = _random_endpoint_zero(s2, path, seed)
        w2 = _random_endpoint_zero(s2, path, seed + 10)
        a = path_inner_product(s2, path, w1, op(w2))
        b = path_inner_product(s2, path, op(w1), w2)
        assert abs(a - b) / max(abs(a), abs(b)) < 1e-6


# ---------------------------------------------------------------------------
# Jacobi integration and conjugate points
# ---------------------------------------------------------------------------

def test_jacobi_sphere_sine_profile(s2):
    p = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 0.0])
    path = integrate_geodesic(s2, p, v, 1.5 * np.pi)
    sol = integrate_jacobi(s2, path)
    # normal diagonal entry follows sin(s)
    sine = np.sin(sol.s_grid)
    assert np.max(np.abs(sol.basis[:, 1, 1] - sine)) < 1e-6
    # tangential solution grows linearly
    assert np.max(np.abs(sol.basis[:, 0, 0] - sol.s_grid)) < 1e-8


def test_jacobi_first_zero_at_pi(s2):
    path = integrate_geodesic(
        s2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.6, 0.8]), 1.2 * np.pi
    )
    sol = integrate_jacobi(s2, path)
    pts = detect_conjugate_points(sol)
    assert len(pts) == 1
    s_star, mult = pts[0]
    assert abs(s_star - np.pi) < 1e-4
    assert mult == 1


def test_jacobi_flat_no_conjugate_points(flat2):
    path = integrate_geodesic(flat2, np.zeros(2), np.array([1.0, 0.0]), 6.0)
    sol = integrate_jacobi(flat2, path)
    assert np.max(np.abs(sol.basis[:, 0, 0] - sol.s_grid)) < 1e-10
    assert detect_conjugate_points(sol) == []


def test_jacobi_s3_multiplicity_two(s3):
    p = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 0.0, 0.0])
    path = integrate_geodesic(s3, p, v, 2.5 * np.pi)
    sol = integrate_jacobi(s3, path)
    pts = detect_conjugate_points(sol)
    assert [m for _, m in pts] == [2, 2]
    assert abs(pts[0][0] - np.pi) < 1e-3
    assert abs(pts[1][0] - 2 * np.pi) < 1e-3


def test_detect_short_arc_empty(s2, quarter_endpoints):
    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 0)  # length pi/2
    sol = integrate_jacobi(s2, path)
    assert detect_conjugate_points(sol) == []


def test_jacobi_field_from_geodesic_variation(s2):
    # J(s) = d/d eps exp_p(s (vhat + eps u)) satisfies the Jacobi equation
    p = np.array([1.0, 0.0, 0.0])
    vhat = np.array([0.0, 1.0, 0.0])
    u = np.array([0.0, 0.0, 1.0])
    length = 2.0
    eps = 1e-5
    plus = integrate_geodesic(s2, p, vhat + eps * u, length)
    minus = integrate_geodesic(s2, p, vhat - eps * u, length)
    jfield = (plus.points - minus.points) / (2 * eps)
    base = integrate_geodesic(s2, p, vhat, length)
    # residual of D^2 J/ds^2 + R(J, vhat) vhat in frame components
    frame = parallel_frame(s2, base)
    comps = frame_components(s2, base, frame, jfield)
    h = base.taus[1] - base.taus[0]
    second = (comps[2:] - 2 * comps[1:-1] + comps[:-2]) / (h * length) ** 2
    curv_term = comps[1:-1].copy()
    curv_term[:, 0] = 0.0  # tangential leg carries no curvature force
    resid = second + curv_term
    assert np.max(np.abs(resid)) < 1e-3


# ---------------------------------------------------------------------------
# Morse index, both routes
# ---------------------------------------------------------------------------

def test_morse_index_sphere_family(s2, quarter_endpoints):
    p, q = quarter_endpoints
    for k in range(3):
        path = solve_bvp(s2, p, q, k)
        assert morse_index(s2, path) == k


def test_morse_index_s4_k2():
    s4 = SphereModel(4, free_system())
    p = np.zeros(5)
    p[0] = 1.0
    q = np.zeros(5)
    q[1] = 1.0
    path = solve_bvp(s4, p, q, 2)
    assert morse_index(s4, path) == 2 * 3


def test_morse_index_flat_segment(flat2):
    path = integrate_geodesic(flat2, np.zeros(2), np.array([1.0, 1.0]), 4.0)
    assert morse_index(flat2, path) == 0


def test_conjugate_endpoints_detected(s2):
    path = integrate_geodesic(
        s2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.pi
    )
    with pytest.raises(ConjugateEndpoints):
        morse_index(s2, path)


def test_hessian_spectrum_index_matches(s2, s3, quarter_endpoints):
    p, q = quarter_endpoints
    assert hessian_spectrum_index(s2, solve_bvp(s2, p, q, 0), 32) == 0
    assert hessian_spectrum_index(s2, solve_bvp(s2, p, q, 1), 32) == 1
    p3 = np.array([1.0, 0.0, 0.0, 0.0])
    q3 = np.array([0.0, 1.0, 0.0, 0.0])
    assert hessian_spectrum_index(s3, solve_bvp(s3, p3, q3, 1), 32) == 2


def test_hessian_segment_count_guard(s2, quarter_endpoints):
    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 2)  # index 2 needs >= 6 segments
    with pytest.raises(SegmentCountTooSmall):
        hessian_spectrum_index(s2, path, 4)


def test_hessian_nondegenerate_gap_and_conjugate_nullity(s2, quarter_endpoints):
    # non-conjugate endpoints: smallest |eigenvalue| above the gap;
    # antipodal endpoints: an exact rotational zero mode appears
    p, q = quarter_endpoints
    gap = 1.0
    eigvals, _, _ = hessian_spectrum(s2, solve_bvp(s2, p, q, 0), 64)
    assert np.min(np.abs(eigvals)) > gap
    antipodal = integrate_geodesic(
        s2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.pi
    )
    eigvals, _, _ = hessian_spectrum(s2, antipodal, 64)
    assert np.min(np.abs(eigvals)) < gap * 1e-3


# ---------------------------------------------------------------------------
# second variation
# ---------------------------------------------------------------------------

def test_second_variation_positive_below_first_conjugate(s2, quarter_endpoints):
    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 0)
    for seed in range(3):
        w = _random_endpoint_zero(s2, path, seed)
        val = second_variation_form(s2, path, w, w)
        assert val > 0.0


def test_second_variation_symmetry(s2, quarter_endpoints):
    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 1)
    w1 = _random_endpoint_zero(s2, path, 1)
    w2 = _random_endpoint_zero(s2, path, 2)
    a = second_variation_form(s2, path, w1, w2)
    b = second_variation_form(s2, path, w2, w1)
    assert a == pytest.approx(b, abs=1e-8 * max(1.0, abs(a)))


def test_second_variation_null_on_jacobi_field(s2):
    # antipodal great circle: J = sin(s) normal vanishes at both ends and
    # spans the null space of the second variation
    path = integrate_geodesic(
        s2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.pi
    )
    jac = _normal_sine_field(s2, path)
    for seed in range(3):
        w1 = _random_endpoint_zero(s2, path, seed)
        val = second_variation_form(s2, path, w1, jac)
        assert abs(val) < 1e-6


def test_second_variation_fd_hessian_oracle(s2, quarter_endpoints):
    # bilinear finite differences of the action under two-parameter
    # deformations exp(e1 w1 + e2 w2)
    from pathmorse.geodesics import SampledCurve, action

    p, q = quarter_endpoints
    path = solve_bvp(s2, p, q, 0)
    w1 = _normal_sine_field(s2, path, m=1)
    w2 = _normal_sine_field(s2, path, m=2)
    h = 1e-4

    def deformed_action(e1, e2):
        disp = e1 * w1.values + e2 * w2.values
        pts = np.stack([s2.exp(x, s2.tangent_project(x, d)) for x, d in zip(path.points, disp)])
        return action(s2, SampledCurve(taus=path.taus, points=pts))

    fd = (
        deformed_action(h, h) - deformed_action(h, -h)
        - deformed_action(-h, h) + deformed_action(-h, -h)
    ) / (4 * h * h)
    val = second_variation_form(s2, path, w1, w2)
    assert val == pytest.approx(fd, abs=2e-3 * max(1.0, abs(val)))
    # and the diagonal
    fd11 = (deformed_action(h, 0) - 2 * deformed_action(0, 0) + deformed_action(-h, 0)) / (h * h)
    val11 = second_variation_form(s2, path, w1, w1)
    assert val11 == pytest.approx(fd11, rel=2e-3)
