"""Acceptance checks: one callable per criterion, shared by the test suite
and the ``verify`` command.

Each criterion function receives a shared context with cached expensive
artifacts (enumerations, trajectory counts, the homology table) and returns
a CriterionResult; nothing here loosens a tolerance on failure.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import IndexGapNotOne
from .geodesics import great_circle_length, integrate_geodesic, solve_bvp
from .geometry import ChartModel, SphereModel, free_system
from .homology import (
    assemble_complex,
    build_omega_complex,
    count_trajectories,
    enumerate_critical_points,
    homology,
    smith_normal_form,
)
from .jacobi import (
    detect_conjugate_points,
    hessian_spectrum_index,
    integrate_jacobi,
    morse_index,
)
from .pathspace import (
    BrokenPath,
    action_gradient,
    broken_action,
    perturbed_seed,
    run_flow,
)


@dataclass
class CriterionResult:
    number: int
    description: str
    passed: bool
    details: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} [{status}] {self.description}: {self.details} ({self.seconds:.1f}s)"


class VerificationContext:
    """Lazy cache of the expensive artifacts the criteria share."""

    def __init__(self, lam=64, epsilon=0.01):
        self.lam = lam
        self.epsilon = epsilon
        self._cache: Dict = {}

    def sphere(self, n):
        key = ("model", n)
        if key not in self._cache:
            self._cache[key] = SphereModel(n, free_system())
        return self._cache[key]

    def endpoints(self, n):
        p = np.zeros(n + 1)
        p[0] = 1.0
        q = np.zeros(n + 1)
        q[1] = 1.0
        return p, q

    def criticals(self, n, max_winding):
        key = ("crit", n, max_winding)
        if key not in self._cache:
            p, q = self.endpoints(n)
            self._cache[key] = enumerate_critical_points(
                self.sphere(n), p, q, max_winding, lam=self.lam
            )
        return self._cache[key]

    def count(self, n, k_source, max_winding=None, epsilon=None):
        w = max_winding if max_winding is not None else max(k_source, 1)
        eps = epsilon if epsilon is not None else self.epsilon
        key = ("count", n, k_source, w, eps)
        if key not in self._cache:
            crits = self.criticals(n, w)
            src = next(c for c in crits if c.index == k_source * (n - 1) and c.winding == k_source)
            tgt = next(c for c in crits if c.winding == k_source - 1)
            self._cache[key] = count_trajectories(
                self.sphere(n), src, tgt, crits, epsilon=eps
            )
        return self._cache[key]

    def omega_table(self):
        if "table" not in self._cache:
            self._cache["table"] = compute_omega_table(lam=self.lam, epsilon=self.epsilon)
        return self._cache["table"]


# ---------------------------------------------------------------------------
# the homology table of the path spaces Omega(S^n)
# ---------------------------------------------------------------------------

def _winding_for_table(n, max_degree=6):
    """Windings needed so every degree <= max_degree has complete boundary
    data: the first omitted winding must sit above degree max_degree + 1."""
    if n == 1:
        return 6
    if n == 2:
        return max_degree + 1
    w = 0
    while (w + 1) * (n - 1) <= max_degree + 1:
        w += 1
    return w


def compute_omega_table(lam=64, epsilon=0.01, max_degree=6, n_values=(1, 2, 3, 4, 5)):
    """Cells of the homology table for the path spaces of S^1 ... S^5."""
    rows = {}
    for n in n_values:
        model = SphereModel(n, free_system())
        p = np.zeros(n + 1)
        p[0] = 1.0
        q = np.zeros(n + 1)
        q[1] = 1.0
        w = _winding_for_table(n, max_degree)
        cx, counts = build_omega_complex(model, p, q, w, lam=lam, epsilon=epsilon)
        groups = homology(cx, max_degree=max_degree)
        rows[n] = [table_cell(g) for g in groups]
    return rows


def table_cell(group):
    if group.torsion:
        return str(group)
    if group.free_rank == 0:
        return "0"
    if group.truncated:
        return "+Z(trunc)"
    return "Z" if group.free_rank == 1 else f"Z^{group.free_rank}"


def expected_omega_table(max_degree=6):
    """Z exactly at the degrees k(n-1) <= max_degree, the truncated sum of Z
    at degree 0 for the circle."""
    rows = {1: ["+Z(trunc)"] + ["0"] * max_degree}
    for n in range(2, 6):
        rows[n] = ["Z" if k % (n - 1) == 0 else "0" for k in range(max_degree + 1)]
    return rows


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def criterion_1_table(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    got = ctx.omega_table()
    want = expected_omega_table()
    ok = got == want
    detail = "; ".join(
        f"Omega(S^{n}): {' '.join(got[n])}" for n in sorted(got)
    )
    if not ok:
        detail += " | expected: " + "; ".join(
            f"Omega(S^{n}): {' '.join(want[n])}" for n in sorted(want)
        )
    return CriterionResult(1, "homology table of Omega(S^n), n=1..5, degrees 0..6",
                           ok, detail, time.time() - t0)


def criterion_2_index_theorem(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    bad = []
    for n in (2, 3, 4):
        model = ctx.sphere(n)
        p, q = ctx.endpoints(n)
        for k in range(5):
            geo = solve_bvp(model, p, q, k)
            want = k * (n - 1)
            conj = morse_index(model, geo)
            spec = hessian_spectrum_index(model, geo, 32 if want <= 12 else 64)
            if not (conj == spec == want):
                bad.append((n, k, conj, spec, want))
    ok = not bad
    detail = "all k(n-1) matched" if ok else f"mismatches: {bad}"
    return CriterionResult(2, "conjugate-point and Hessian index equal k(n-1)",
                           ok, detail, time.time() - t0)


def criterion_3_conjugate_location(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    s2 = ctx.sphere(2)
    path = integrate_geodesic(s2, *_pv(2), 1.25 * np.pi)
    pts2 = detect_conjugate_points(integrate_jacobi(s2, path))
    ok2 = len(pts2) == 1 and abs(pts2[0][0] - np.pi) < 1e-4 and pts2[0][1] == 1
    s3 = ctx.sphere(3)
    path3 = integrate_geodesic(s3, *_pv(3), 1.25 * np.pi)
    pts3 = detect_conjugate_points(integrate_jacobi(s3, path3))
    ok3 = len(pts3) == 1 and pts3[0][1] == 2
    detail = (
        f"S^2 zero at {pts2[0][0]:.8f} mult {pts2[0][1]}; "
        f"S^3 mult {pts3[0][1] if pts3 else 'none'}"
    )
    return CriterionResult(3, "first Jacobi zero at arc length pi, multiplicity n-1",
                           ok2 and ok3, detail, time.time() - t0)


def _pv(n):
    p = np.zeros(n + 1)
    p[0] = 1.0
    v = np.zeros(n + 1)
    v[1] = 1.0
    return p, v


def criterion_4_signed_count(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    results = []
    mc = ctx.count(2, 1)
    results.append(("eps", mc))
    results.append(("eps/2", ctx.count(2, 1, epsilon=ctx.epsilon / 2)))
    fine = VerificationContext(lam=128, epsilon=ctx.epsilon)
    results.append(("lam=128", fine.count(2, 1)))
    ok = True
    parts = []
    for tag, m in results:
        good = (
            len(m.trajectories) == 2
            and sorted(t.sign for t in m.trajectories) == [-1, 1]
            and m.n_count == 0
        )
        ok &= good
        parts.append(f"{tag}: {len(m.trajectories)} trajectories, n={m.n_count}")
    return CriterionResult(4, "two opposite-sign trajectories gamma_1 -> gamma_0, stable",
                           ok, "; ".join(parts), time.time() - t0)


def criterion_5_energy_identity(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    mc = ctx.count(2, 1)
    crits = ctx.criticals(2, 1)
    drop = 2.0 * (crits[1].action - crits[0].action)
    errs = [abs(t.phi - drop) / drop for t in mc.trajectories]
    ok = len(errs) == 2 and all(e < 0.01 for e in errs)
    ok &= abs(drop - 2 * np.pi) < 1e-9
    detail = f"2 dS = {drop:.9f}, relative errors {['%.4f' % e for e in errs]}"
    return CriterionResult(5, "flow energy equals 2(S1 - S0) = 2 pi within 1%",
                           ok, detail, time.time() - t0)


def criterion_6_actions(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    crits = ctx.criticals(2, 3)
    theta = np.pi / 2
    errs = []
    for k, c in enumerate(crits):
        want = great_circle_length(k, theta)
        errs.append(abs(c.action - want) / want)
    ok = all(e < 1e-6 for e in errs)
    detail = f"relative errors {['%.2e' % e for e in errs]}"
    return CriterionResult(6, "gamma_0..gamma_3 actions match the closed form",
                           ok, detail, time.time() - t0)


def criterion_7_gradient_fd(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    s2 = ctx.sphere(2)
    flat = ChartModel.euclidean(2, free_system())
    for trial in range(100):
        if trial % 2 == 0:
            model = s2
            base = solve_bvp(model, *ctx.endpoints(2), 0)
            broken = BrokenPath.from_geodesic(model, base, 16)
            wig = rng.standard_normal(broken.nodes.shape)
            wig[0] = wig[-1] = 0.0
            path = broken.displaced(model, wig, 0.06)
        else:
            model = flat
            xs = np.linspace(0.0, 3.0, 17)
            nodes = np.stack([xs, 0.5 * rng.standard_normal(17)], axis=1)
            path = BrokenPath.from_nodes(nodes)
        grad = action_gradient(model, path)
        w = rng.standard_normal(path.nodes.shape)
        w = np.stack([model.tangent_project(x, v) for x, v in zip(path.nodes, w)])
        w[0] = w[-1] = 0.0
        eps = 1e-6
        sp = broken_action(model, path.displaced(model, w, eps))
        sm = broken_action(model, path.displaced(model, w, -eps))
        fd = (sp - sm) / (2 * eps)
        lam = path.segments
        factor = model.factor if model.kind == "sphere" else 1.0
        pairing = (factor / lam) * float(np.sum(grad * w))
        rel = abs(pairing - fd) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
        checked += 1
    ok = worst < 1e-4
    return CriterionResult(7, "action gradient matches centered differences on 100 paths",
                           ok, f"worst relative error {worst:.2e} over {checked}",
                           time.time() - t0)


def criterion_8_algebra(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    problems = []
    # d o d = 0 on the assembled sphere complexes (checked at assembly; it
    # raises otherwise), plus SNF against the minor-gcd oracle
    rng = np.random.default_rng(99)
    for _ in range(20):
        mat = rng.integers(-9, 10, size=(5, 5)).tolist()
        got_f, got_r = smith_normal_form(mat)
        want_f, want_r = _snf_minor_oracle(mat)
        if got_r != want_r or [abs(v) for v in got_f] != want_f:
            problems.append(("snf", mat))
    # orientation flip invariance of homology
    crits = ctx.criticals(2, 1)
    base = ctx.count(2, 1)
    crits[1].orientation = -1
    try:
        flipped = count_trajectories(ctx.sphere(2), crits[1], crits[0], crits,
                                     epsilon=ctx.epsilon)
    finally:
        crits[1].orientation = 1
    cx_a = assemble_complex(crits, [base], max_winding=1)
    cx_b = assemble_complex(crits, [flipped], max_winding=1)
    ha = [str(g) for g in homology(cx_a, max_degree=1)]
    hb = [str(g) for g in homology(cx_b, max_degree=1)]
    if ha != hb:
        problems.append(("orientation", ha, hb))
    if sorted(t.sign for t in flipped.trajectories) != [-1, 1]:
        problems.append(("flip signs", [t.sign for t in flipped.trajectories]))
    ok = not problems
    detail = "snf oracle, d o d, orientation flip all consistent" if ok else str(problems)
    return CriterionResult(8, "boundary squares to zero; SNF matches oracle; flip invariance",
                           ok, detail, time.time() - t0)


def _snf_minor_oracle(mat):
    m, n = len(mat), len(mat[0])
    factors, rank, d_prev = [], 0, 1
    for k in range(1, min(m, n) + 1):
        g = 0
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                sub = [[mat[r][c] for c in cols] for r in rows]
                g = math.gcd(g, abs(_det(sub)))
        if g == 0:
            break
        factors.append(g // d_prev)
        d_prev = g
        rank = k
    return factors, rank


def _det(mat):
    n = len(mat)
    if n == 1:
        return mat[0][0]
    return sum(
        (-1) ** j * mat[0][j] * _det([row[:j] + row[j + 1:] for row in mat[1:]])
        for j in range(n)
        if mat[0][j]
    )


def criterion_9_monotonicity(ctx: VerificationContext) -> CriterionResult:
    t0 = time.time()
    s2 = ctx.sphere(2)
    crits = ctx.criticals(2, 3)
    rng = np.random.default_rng(7)
    bad = []
    for trial in range(50):
        k = int(rng.integers(0, 4))
        base = crits[k].broken
        w = rng.standard_normal(base.nodes.shape)
        w = np.stack([s2.tangent_project(x, v) for x, v in zip(base.nodes, w)])
        w[0] = w[-1] = 0.0
        w /= np.max(np.abs(w))
        seed = perturbed_seed(s2, base, w, 0.05)
        try:
            traj = run_flow(s2, seed, crits)
        except Exception as exc:  # any escape is a failure of the criterion
            bad.append((trial, repr(exc)))
            continue
        slack = 1e-12 * max(1.0, traj.actions[0])
        if np.any(np.diff(traj.actions) > slack):
            bad.append((trial, "action increased"))
        if traj.limit_plus is None:
            bad.append((trial, "unclassified"))
    ok = not bad
    detail = "50 random seeds monotone and classified" if ok else str(bad[:4])
    return CriterionResult(9, "monotone descent and classified limits on 50 random seeds",
                           ok, detail, time.time() - t0)


CRITERIA: List[Callable[[VerificationContext], CriterionResult]] = [
    criterion_1_table,
    criterion_2_index_theorem,
    criterion_3_conjugate_location,
    criterion_4_signed_count,
    criterion_5_energy_identity,
    criterion_6_actions,
    criterion_7_gradient_fd,
    criterion_8_algebra,
    criterion_9_monotonicity,
]


def run_criteria(numbers=None, ctx=None, echo=print):
    """Run the selected acceptance criteria (all by default), echoing one
    pass/fail line each; returns the result list."""
    ctx = ctx or VerificationContext()
    selected = set(numbers) if numbers else set(range(1, len(CRITERIA) + 1))
    results = []
    for i, fn in enumerate(CRITERIA, start=1):
        if i not in selected:
            continue
        try:
            res = fn(ctx)
        except Exception as exc:
            res = CriterionResult(i, fn.__name__, False, f"raised {exc!r}")
        results.append(res)
        if echo:
            echo(res.line())
    return results
