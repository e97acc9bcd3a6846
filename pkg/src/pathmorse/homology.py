"""Critical geodesics, signed trajectory counts, and the Morse complex.

The chain groups are generated by the critical geodesics of the action,
graded by Morse index; the boundary map sends an index-k generator to the
signed count n(source, target) of unparametrized flow trajectories into each
index-(k-1) generator.  Homology is cut out of the integer boundary matrices
by Smith normal form.

Counting is numerical: seeds on the unit sphere of the source's unstable
eigenbasis are flowed down; a trajectory into the target is recognized
either by direct convergence (index-1 sources: the two exits along the
oriented unstable direction) or, for higher sources, by a close pass at the
target saddle located by bisecting seed directions whose flows descend into
the minimum on opposite sides.  Distinct unparametrized trajectories are
separated by comparing node positions at matched action levels, which
quotients out the time translation.  Located trajectories must satisfy the
flow-energy identity (the energy equals twice the action drop) before they
are counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AntipodalEndpoints,
    BoundaryNotSquareZero,
    IndexGapNotOne,
    Unsupported,
    UnresolvedBasin,
)
from .geodesics import GeodesicPath, solve_bvp
from .jacobi import hessian_spectrum, integrate_jacobi, morse_index
from .pathspace import (
    GRAD_TOL,
    STATUS_BUDGET,
    STATUS_CONVERGED,
    STATUS_RUNNING,
    STATUS_STALLED,
    STATUS_STOPPED,
    BatchGradientFlow,
    BrokenPath,
    distance_to_path,
    perturbed_seed,
)

# Seeds per scanned great circle of the unstable sphere.
CIRCLE_SEEDS = 16
# A probe "passes" a saddle when its gradient norm dips below this while its
# action sits inside the saddle's action window.  Non-passing transits keep
# gradients two orders of magnitude above this; passes at seed radius eps dip
# to the scale of the seed's transverse offset.
PASS_GRAD = 5e-2
# Side classification happens once the probe is deep in the minimum's basin.
SIDE_GRAD = 5e-2
# Unparametrized trajectories closer than this at matched action levels are
# the same point of the moduli space.
CLUSTER_TOL = 1e-3
# Relative tolerance on the energy identity for listed trajectories.
ENERGY_IDENTITY_RTOL = 2e-2
# Loose line search for scouting probes; finals rerun with the tight default.
PROBE_ARMIJO = 0.6
PROBE_BUDGET = 1_000_000


@dataclass
class CriticalGeodesic:
    """A critical point of the action with its spectral data."""

    label: str
    geodesic: GeodesicPath
    index: int
    action: float
    winding: Optional[int] = None
    broken: Optional[BrokenPath] = None
    unstable_basis: Optional[np.ndarray] = None   # (index, lam+1, d)
    slow_stable_field: Optional[np.ndarray] = None
    orientation: int = 1

    def seed_from_coefficients(self, model, coeffs, eps):
        """Broken-path seed displaced by eps along a unit combination of the
        oriented unstable basis."""
        coeffs = np.asarray(coeffs, dtype=float)
        coeffs = coeffs / np.linalg.norm(coeffs)
        direction = np.einsum("k,kjd->jd", coeffs, self.unstable_basis)
        return perturbed_seed(model, self.broken, direction, eps * self.orientation)


@dataclass
class TrajectoryRecord:
    """One unparametrized trajectory of the moduli space."""

    seed_coefficients: Tuple[float, ...]
    epsilon: float
    sign: int
    phi: float
    arrival: str                     # "direct" or "close-pass"
    levels: np.ndarray = None        # fingerprint action levels
    level_nodes: np.ndarray = None   # node states at those levels


@dataclass
class ModuliCount:
    source: CriticalGeodesic
    target: CriticalGeodesic
    trajectories: List[TrajectoryRecord]
    n_count: int
    mod2_count: int


@dataclass
class ChainComplexData:
    generators_by_index: Dict[int, List]
    boundary_matrices: Dict[int, List[List[int]]]
    max_winding: int
    max_index: int

    def generator_labels(self, k):
        return [getattr(g, "label", str(g)) for g in self.generators_by_index.get(k, [])]


@dataclass
class HomologyGroup:
    degree: int
    free_rank: int
    torsion: List[int]
    truncated: bool = False

    def __str__(self):
        parts = ["Z"] * self.free_rank + [f"Z/{d}" for d in self.torsion]
        body = " + ".join(parts) if parts else "0"
        return body + (" (truncated)" if self.truncated else "")


# ---------------------------------------------------------------------------
# critical point enumeration
# ---------------------------------------------------------------------------

def enumerate_critical_points(model, p, q, max_winding, *, lam=64,
                              hessian_segments=None) -> List[CriticalGeodesic]:
    """Critical geodesics gamma_0 ... gamma_W between p and q, with indices
    verified against both the conjugate-point count and the Hessian spectrum,
    sorted by action."""
    if model.kind != "sphere" and max_winding > 0:
        raise Unsupported("winding families beyond 0 require the sphere model")
    out = []
    for k in range(max_winding + 1):
        geo = solve_bvp(model, p, q, k)
        idx_conj = morse_index(model, geo)
        lam_k = max(lam, 8 * int(math.ceil(geo.action / (np.pi * math.sqrt(_factor(model))))))
        hseg = hessian_segments if hessian_segments is not None else lam_k
        eigvals, fields, nodes = hessian_spectrum(model, geo, hseg)
        scale = max(1.0, float(np.max(np.abs(eigvals))))
        neg = int(np.sum(eigvals < -1e-9 * scale))
        if neg != idx_conj:
            raise ArithmeticError(
                f"index mismatch for winding {k}: conjugate count {idx_conj}, "
                f"Hessian count {neg}"
            )
        crit = CriticalGeodesic(
            label=f"k{k}",
            geodesic=geo,
            index=idx_conj,
            action=float(geo.action),
            winding=k,
            broken=BrokenPath.from_nodes(nodes),
            unstable_basis=fields[:neg].copy() if neg else np.zeros((0, hseg + 1, nodes.shape[1])),
            slow_stable_field=fields[neg].copy(),
        )
        out.append(crit)
    out.sort(key=lambda c: c.action)
    return out


def _factor(model):
    return model.factor if model.kind == "sphere" else 1.0


# ---------------------------------------------------------------------------
# probe monitor: early stopping with pass and basin-side classification
# ---------------------------------------------------------------------------

class _ProbeMonitor:
    """Stops probe flows as soon as their fate is known.

    outcome[i] is one of
      ("pass", label)  -- gradient dipped under PASS_GRAD inside the action
                          window of the saddle ``label``;
      ("side", label, sigma) -- settled into the basin bottom of the minimum
                          ``label``, approaching from side sigma.
    """

    def __init__(self, model, critical_set, minimum: CriticalGeodesic,
                 pass_targets: Sequence[CriticalGeodesic]):
        self.model = model
        self.minimum = minimum
        self.pass_targets = list(pass_targets)
        actions = sorted(c.action for c in critical_set)
        gaps = [b - a for a, b in zip(actions, actions[1:])] or [1.0]
        self.window = 0.45 * min(gaps)
        self.outcome = {}
        self.best = {}

    def __call__(self, flow, accepted):
        idx = np.nonzero(accepted)[0]
        if len(idx) == 0:
            return
        g = np.sqrt(flow.gnorm2[idx])
        s = flow.action[idx]
        for tgt in self.pass_targets:
            near = (np.abs(s - tgt.action) < self.window) & (g < PASS_GRAD)
            for j in np.nonzero(near)[0]:
                b = int(idx[j])
                prev = self.best.get(b)
                if prev is None or g[j] < prev[0]:
                    self.best[b] = (float(g[j]), flow.nodes[b].copy(),
                                    float(flow.phi[b]), tgt.label)
                # keep refining while the gradient still drops; stop once the
                # dip bottomed out (gradient rising again past twice the best)
                if prev is not None and g[j] > 2.0 * prev[0]:
                    self.outcome[b] = ("pass", prev[3])
                    flow.status[b] = STATUS_STOPPED
        bottom = (np.abs(s - self.minimum.action) < self.window) & (g < SIDE_GRAD)
        for j in np.nonzero(bottom)[0]:
            b = int(idx[j])
            if b in self.outcome or flow.status[b] != STATUS_RUNNING:
                continue
            if b in self.best:
                # passed the target earlier and moved on: record the pass
                self.outcome[b] = ("pass", self.best[b][3])
                flow.status[b] = STATUS_STOPPED
                continue
            side = self._side(flow.nodes[b])
            self.outcome[b] = ("side", self.minimum.label, side)
            flow.status[b] = STATUS_STOPPED

    def _side(self, nodes):
        """Slow-mode approach side at the minimum: +1/-1, or 0 when the
        projection is marginal (symmetric channels flow in with essentially
        no slow component; their sign would be noise)."""
        ref = self.minimum.broken.nodes
        if self.model.kind == "sphere":
            diff = np.stack(
                [self.model.log(ref[i], nodes[i]) for i in range(1, len(ref) - 1)]
            )
        else:
            diff = nodes[1:-1] - ref[1:-1]
        slow = self.minimum.slow_stable_field[1:-1]
        num = float(np.sum(diff * slow))
        den = float(np.linalg.norm(diff) * np.linalg.norm(slow))
        if den == 0.0 or abs(num) < 0.2 * den:
            return 0
        return 1 if num > 0.0 else -1


def _run_probes(model, source, coeff_list, eps, critical_set, minimum, targets,
                budget=PROBE_BUDGET):
    """Flow a batch of unstable-sphere seeds until pass/side classification."""
    seeds = np.stack(
        [source.seed_from_coefficients(model, c, eps).nodes for c in coeff_list]
    )
    monitor = _ProbeMonitor(model, critical_set, minimum, targets)
    flow = BatchGradientFlow(
        model, seeds, monitor=monitor, armijo=PROBE_ARMIJO, budget=budget,
        grad_tol=GRAD_TOL,
    )
    flow.run()
    outcomes = []
    for b in range(len(coeff_list)):
        out = monitor.outcome.get(b)
        if out is None and flow.status[b] in (STATUS_CONVERGED, STATUS_STALLED):
            if b in monitor.best:
                # settled onto the target saddle itself (a bisection limit)
                out = ("pass", monitor.best[b][3])
            elif flow.gnorm2[b] < (1e-6) ** 2:
                side = monitor._side(flow.nodes[b])
                out = ("side", minimum.label, side)
        outcomes.append(out)
    return outcomes, monitor, flow


# ---------------------------------------------------------------------------
# trajectory counting
# ---------------------------------------------------------------------------

def count_trajectories(model, source: CriticalGeodesic, target: CriticalGeodesic,
                       critical_set: Sequence[CriticalGeodesic], *,
                       epsilon=0.01) -> ModuliCount:
    """Signed count n(source, target) over the unparametrized trajectories.

    The index gap must be 1.  Index-1 sources are handled by flowing the two
    exits along the oriented unstable direction; higher sources scan great
    circles of the unstable sphere and bisect between seeds whose descents
    reach the minimum from opposite sides, which brackets crossings of the
    target's stable manifold.  Each candidate is validated by the energy
    identity and clustered at matched action levels.
    """
    gap = source.index - target.index
    if gap != 1:
        raise IndexGapNotOne(f"index gap is {gap}, not 1")
    k = source.index
    minimum = min(critical_set, key=lambda c: c.action)

    found = []
    # watch every saddle except the source (seeds start inside the source's
    # own action window with a small gradient)
    saddles = [c for c in critical_set if c.index > 0 and c.label != source.label]
    if k == 1:
        for alpha in (1.0, -1.0):
            rec = _finalize_direct(model, source, target, critical_set, (alpha,), epsilon)
            if rec is not None:
                found.append(rec)
    else:
        coeffs = _bisect_circles(model, source, target, critical_set, minimum,
                                 saddles, epsilon)
        for alpha in coeffs:
            rec = _finalize_close_pass(model, source, target, critical_set,
                                       minimum, alpha, epsilon)
            if rec is not None:
                found.append(rec)

    clusters = _cluster(model, found)
    for rec in clusters:
        rec.sign = _sign_of(rec.seed_coefficients, source, target)
    n = int(sum(r.sign for r in clusters))
    return ModuliCount(
        source=source, target=target, trajectories=clusters,
        n_count=n, mod2_count=len(clusters) % 2,
    )


def _finalize_direct(model, source, target, critical_set, alpha, epsilon):
    """Full-tolerance run for an index-1 exit; returns a record when the limit
    is the requested target."""
    seed = source.seed_from_coefficients(model, alpha, epsilon)
    flow = BatchGradientFlow(model, seed.nodes[None], record=True, record_cap=8192)
    flow.run()
    if flow.status[0] == STATUS_STALLED and flow.gnorm2[0] < (1e-7) ** 2:
        pass
    elif flow.status[0] != STATUS_CONVERGED:
        raise UnresolvedBasin(
            f"seed {alpha} from {source.label} did not converge", seeds=[alpha]
        )
    if distance_to_path(model, flow.nodes[0], target.geodesic) > 0.1:
        return None
    if abs(flow.action[0] - target.action) > 0.1:
        return None
    phi = float(flow.phi[0])
    drop = 2.0 * (source.action - target.action)
    if abs(phi - drop) / drop > ENERGY_IDENTITY_RTOL:
        raise ArithmeticError(
            f"energy identity violated for {source.label}->{target.label}: "
            f"phi={phi:.6f}, 2 dS={drop:.6f}"
        )
    levels, level_nodes = _action_level_states(
        model, flow.trace[0], source.action, target.action
    )
    return TrajectoryRecord(
        seed_coefficients=tuple(alpha), epsilon=epsilon, sign=0, phi=phi,
        arrival="direct", levels=levels, level_nodes=level_nodes,
    )


def _bisect_circles(model, source, target, critical_set, minimum, saddles, epsilon):
    """Scan coordinate great circles of the unstable sphere; bisect every
    adjacent pair of seeds with different outcomes until the flow passes the
    target saddle.  Returns the located seed coefficient vectors.

    Every circle pairs one direction with the slowest unstable mode, along
    which connections to the next-lower saddle leave; all circles of the
    sphere are flowed as a single batch, and any saddle pass classifies a
    probe."""
    k = source.index
    angles = np.linspace(0.0, 2 * np.pi, CIRCLE_SEEDS, endpoint=False)
    j = k - 1
    coeffs = []
    for i in range(k - 1):
        for a in angles:
            c = np.zeros(k)
            c[i] = np.cos(a)
            c[j] = np.sin(a)
            coeffs.append(c)
    outcomes, monitor, flow = _run_probes(
        model, source, coeffs, epsilon, critical_set, minimum, saddles
    )
    if any(o is None for o in outcomes):
        bad = [coeffs[s] for s, o in enumerate(outcomes) if o is None]
        raise UnresolvedBasin("unclassified probe seeds", seeds=bad)
    finds = []
    for i in range(k - 1):
        base = i * CIRCLE_SEEDS
        circle = outcomes[base:base + CIRCLE_SEEDS]
        for s, o in enumerate(circle):
            if o[0] == "pass" and o[1] == target.label:
                finds.append((i, float(angles[s])))
        for s in range(CIRCLE_SEEDS):
            o1 = circle[s]
            o2 = circle[(s + 1) % CIRCLE_SEEDS]
            if o1[0] == "pass" or o2[0] == "pass":
                continue  # the pass itself is already recorded
            if _compatible(o1, o2):
                continue
            a_lo, a_hi = angles[s], angles[s] + 2 * np.pi / CIRCLE_SEEDS
            hit = _bisect_bracket(
                model, source, target, critical_set, minimum, saddles, epsilon,
                i, j, a_lo, o1, a_hi, o2,
            )
            if hit is not None:
                finds.append((i, hit))
    out = []
    for i, a in finds:
        c = np.zeros(k)
        c[i] = np.cos(a)
        c[j] = np.sin(a)
        out.append(c)
    return out


def _compatible(o1, o2):
    """Outcomes that do not bracket a stable-manifold crossing: identical,
    or separated only by a marginal (sigma = 0) side reading."""
    if o1 == o2:
        return True
    if o1[0] == "side" and o2[0] == "side" and o1[1] == o2[1]:
        return o1[2] == 0 or o2[2] == 0
    return False


def _bisect_bracket(model, source, target, critical_set, minimum, saddles, epsilon,
                    i, j, a_lo, o_lo, a_hi, o_hi, max_rounds=16):
    # a transverse crossing of the target's stable manifold produces a close
    # pass well before the bracket width is resolved to ~1e-5 radians; a
    # bracket that never passes is a symmetry artifact and is dropped
    k = source.index
    for _ in range(max_rounds):
        mid = 0.5 * (a_lo + a_hi)
        c = np.zeros(k)
        c[i] = np.cos(mid)
        c[j] = np.sin(mid)
        outcomes, _, _ = _run_probes(
            model, source, [c], epsilon, critical_set, minimum, saddles
        )
        o_mid = outcomes[0]
        if o_mid is None:
            return None
        if o_mid[0] == "pass" and o_mid[1] == target.label:
            return mid
        if o_mid[0] == "pass":
            return None  # crossing a different saddle's stable manifold
        if _compatible(o_mid, o_lo):
            a_lo = mid
        elif _compatible(o_mid, o_hi):
            a_hi = mid
        else:
            return None
        if a_hi - a_lo < 1e-12:
            return None
    return None


def _finalize_close_pass(model, source, target, critical_set, minimum, alpha, epsilon):
    """Re-run one located seed with recording; cut the trajectory at its
    closest approach to the target and validate the energy identity there."""
    seed = source.seed_from_coefficients(model, alpha, epsilon)
    monitor = _ProbeMonitor(model, critical_set, minimum, [target])
    flow = BatchGradientFlow(
        model, seed.nodes[None], monitor=monitor, record=True,
        record_cap=8192, budget=PROBE_BUDGET,
    )
    flow.run()
    best = monitor.best.get(0)
    if best is None:
        return None
    grad_at_pass, nodes_at_pass, phi_at_pass, label = best
    if label != target.label:
        return None
    if distance_to_path(model, nodes_at_pass, target.geodesic) > 0.1:
        return None
    drop = 2.0 * (source.action - target.action)
    if abs(phi_at_pass - drop) / drop > ENERGY_IDENTITY_RTOL:
        return None
    levels, level_nodes = _action_level_states(
        model, flow.trace[0], source.action, target.action
    )
    return TrajectoryRecord(
        seed_coefficients=tuple(np.asarray(alpha, dtype=float)), epsilon=epsilon,
        sign=0, phi=float(phi_at_pass), arrival="close-pass",
        levels=levels, level_nodes=level_nodes,
    )


def _action_level_states(model, trace, s_source, s_target, n_levels=5):
    """Node states interpolated at evenly spaced action levels between the
    endpoints: the time-translation-free fingerprint of a trajectory."""
    snaps = trace["snap"]
    actions = np.array([float(_broken_action_of(model, s)) for s in snaps])
    levels = s_target + (s_source - s_target) * np.linspace(1, n_levels, n_levels) / (n_levels + 1)
    states = []
    for lev in levels:
        jafter = int(np.searchsorted(-actions, -lev))  # actions decrease
        jafter = min(max(jafter, 1), len(snaps) - 1)
        jbefore = jafter - 1
        s0, s1 = actions[jbefore], actions[jafter]
        w = 0.0 if s0 == s1 else (s0 - lev) / (s0 - s1)
        w = min(max(w, 0.0), 1.0)
        nodes = (1 - w) * snaps[jbefore] + w * snaps[jafter]
        if model.kind == "sphere":
            nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
        states.append(nodes)
    return levels, np.stack(states)


def _broken_action_of(model, nodes):
    from .pathspace import _batch_action

    return _batch_action(model, nodes[None])[0]


def _cluster(model, records):
    """Merge records that are the same unparametrized trajectory: node
    distance at matched action levels below CLUSTER_TOL."""
    reps = []
    for rec in records:
        matched = False
        for rep in reps:
            if rec.levels is None or rep.levels is None:
                continue
            d = 0.0
            for a, b in zip(rec.level_nodes, rep.level_nodes):
                if model.kind == "sphere":
                    dots = np.clip(np.sum(a * b, axis=1), -1.0, 1.0)
                    d = max(d, float(np.max(np.arccos(dots))))
                else:
                    d = max(d, float(np.max(np.linalg.norm(a - b, axis=1))))
            if d < CLUSTER_TOL:
                matched = True
                break
        if not matched:
            reps.append(rec)
    return reps


def _sign_of(coeffs, source, target):
    """Orientation rule: the product of the endpoint orientations and the
    sign of the seed's last nonvanishing coefficient in the oriented unstable
    basis.  For an index-1 source this is the +1/-1 assignment to the two
    exits along the oriented unstable direction."""
    for c in reversed(tuple(coeffs)):
        if abs(c) > 1e-6:
            return int(np.sign(c)) * source.orientation * target.orientation
    return source.orientation * target.orientation


# ---------------------------------------------------------------------------
# chain complex and homology
# ---------------------------------------------------------------------------

def assemble_complex(criticals: Sequence[CriticalGeodesic],
                     counts: Sequence[ModuliCount], *, max_winding=None) -> ChainComplexData:
    """Boundary matrices from the signed counts; rejects the assembly unless
    every consecutive composition is exactly zero."""
    by_index: Dict[int, List] = {}
    for c in criticals:
        by_index.setdefault(c.index, []).append(c)
    for k in by_index:
        by_index[k].sort(key=lambda c: c.action)
    count_map = {}
    for mc in counts:
        count_map[(mc.source.label, mc.target.label)] = mc.n_count
    matrices: Dict[int, List[List[int]]] = {}
    for k in sorted(by_index):
        if k - 1 not in by_index:
            continue
        rows = by_index[k - 1]
        cols = by_index[k]
        mat = [[0] * len(cols) for _ in rows]
        for cj, src in enumerate(cols):
            for ri, tgt in enumerate(rows):
                key = (src.label, tgt.label)
                if key not in count_map:
                    raise ValueError(f"missing trajectory count for pair {key}")
                mat[ri][cj] = int(count_map[key])
        matrices[k] = mat
    _check_square_zero(by_index, matrices)
    max_idx = max(by_index) if by_index else 0
    return ChainComplexData(
        generators_by_index=by_index, boundary_matrices=matrices,
        max_winding=max_winding if max_winding is not None else -1,
        max_index=max_idx,
    )


def _check_square_zero(by_index, matrices):
    for k in matrices:
        if k + 1 not in matrices:
            continue
        a = matrices[k]          # C_k -> C_{k-1}
        b = matrices[k + 1]      # C_{k+1} -> C_k
        rows, mid = len(a), len(a[0]) if a else 0
        cols = len(b[0]) if b else 0
        for r in range(rows):
            for c in range(cols):
                val = sum(a[r][m] * b[m][c] for m in range(mid))
                if val != 0:
                    raise BoundaryNotSquareZero(
                        f"(d_{k} o d_{k + 1})[{r}][{c}] = {val}"
                    )


def smith_normal_form(matrix) -> Tuple[List[int], int]:
    """Invariant factors d_1 | d_2 | ... and the rank of an integer matrix.

    Exact arithmetic on Python integers; elementary row and column operations
    with smallest-pivot selection and the usual divisibility fix-up.
    """
    a = [[int(v) for v in row] for row in matrix]
    m = len(a)
    n = len(a[0]) if m else 0
    s = 0
    while s < min(m, n):
        # find the smallest nonzero entry in the remaining block
        piv = None
        best = None
        for i in range(s, m):
            for j in range(s, n):
                v = abs(a[i][j])
                if v and (best is None or v < best):
                    best, piv = v, (i, j)
        if piv is None:
            break
        pi, pj = piv
        a[s], a[pi] = a[pi], a[s]
        for row in a:
            row[s], row[pj] = row[pj], row[s]
        # clear the pivot row and column
        reduced = True
        while reduced:
            reduced = False
            for i in range(s + 1, m):
                if a[i][s]:
                    qv = a[i][s] // a[s][s]
                    for j in range(s, n):
                        a[i][j] -= qv * a[s][j]
                    if a[i][s]:
                        a[s], a[i] = a[i], a[s]
                        reduced = True
            for j in range(s + 1, n):
                if a[s][j]:
                    qv = a[s][j] // a[s][s]
                    for i in range(s, m):
                        a[i][j] -= qv * a[i][s]
                    if a[s][j]:
                        for row in a:
                            row[s], row[j] = row[j], row[s]
                        reduced = True
        # divisibility: the pivot must divide every remaining entry
        fixed = False
        for i in range(s + 1, m):
            for j in range(s + 1, n):
                if a[i][j] % a[s][s]:
                    for jj in range(s, n):
                        a[s][jj] += a[i][jj]
                    fixed = True
                    break
            if fixed:
                break
        if fixed:
            continue
        if a[s][s] < 0:
            for j in range(s, n):
                a[s][j] = -a[s][j]
        s += 1
    factors = [a[i][i] for i in range(s)]
    return factors, s


def homology(complex_data: ChainComplexData, max_degree=None,
             coefficients="Z") -> List[HomologyGroup]:
    """H_k = ker d_k / im d_{k+1} per degree, free rank plus torsion.

    Degrees that additional windings beyond the truncation could still feed
    are flagged ``truncated``.
    """
    by_index = complex_data.generators_by_index
    mats = complex_data.boundary_matrices
    top = max_degree if max_degree is not None else (max(by_index) if by_index else 0)
    out = []
    for k in range(top + 1):
        dim = len(by_index.get(k, []))
        if coefficients == "Z2":
            rank_k = _rank_mod2(mats.get(k)) if dim else 0
            rank_k1 = _rank_mod2(mats.get(k + 1))
            free = dim - rank_k - rank_k1
            tors: List[int] = []
        else:
            _, rank_k = smith_normal_form(mats[k]) if k in mats and dim else ([], 0)
            if k + 1 in mats:
                factors, rank_k1 = smith_normal_form(mats[k + 1])
            else:
                factors, rank_k1 = [], 0
            free = dim - rank_k - rank_k1
            tors = [d for d in factors if abs(d) > 1]
        out.append(HomologyGroup(
            degree=k, free_rank=max(free, 0), torsion=tors,
            truncated=_is_truncated(complex_data, k),
        ))
    return out


def _is_truncated(complex_data, k):
    """Windings beyond the enumeration add generators at index
    (W + j)(n - 1); degree k is clean only when they cannot touch C_k or
    C_{k+1}."""
    if complex_data.max_winding < 0:
        return False
    by_index = complex_data.generators_by_index
    if not by_index:
        return False
    windings = [g.winding for gens in by_index.values() for g in gens
                if getattr(g, "winding", None) is not None]
    if not windings:
        return False
    indices = sorted({g.index for gens in by_index.values() for g in gens})
    if len(indices) >= 2:
        per_winding = indices[1] - indices[0]
    else:
        per_winding = 0
    if per_winding == 0:
        # every winding contributes at index 0 and nowhere else
        return k == 0
    next_index = (complex_data.max_winding + 1) * per_winding
    return next_index <= k + 1


def _rank_mod2(matrix):
    if not matrix or not matrix[0]:
        return 0
    rows = [int("".join(str(abs(v) % 2) for v in row), 2) for row in matrix]
    rank = 0
    for col in range(len(matrix[0])):
        bit = 1 << (len(matrix[0]) - 1 - col)
        piv = next((i for i in range(rank, len(rows)) if rows[i] & bit), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i] & bit:
                rows[i] ^= rows[rank]
        rank += 1
    return rank


# ---------------------------------------------------------------------------
# sphere reference data
# ---------------------------------------------------------------------------

def sphere_reference_complex(n: int) -> ChainComplexData:
    """Morse chain data of the sphere S^n itself (height function): one cell
    in degrees 0 and n, all boundary maps zero; S^0 is two points.  Shipped
    as a documentation fixture exercising the homology plumbing."""

    @dataclass
    class _Gen:
        label: str
        index: int
        winding: None = None

    if n == 0:
        gens = {0: [_Gen("pt+", 0), _Gen("pt-", 0)]}
        mats = {}
    elif n == 1:
        gens = {0: [_Gen("bottom", 0)], 1: [_Gen("top", 1)]}
        # the two half circles from the maximum carry opposite signs
        mats = {1: [[0]]}
    else:
        gens = {0: [_Gen("bottom", 0)], n: [_Gen("top", n)]}
        mats = {}
    return ChainComplexData(
        generators_by_index=gens, boundary_matrices=mats,
        max_winding=-1, max_index=n,
    )


# ---------------------------------------------------------------------------
# whole-space driver
# ---------------------------------------------------------------------------

def build_omega_complex(model, p, q, max_winding, *, lam=64, epsilon=0.01,
                        orientation_flip=None) -> Tuple[ChainComplexData, List[ModuliCount]]:
    """Enumerate critical geodesics up to the winding bound and count every
    index-adjacent pair, returning the assembled chain complex."""
    criticals = enumerate_critical_points(model, p, q, max_winding, lam=lam)
    if orientation_flip:
        for c in criticals:
            if c.label in orientation_flip:
                c.orientation = -1
    counts = []
    for src in criticals:
        for tgt in criticals:
            if src.index - tgt.index == 1:
                counts.append(
                    count_trajectories(model, src, tgt, criticals, epsilon=epsilon)
                )
    cx = assemble_complex(criticals, counts, max_winding=max_winding)
    return cx, counts
