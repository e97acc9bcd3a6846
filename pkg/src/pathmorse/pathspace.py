"""Broken-geodesic model of the path space and its action gradient flow.

A path from p to q is discretized by nodes x_0 = p, x_1, ..., x_lam = q on a
uniform parameter subdivision, each consecutive pair joined by the minimizing
geodesic.  The action of the broken path is the sum of dressed segment
lengths, and its gradient with respect to the node inner product
(u, w) = sum_i dtau g(u_i, w_i) is carried by the corners:

    grad_i = -(vhat_i^- - vhat_i^+) / dtau,

the per-side unit tangents at node i.  For equal segment speeds this is the
-(1/c) Delta v(tau_i) break formula scaled by the node weight.  Descent uses
explicit Euler steps x_i <- exp(-dbeta grad_i) with a backtracking halving
line search, so the action is non-increasing by construction; many seeds are
advanced together as one numpy batch, which is how independent flows run
concurrently here.

The flow energy accumulates the trapezoidal beta-quadrature of
|u|^2 + |grad S|^2 where u is the realized node velocity; along accepted
steps u = -grad exactly, and for a trajectory joining critical paths the
total equals twice the action drop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BudgetExhausted,
    SegmentTooLong,
    StepUnderflow,
    Unclassified,
)
from .geodesics import GeodesicPath, covariant_deriv_field, interpolate_points
from .jacobi import TangentField, apply_sturm_liouville

# Default convergence and stepping constants.
GRAD_TOL = 1e-9
STEP_BUDGET = 10**6
DBETA_NUMERATOR = 0.1        # initial dbeta = 0.1 / lambda
SEGMENT_ANGLE_MARGIN = 0.1   # sphere segments stay below pi - margin
ACTION_SLACK = 1e-14         # roundoff slack in the descent test
# Sufficient-decrease factor: accepted steps must realize this fraction of
# the first-order drop dbeta |grad|^2, which keeps the discrete trajectory
# close to the exact flow where action is being dissipated (the flow-energy
# quadrature inherits its accuracy from this).
ARMIJO_SIGMA = 0.995
BASIN_DISTANCE_CAP = 0.1


@dataclass
class BrokenPath:
    """Nodes of a broken geodesic on a uniform subdivision; endpoints pinned."""

    taus: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.nodes = np.asarray(self.nodes, dtype=float)

    @property
    def segments(self):
        return len(self.taus) - 1

    @property
    def p(self):
        return self.nodes[0]

    @property
    def q(self):
        return self.nodes[-1]

    @classmethod
    def from_nodes(cls, nodes):
        nodes = np.asarray(nodes, dtype=float)
        return cls(taus=np.linspace(0.0, 1.0, len(nodes)), nodes=nodes)

    @classmethod
    def from_geodesic(cls, model, path: GeodesicPath, lam: int):
        taus = np.linspace(0.0, 1.0, lam + 1)
        nodes = interpolate_points(model, path, taus)
        if model.kind == "sphere":
            nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
        return cls(taus=taus, nodes=nodes)

    def displaced(self, model, fields, eps):
        """New path with nodes moved by exp(eps * field); endpoints kept."""
        vals = np.asarray(getattr(fields, "values", fields), dtype=float)
        moved = self.nodes.copy()
        for i in range(1, len(moved) - 1):
            moved[i] = model.exp(self.nodes[i], eps * model.tangent_project(self.nodes[i], vals[i]))
        return BrokenPath(taus=self.taus.copy(), nodes=moved)


@dataclass
class FlowTrajectory:
    """Recorded descent from a seed to its limit critical path."""

    states: List[Tuple[float, BrokenPath]]
    betas: np.ndarray
    actions: np.ndarray
    grad_norms: np.ndarray
    flow_energy: float
    converged: bool
    steps: int
    limit_minus: Optional[str] = None
    limit_plus: Optional[str] = None
    seed_descriptor: dict = dataclass_field(default_factory=dict)
    regrid_flags: Optional[List[bool]] = None


# ---------------------------------------------------------------------------
# batched node algebra (sphere and constant-metric chart fast paths)
# ---------------------------------------------------------------------------

def _is_flat(model):
    return model.kind == "chart" and getattr(model, "constant_metric", False)


def _dressing(model):
    if model.kind == "sphere":
        return model.factor
    return model.system.conformal_factor(np.zeros(model.point_dim))


def _segment_geometry(model, nodes):
    """Per-segment dressed lengths and unit chord tangents for a node batch.

    nodes: (..., m, d).  Returns (lengths, fwd_hat, bwd_hat) where
    fwd_hat[..., i, :] is the unit tangent at node i toward node i+1 and
    bwd_hat[..., i, :] the unit tangent at node i+1 toward node i, in the
    base Euclidean components.
    """
    a = nodes[..., :-1, :]
    b = nodes[..., 1:, :]
    if model.kind == "sphere":
        dots = np.einsum("...id,...id->...i", a, b)
        t_fwd = b - dots[..., None] * a
        t_bwd = a - dots[..., None] * b
        sin = np.linalg.norm(t_fwd, axis=-1)
        theta = np.arctan2(sin, dots)
        safe = np.where(sin > 1e-300, sin, 1.0)[..., None]
        root_f = math.sqrt(model.factor)
        return root_f * theta, t_fwd / safe, t_bwd / safe
    if _is_flat(model):
        diff = b - a
        norm = np.linalg.norm(diff, axis=-1)
        safe = np.where(norm > 1e-300, norm, 1.0)[..., None]
        root_f = math.sqrt(_dressing(model))
        return root_f * norm, diff / safe, -diff / safe
    # generic chart fallback: loop over segments
    flat_nodes = nodes.reshape(-1, nodes.shape[-2], nodes.shape[-1])
    m = nodes.shape[-2]
    lengths = np.empty(flat_nodes.shape[0] * (m - 1))
    fwd = np.empty((flat_nodes.shape[0], m - 1, nodes.shape[-1]))
    bwd = np.empty_like(fwd)
    for bi, chain in enumerate(flat_nodes):
        for i in range(m - 1):
            u = model.log(chain[i], chain[i + 1])
            un = model.norm(chain[i], u)
            lengths[bi * (m - 1) + i] = un
            fwd[bi, i] = u / un
            v = model.log(chain[i + 1], chain[i])
            bwd[bi, i] = v / model.norm(chain[i + 1], v)
    return (
        lengths.reshape(nodes.shape[:-2] + (m - 1,)),
        fwd.reshape(nodes.shape[:-2] + (m - 1, nodes.shape[-1])),
        bwd.reshape(nodes.shape[:-2] + (m - 1, nodes.shape[-1])),
    )


def _batch_action(model, nodes):
    lengths, _, _ = _segment_geometry(model, nodes)
    return np.sum(lengths, axis=-1)


def _validate_segments(model, nodes):
    if model.kind != "sphere":
        return
    a = nodes[..., :-1, :]
    b = nodes[..., 1:, :]
    dots = np.einsum("...id,...id->...i", a, b)
    sin = np.linalg.norm(b - dots[..., None] * a, axis=-1)
    angles = np.arctan2(sin, dots)
    if np.any(angles > np.pi - SEGMENT_ANGLE_MARGIN):
        raise SegmentTooLong(
            f"segment angle {float(np.max(angles)):.3f} exceeds pi - {SEGMENT_ANGLE_MARGIN}"
        )


def _action_and_gradient(model, nodes, with_lengths=False):
    """One geometry pass: broken action, node-inner-product gradient, and the
    squared node norm |grad|^2 = sum_j dtau g(grad_j, grad_j).

    The plain length gradient at node j is -(unit toward next + unit toward
    prev); dividing by the node weight dtau and the metric factor turns the
    covector into the node-inner-product gradient.
    """
    lam = nodes.shape[-2] - 1
    lengths, fwd_hat, bwd_hat = _segment_geometry(model, nodes)
    action = np.sum(lengths, axis=-1)
    f = _dressing(model)
    root_f = math.sqrt(f)
    grad = np.zeros_like(nodes)
    grad[..., 1:-1, :] = -(lam / root_f) * (fwd_hat[..., 1:, :] + bwd_hat[..., :-1, :])
    gnorm2 = (f / lam) * np.einsum("...id,...id->...", grad, grad)
    if with_lengths:
        return action, grad, gnorm2, lengths
    return action, grad, gnorm2


def _batch_gradient(model, nodes):
    _, grad, gnorm2 = _action_and_gradient(model, nodes)
    return grad, gnorm2


def _redistribute(model, nodes):
    """Re-space nodes uniformly along the current polyline.

    The material parametrization of the shortening flow piles nodes up where
    loops collapse; re-gridding onto the same piecewise-geodesic curve keeps
    the unparametrized trajectory intact and, being an inscribed polygon of
    the old one, never increases the action.
    """
    single = nodes.ndim == 2
    if single:
        nodes = nodes[None]
    lengths, _, _ = _segment_geometry(model, nodes)
    bsz, m, d = nodes.shape
    lam = m - 1
    cum = np.concatenate([np.zeros((bsz, 1)), np.cumsum(lengths, axis=1)], axis=1)
    targets = cum[:, -1:] * np.linspace(0.0, 1.0, m)[None, :]
    # segment index per target: count of interior cumulative marks below it
    idx = np.sum(cum[:, 1:-1, None] <= targets[:, None, :], axis=1)
    idx = np.clip(idx, 0, lam - 1)
    rows = np.arange(bsz)[:, None]
    seg_len = np.where(lengths > 1e-300, lengths, 1.0)
    frac = (targets - cum[rows, idx]) / seg_len[rows, idx]
    frac = np.clip(frac, 0.0, 1.0)
    a = nodes[rows, idx]
    b = nodes[rows, idx + 1]
    if model.kind == "sphere":
        dots = np.einsum("bjd,bjd->bj", a, b)
        t = b - dots[..., None] * a
        s = np.linalg.norm(t, axis=-1)
        theta = np.arctan2(s, dots)
        safe = np.where(s > 1e-300, s, 1.0)
        u = (theta / safe)[..., None] * t
        out = _batch_exp(model, a, frac[..., None] * u)
    else:
        out = a + frac[..., None] * (b - a)
    out[:, 0] = nodes[:, 0]
    out[:, -1] = nodes[:, -1]
    return out[0] if single else out


def _batch_exp(model, x, u):
    """Node-wise exponential update, re-projected onto the sphere: radial
    representation error is linearly unstable under the discrete flow and
    must not be allowed to accumulate."""
    if model.kind == "sphere":
        theta = np.linalg.norm(u, axis=-1, keepdims=True)
        out = np.cos(theta) * x + np.sinc(theta / np.pi) * u
        return out / np.linalg.norm(out, axis=-1, keepdims=True)
    return x + u


def action_gradient(model, path: BrokenPath):
    """Gradient of the discretized action over interior nodes.

    Matches centered finite differences of the broken action; for a broken
    geodesic the value is concentrated at corners as the scaled velocity-jump
    -(Delta vhat) / dtau projected to the node tangent space.
    """
    _validate_segments(model, path.nodes[None])
    grad, _ = _batch_gradient(model, path.nodes[None])
    return grad[0]


def gradient_node_norm(model, path: BrokenPath) -> float:
    _, gnorm2 = _batch_gradient(model, path.nodes[None])
    return float(np.sqrt(gnorm2[0]))


def broken_action(model, path: BrokenPath) -> float:
    return float(_batch_action(model, path.nodes[None])[0])


def flow_step(model, path: BrokenPath, dbeta: float) -> BrokenPath:
    """One explicit negative-gradient step with backtracking.

    The step size is halved until the action does not increase beyond the
    roundoff slack; endpoints never move.  Raises StepUnderflow when no
    representable step achieves that.
    """
    if not dbeta > 0.0:
        raise ValueError("dbeta must be positive")
    _validate_segments(model, path.nodes[None])
    grad, _ = _batch_gradient(model, path.nodes[None])
    grad = grad[0]
    s_old = broken_action(model, path)
    slack = ACTION_SLACK * max(1.0, abs(s_old))
    db = float(dbeta)
    for _ in range(80):
        trial = path.nodes.copy()
        trial[1:-1] = _batch_exp(model, path.nodes[1:-1], -db * grad[1:-1])
        s_new = float(_batch_action(model, trial[None])[0])
        if s_new <= s_old + slack:
            return BrokenPath(taus=path.taus.copy(), nodes=trial)
        db *= 0.5
    raise StepUnderflow("no step size decreases the action; the path is critical")


# ---------------------------------------------------------------------------
# batched flow engine
# ---------------------------------------------------------------------------

STATUS_RUNNING = 0
STATUS_CONVERGED = 1
STATUS_BUDGET = 2
STATUS_STALLED = 3
STATUS_STOPPED = 4   # a monitor requested the stop


class BatchGradientFlow:
    """Advance a batch of broken paths by monotone gradient descent.

    The line search accepts a step when it achieves the Armijo decrease
    S_new <= S_old - 0.5 dbeta |grad|^2 (plus roundoff slack); once the
    expected decrease sinks to the roundoff floor the action test is blind
    to instability, so there acceptance additionally requires the gradient
    norm not to grow.  Each seed carries its own step size, budget and
    energy accumulator; a ``monitor(flow, accepted_mask)`` hook runs after
    every round and may stop seeds by setting entries of ``flow.status``.
    """

    def __init__(self, model, nodes, *, dbeta0=None, grad_tol=GRAD_TOL,
                 budget=STEP_BUDGET, record=False, monitor=None,
                 record_cap=2048, armijo=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 2:
            nodes = nodes[None]
        _validate_segments(model, nodes)
        self.model = model
        self.nodes = nodes.copy()
        self.batch, self.m, self.d = nodes.shape
        self.lam = self.m - 1
        self.dbeta0 = float(dbeta0) if dbeta0 else DBETA_NUMERATOR / self.lam
        self.grad_tol = float(grad_tol)
        self.budget = int(budget)
        self.monitor = monitor
        self.armijo = ARMIJO_SIGMA if armijo is None else float(armijo)
        self.beta = np.zeros(self.batch)
        self.phi = np.zeros(self.batch)
        self.steps = np.zeros(self.batch, dtype=np.int64)
        self.status = np.full(self.batch, STATUS_RUNNING, dtype=np.int8)
        self.dbeta = np.full(self.batch, self.dbeta0)
        self.action, self.grad, self.gnorm2 = _action_and_gradient(model, self.nodes)
        self.record = record
        self.record_cap = int(record_cap)
        self._regrid_pending = np.zeros(self.batch, dtype=bool)
        if record:
            self.trace = [
                {"beta": [0.0], "action": [float(self.action[b])],
                 "grad": [float(np.sqrt(self.gnorm2[b]))],
                 "snap_beta": [0.0], "snap": [self.nodes[b].copy()],
                 "snap_phi": [0.0], "snap_grad": [float(np.sqrt(self.gnorm2[b]))],
                 "snap_regrid": [False]}
                for b in range(self.batch)
            ]

    # -- stepping ------------------------------------------------------------

    def active_mask(self):
        return self.status == STATUS_RUNNING

    def run(self, max_rounds=None):
        rounds = 0
        while np.any(self.active_mask()):
            self._step()
            rounds += 1
            if max_rounds is not None and rounds >= max_rounds:
                break
        return self

    def _step(self):
        act = self.active_mask()
        if not np.any(act):
            return
        idx = np.nonzero(act)[0]

        # converged already?
        done = self.gnorm2[idx] <= self.grad_tol**2
        if np.any(done):
            self.status[idx[done]] = STATUS_CONVERGED
            idx = idx[~done]
            if len(idx) == 0:
                return

        nodes = self.nodes[idx]
        grad = self.grad[idx]
        g2 = self.gnorm2[idx]
        s_old = self.action[idx]
        db = np.minimum(self.dbeta0, 1.4 * self.dbeta[idx])
        slack = ACTION_SLACK * np.maximum(1.0, np.abs(s_old))

        trial = nodes.copy()
        s_new = np.empty(len(idx))
        g_new = np.empty_like(grad)
        g2_new = np.empty(len(idx))
        ratio = np.ones(len(idx))
        pending = np.arange(len(idx))
        for _ in range(80):
            sub = trial[pending]
            sub[:, 1:-1] = _batch_exp(
                self.model, nodes[pending][:, 1:-1],
                -db[pending, None, None] * grad[pending][:, 1:-1],
            )
            trial[pending] = sub
            s_p, grad_p, g2_p, len_p = _action_and_gradient(
                self.model, trial[pending], with_lengths=True
            )
            s_new[pending] = s_p
            g_new[pending] = grad_p
            g2_new[pending] = g2_p
            ratio[pending] = np.max(len_p, axis=1) / np.maximum(np.min(len_p, axis=1), 1e-300)
            ok = s_p <= s_old[pending] - self.armijo * db[pending] * g2[pending] + slack[pending]
            # at the roundoff floor the action cannot see instability: also
            # require the gradient norm not to grow there
            floor = db[pending] * g2[pending] < 100.0 * slack[pending]
            ok &= ~floor | (g2_p <= g2[pending] * (1.0 + 1e-9))
            bad = ~ok
            if not np.any(bad):
                pending = pending[:0]
                break
            still = pending[bad]
            db[still] *= 0.5
            under = db[still] < 1e-17
            if np.any(under):
                self.status[idx[still[under]]] = STATUS_STALLED
                still = still[~under]
            pending = still
            if len(pending) == 0:
                break
        moving = np.nonzero(self.status[idx] == STATUS_RUNNING)[0]
        if len(moving) == 0:
            return
        gi = idx[moving]
        old_g2 = self.gnorm2[gi]
        self.nodes[gi] = trial[moving]
        self.beta[gi] += db[moving]
        self.steps[gi] += 1
        self.dbeta[gi] = db[moving]
        self.action[gi] = s_new[moving]
        self.grad[gi] = g_new[moving]
        self.gnorm2[gi] = g2_new[moving]
        # re-space nodes when the material parametrization drifts: the
        # shortening flow piles nodes onto collapsing loops otherwise
        drifted = ratio[moving] > 1.2
        if np.any(drifted):
            di = gi[drifted]
            self.nodes[di] = _redistribute(self.model, self.nodes[di])
            s_r, g_r, g2_r = _action_and_gradient(self.model, self.nodes[di])
            self.action[di] = s_r
            self.grad[di] = g_r
            self.gnorm2[di] = g2_r
            self._regrid_pending[di] = True
        # trapezoid of |u|^2 + |grad|^2 = 2 |grad|^2 over the accepted
        # interval, endpoint states taken after any re-gridding
        self.phi[gi] += db[moving] * (old_g2 + self.gnorm2[gi])
        over = self.steps[gi] >= self.budget
        if np.any(over):
            self.status[gi[over]] = STATUS_BUDGET
        hit = self.gnorm2[gi] <= self.grad_tol**2
        if np.any(hit):
            self.status[gi[hit]] = STATUS_CONVERGED

        if self.record:
            for j, b in enumerate(gi):
                tr = self.trace[b]
                tr["beta"].append(float(self.beta[b]))
                tr["action"].append(float(self.action[b]))
                tr["grad"].append(float(np.sqrt(self.gnorm2[b])))
                if len(tr["snap"]) < self.record_cap or self.status[b] != STATUS_RUNNING:
                    tr["snap_beta"].append(float(self.beta[b]))
                    tr["snap"].append(self.nodes[b].copy())
                    tr["snap_phi"].append(float(self.phi[b]))
                    tr["snap_grad"].append(float(np.sqrt(self.gnorm2[b])))
                    tr["snap_regrid"].append(bool(self._regrid_pending[b]))
                    self._regrid_pending[b] = False
                elif len(tr["snap"]) == self.record_cap:
                    # decimate in place; keeps first and most recent states
                    flags = tr["snap_regrid"]
                    merged = [flags[0]]
                    for j in range(1, (len(flags) + 1) // 2):
                        left = flags[2 * j - 1]
                        right = flags[2 * j] if 2 * j < len(flags) else False
                        merged.append(left or right)
                    tr["snap_regrid"] = merged
                    for key in ("snap_beta", "snap", "snap_phi", "snap_grad"):
                        tr[key] = tr[key][::2]
        if self.monitor is not None:
            mask = np.zeros(self.batch, dtype=bool)
            mask[gi] = True
            self.monitor(self, mask)


# ---------------------------------------------------------------------------
# classification against known critical paths
# ---------------------------------------------------------------------------

def _critical_entry(entry):
    geo = getattr(entry, "geodesic", entry)
    label = getattr(entry, "label", None)
    return geo, label


def distance_to_path(model, nodes, geodesic: GeodesicPath) -> float:
    """max over nodes of the distance to the curve (a set distance,
    insensitive to node spacing along the limit geodesic).

    The nearest sample is refined by projecting onto the geodesic segments
    adjacent to it, so the result does not carry the sample spacing.
    """
    samples = geodesic.points
    worst = 0.0
    if model.kind == "sphere":
        dots = np.clip(nodes @ samples.T, -1.0, 1.0)
        nearest = np.argmax(dots, axis=1)
        for i, j in enumerate(nearest):
            x = nodes[i]
            best = math.acos(float(dots[i, j]))
            for a_idx in (j - 1, j):
                if a_idx < 0 or a_idx + 1 >= len(samples):
                    continue
                a, b = samples[a_idx], samples[a_idx + 1]
                # distance to the great circle through span(a, b), when the
                # projection lands inside the arc
                e1 = a / np.linalg.norm(a)
                e2 = b - np.dot(b, e1) * e1
                e2 = e2 / np.linalg.norm(e2)
                px = np.dot(x, e1) * e1 + np.dot(x, e2) * e2
                npx = float(np.linalg.norm(px))
                if npx > 1e-300:
                    y = px / npx
                    inside = min(np.dot(y, a), np.dot(y, b)) >= np.dot(a, b) - 1e-12
                    if inside:
                        best = min(best, math.acos(min(npx, 1.0)))
            worst = max(worst, best)
        return float(math.sqrt(model.factor) * worst)
    diff = nodes[:, None, :] - samples[None, :, :]
    d2 = np.einsum("nsd,nsd->ns", diff, diff)
    nearest = np.argmin(d2, axis=1)
    for i, j in enumerate(nearest):
        x = nodes[i]
        best = math.sqrt(float(d2[i, j]))
        for a_idx in (j - 1, j):
            if a_idx < 0 or a_idx + 1 >= len(samples):
                continue
            a, b = samples[a_idx], samples[a_idx + 1]
            ab = b - a
            t = float(np.dot(x - a, ab) / max(float(np.dot(ab, ab)), 1e-300))
            t = min(max(t, 0.0), 1.0)
            best = min(best, float(np.linalg.norm(x - (a + t * ab))))
        worst = max(worst, best)
    return float(math.sqrt(_dressing(model)) * worst)


def basin_tolerance(critical_set) -> float:
    actions = sorted(getattr(c, "action", _critical_entry(c)[0].action) for c in critical_set)
    gaps = [b - a for a, b in zip(actions, actions[1:])]
    half_gap = 0.5 * min(gaps) if gaps else np.inf
    return float(min(BASIN_DISTANCE_CAP, half_gap)) if gaps else BASIN_DISTANCE_CAP


def classify_limit(model, nodes, action_value, critical_set):
    """Label of the critical path matching the converged state, or None."""
    tol = basin_tolerance(critical_set)
    actions = []
    for entry in critical_set:
        geo, _ = _critical_entry(entry)
        actions.append(geo.action)
    half_gap = 0.5 * min(
        [abs(a - b) for i, a in enumerate(actions) for b in actions[i + 1:]] or [np.inf]
    )
    best = None
    for i, entry in enumerate(critical_set):
        geo, label = _critical_entry(entry)
        if abs(action_value - geo.action) > min(half_gap, 0.5):
            continue
        dist = distance_to_path(model, nodes, geo)
        if dist < tol:
            best = label if label is not None else f"critical-{i}"
            break
    return best


def run_flow(model, seed: BrokenPath, critical_set: Sequence, *,
             grad_tol=GRAD_TOL, budget=STEP_BUDGET, dbeta0=None,
             seed_descriptor=None, record_cap=2048) -> FlowTrajectory:
    """Integrate the descent flow from a seed until the gradient norm falls
    below tolerance, then classify the limit against the known critical set.

    Raises Unclassified when the limit matches no known critical path and
    BudgetExhausted when the step budget runs out; both carry the partial
    trajectory. """
    flow = BatchGradientFlow(
        model, seed.nodes[None], grad_tol=grad_tol, budget=budget,
        dbeta0=dbeta0, record=True, record_cap=record_cap,
    )
    flow.run()
    tr = flow.trace[0]
    states = [
        (b, BrokenPath(taus=seed.taus.copy(), nodes=s))
        for b, s in zip(tr["snap_beta"], tr["snap"])
    ]
    regrid_flags = list(tr["snap_regrid"])
    desc = dict(seed_descriptor or {})
    converged = flow.status[0] == STATUS_CONVERGED
    traj = FlowTrajectory(
        states=states,
        betas=np.array(tr["beta"]),
        actions=np.array(tr["action"]),
        grad_norms=np.array(tr["grad"]),
        flow_energy=float(flow.phi[0]),
        converged=bool(converged),
        steps=int(flow.steps[0]),
        limit_minus=desc.get("source"),
        seed_descriptor=desc,
        regrid_flags=regrid_flags,
    )
    if flow.status[0] == STATUS_BUDGET:
        raise BudgetExhausted("flow budget exhausted", trajectory=traj)
    if flow.status[0] == STATUS_STALLED and flow.gnorm2[0] > (1e-7) ** 2:
        raise Unclassified("flow stalled away from any critical path", trajectory=traj)
    label = classify_limit(model, flow.nodes[0], float(flow.action[0]), critical_set)
    if label is None:
        raise Unclassified("flow limit matches no known critical path", trajectory=traj)
    traj.limit_plus = label
    return traj


def flow_energy(trajectory: FlowTrajectory, model=None) -> float:
    """Trapezoidal beta-quadrature of |u|^2 + |grad|^2 over stored states.

    ``u`` between consecutive states is the realized node velocity; on
    accepted descent steps it equals minus the gradient, so the two terms
    agree and the total equals twice the action drop between the limits.
    Without a model the per-step accumulator is returned; the state-based
    recompute is quantitative only while the stored states are undecimated
    (state gaps average the velocity and lose energy in fast phases).
    """
    if len(trajectory.states) < 2:
        return 0.0
    if model is None:
        # recorded accumulator value
        return float(trajectory.flow_energy)
    betas = [b for b, _ in trajectory.states]
    paths = [s for _, s in trajectory.states]
    regrid = trajectory.regrid_flags
    lam = paths[0].segments
    f = _dressing(model)
    total = 0.0
    vals = []
    for j in range(len(paths)):
        _, g2 = _batch_gradient(model, paths[j].nodes[None])
        g2 = float(g2[0])
        if j < len(paths) - 1:
            db = betas[j + 1] - betas[j]
            regridded = regrid[j + 1] if regrid is not None and j + 1 < len(regrid) else False
            if db <= 0:
                vals.append(2.0 * g2)
                continue
            if regridded:
                # the recorded state jump contains a tangential re-gridding;
                # the flow velocity on those steps is exactly -grad
                u2 = g2
            elif model.kind == "sphere":
                disp = np.stack(
                    [model.log(paths[j].nodes[i], paths[j + 1].nodes[i]) for i in range(1, lam)]
                )
                u2 = (f / lam) * float(np.sum(disp * disp)) / db**2
            else:
                disp = paths[j + 1].nodes[1:-1] - paths[j].nodes[1:-1]
                u2 = (f / lam) * float(np.sum(disp * disp)) / db**2
        else:
            u2 = 0.0
        vals.append(u2 + g2)
    for j in range(len(paths) - 1):
        db = betas[j + 1] - betas[j]
        total += 0.5 * db * (vals[j] + vals[j + 1])
    return float(total)


def flow_residual(model, u_field, path: BrokenPath):
    """F_i = u_i - (the discrete (1/c) v nabla v at node i).

    The discrete curve-shortening direction at a node is minus the action
    gradient, so F = u + action_gradient(path); it vanishes exactly on
    accepted flow steps.
    """
    u = np.asarray(getattr(u_field, "values", u_field), dtype=float)
    return u + action_gradient(model, path)


def linearized_flow_apply(model, path: GeodesicPath, u_field, w) -> TangentField:
    """u^b nabla_b w^a + (1/c) (Lambda w)^a along an unbroken geodesic.

    Only the tangential part of u differentiates the on-path field w (the
    normal derivative of w off the path is not determined by on-path data);
    at a critical path u = 0 and the operator is exactly (1/c) Lambda.
    """
    c = path.speed
    lw = apply_sturm_liouville(model, path, w)
    out = lw.values / c
    u = np.asarray(getattr(u_field, "values", u_field), dtype=float)
    if np.any(u):
        wvals = np.asarray(getattr(w, "values", w), dtype=float)
        dw = covariant_deriv_field(model, path.points, path.velocities, wvals, path.taus)
        vhat = path.velocities / np.array(
            [model.norm(x, v) for x, v in zip(path.points, path.velocities)]
        )[:, None]
        u_tan = np.array(
            [model.inner(x, ui, vh) for x, ui, vh in zip(path.points, u, vhat)]
        )
        out = out + (u_tan / c)[:, None] * dw
    return TangentField(values=out, endpoint_zero=False)


def perturbed_seed(model, base: BrokenPath, field, eps) -> BrokenPath:
    """Seed for a flow: base path displaced by eps along a node field."""
    return base.displaced(model, field, eps)
