"""Command-line entry point: configuration, orchestration, and reports.

One JSON document configures every run; flags override file fields with
dotted paths (``--set flow.epsilon=0.005``).  Reports embed the effective
configuration and are byte-identical across runs of the same configuration:
outputs are sorted canonically before emission, so the worker count never
changes bytes.

Exit codes: 0 success, 1 configuration error, 2 computation error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import verification
from .errors import ConfigInvalid, PathmorseError
from .geodesics import solve_bvp
from .geometry import ChartModel, ConservativeSystem, SphereModel, potential_from_spec
from .homology import (
    build_omega_complex,
    count_trajectories,
    enumerate_critical_points,
    homology,
)
from .jacobi import hessian_spectrum_index, integrate_jacobi, detect_conjugate_points, morse_index
from .pathspace import BrokenPath, perturbed_seed, run_flow

COMMANDS = ("geodesics", "index", "flow", "complex", "homology", "table", "verify")

DEFAULT_CONFIG = {
    "manifold": {"kind": "sphere", "n": 2},
    "system": {"m": 2.0, "E": 1.0, "V": "zero"},
    "endpoints": {"theta": math.pi / 2},
    "discretization": {"lambda": 64},
    "flow": {
        "epsilon": 0.01,
        "dbeta0": None,
        "step_budget": 1000000,
        "grad_tol": 1e-9,
    },
    "command": {
        "max_winding": 6,
        "max_degree": 6,
        "coefficients": "Z",
        "flow_source": 1,
        "flow_direction": 0,
        "flow_sign": 1,
        "criteria": "",
    },
    "workers": None,
}


def merge_config(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = val
    return out


def apply_set(config, assignment):
    if "=" not in assignment:
        raise ConfigInvalid(f"--set needs key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    node = config
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[parts[-1]] = value


def validate_config(cfg):
    man = cfg.get("manifold", {})
    if man.get("kind") not in ("sphere", "flat"):
        raise ConfigInvalid(f"manifold.kind must be 'sphere' or 'flat', got {man.get('kind')!r}")
    n = man.get("n")
    if not isinstance(n, int) or n < 1:
        raise ConfigInvalid(f"manifold.n must be a positive integer, got {n!r}")
    sysc = cfg.get("system", {})
    if not float(sysc.get("m", 0)) > 0:
        raise ConfigInvalid("system.m must be positive")
    lam = cfg.get("discretization", {}).get("lambda")
    if not isinstance(lam, int) or lam < 8:
        raise ConfigInvalid(f"discretization.lambda must be an integer >= 8, got {lam!r}")
    w = cfg.get("command", {}).get("max_winding")
    if not isinstance(w, int) or w < 0:
        raise ConfigInvalid(f"command.max_winding must be a nonnegative integer, got {w!r}")
    flow = cfg.get("flow", {})
    for fieldname in ("epsilon", "grad_tol"):
        if not float(flow.get(fieldname, 0)) > 0:
            raise ConfigInvalid(f"flow.{fieldname} must be positive")
    ep = cfg.get("endpoints", {})
    if "theta" in ep and not 0.0 < float(ep["theta"]) < math.pi:
        raise ConfigInvalid("endpoints.theta must lie strictly between 0 and pi")
    coeff = cfg.get("command", {}).get("coefficients", "Z")
    if coeff not in ("Z", "Z2"):
        raise ConfigInvalid(f"command.coefficients must be 'Z' or 'Z2', got {coeff!r}")
    return cfg


def build_model(cfg):
    sysc = cfg["system"]
    system = ConservativeSystem(
        mass=float(sysc["m"]), total_energy=float(sysc["E"]),
        potential=potential_from_spec(sysc.get("V", "zero")),
    )
    man = cfg["manifold"]
    if man["kind"] == "sphere":
        return SphereModel(int(man["n"]), system)
    return ChartModel.euclidean(int(man["n"]), system)


def resolve_endpoints(cfg, model):
    ep = cfg["endpoints"]
    if "p" in ep and "q" in ep:
        return np.asarray(ep["p"], dtype=float), np.asarray(ep["q"], dtype=float)
    theta = float(ep.get("theta", math.pi / 2))
    d = model.point_dim
    p = np.zeros(d)
    p[0] = 1.0
    q = np.zeros(d)
    q[0] = math.cos(theta)
    q[1] = math.sin(theta)
    return p, q


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_report(outdir, name, payload, kind):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    if kind == "json":
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write(payload)
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_geodesics(cfg, outdir, echo):
    model = build_model(cfg)
    p, q = resolve_endpoints(cfg, model)
    w = cfg["command"]["max_winding"]
    rows = []
    for k in range(w + 1):
        path = solve_bvp(model, p, q, k)
        rows.append((k, path.speed, path.action))
    lines = ["k,arc_length,action,index"]
    for k, arc, act in rows:
        lines.append(f"{k},{arc!r},{act!r},")
    csv = "\n".join(lines) + "\n"
    name = f"geodesics-{config_hash(cfg)}.csv"
    path = write_report(outdir, name, csv, "csv")
    echo(csv.strip())
    echo(f"wrote {path}")
    return 0


def cmd_index(cfg, outdir, echo):
    model = build_model(cfg)
    p, q = resolve_endpoints(cfg, model)
    w = cfg["command"]["max_winding"]
    lam = cfg["discretization"]["lambda"]
    lines = ["k,conjugate_points,index,hessian_index,agree"]
    for k in range(w + 1):
        geo = solve_bvp(model, p, q, k)
        sol = integrate_jacobi(model, geo)
        pts = detect_conjugate_points(sol)
        ind = morse_index(model, geo, solution=sol)
        hind = hessian_spectrum_index(model, geo, lam)
        enc = "|".join(f"{s!r}:{m}" for s, m in pts) or "-"
        lines.append(f"{k},{enc},{ind},{hind},{int(ind == hind)}")
    csv = "\n".join(lines) + "\n"
    name = f"index-{config_hash(cfg)}.csv"
    path = write_report(outdir, name, csv, "csv")
    echo(csv.strip())
    echo(f"wrote {path}")
    return 0


def cmd_flow(cfg, outdir, echo):
    model = build_model(cfg)
    p, q = resolve_endpoints(cfg, model)
    cmdc = cfg["command"]
    source_k = int(cmdc["flow_source"])
    direction = int(cmdc["flow_direction"])
    sign = int(cmdc["flow_sign"])
    eps = float(cfg["flow"]["epsilon"])
    lam = cfg["discretization"]["lambda"]
    crits = enumerate_critical_points(model, p, q, max(source_k, 1), lam=lam)
    source = next(c for c in crits if c.winding == source_k)
    if source.index == 0:
        raise ConfigInvalid("flow_source must have positive index")
    if not 0 <= direction < source.index:
        raise ConfigInvalid(
            f"flow_direction must be in [0, {source.index}) for this source"
        )
    seed = perturbed_seed(model, source.broken,
                          source.unstable_basis[direction], sign * eps)
    traj = run_flow(
        model, seed, crits,
        grad_tol=float(cfg["flow"]["grad_tol"]),
        budget=int(cfg["flow"]["step_budget"]),
        dbeta0=cfg["flow"]["dbeta0"],
        seed_descriptor={"source": source.label, "direction": direction,
                         "sign": sign, "epsilon": eps},
    )
    thin = max(1, len(traj.betas) // 512)
    record = {
        "config": cfg,
        "seed": traj.seed_descriptor,
        "beta": [float(b) for b in traj.betas[::thin]],
        "action": [float(a) for a in traj.actions[::thin]],
        "grad_norm": [float(g) for g in traj.grad_norms[::thin]],
        "flow_energy": traj.flow_energy,
        "limit_minus": traj.limit_minus,
        "limit_plus": traj.limit_plus,
        "converged": traj.converged,
        "steps": traj.steps,
    }
    name = f"flow-{config_hash(cfg)}.json"
    path = write_report(outdir, name, record, "json")
    echo(f"{traj.limit_minus} -> {traj.limit_plus}: Phi = {traj.flow_energy:.6f}, "
         f"steps = {traj.steps}")
    echo(f"wrote {path}")
    return 0


def _complex_payload(cfg, cx, counts):
    return {
        "config": cfg,
        "generators": {
            str(k): [
                {"label": g.label, "index": g.index, "action": g.action,
                 "winding": g.winding}
                for g in cx.generators_by_index[k]
            ]
            for k in sorted(cx.generators_by_index)
        },
        "boundary_matrices": {str(k): m for k, m in sorted(cx.boundary_matrices.items())},
        "trajectory_counts": [
            {
                "source": mc.source.label, "target": mc.target.label,
                "n": mc.n_count, "mod2": mc.mod2_count,
                "trajectories": [
                    {"sign": t.sign, "phi": t.phi, "arrival": t.arrival,
                     "seed_coefficients": list(t.seed_coefficients)}
                    for t in mc.trajectories
                ],
            }
            for mc in sorted(counts, key=lambda m: (m.source.label, m.target.label))
        ],
    }


def cmd_complex(cfg, outdir, echo):
    model = build_model(cfg)
    p, q = resolve_endpoints(cfg, model)
    cx, counts = build_omega_complex(
        model, p, q, cfg["command"]["max_winding"],
        lam=cfg["discretization"]["lambda"], epsilon=float(cfg["flow"]["epsilon"]),
    )
    payload = _complex_payload(cfg, cx, counts)
    name = f"complex-{config_hash(cfg)}.json"
    path = write_report(outdir, name, payload, "json")
    echo(json.dumps(payload["boundary_matrices"], sort_keys=True))
    echo(f"wrote {path}")
    return 0


def cmd_homology(cfg, outdir, echo):
    model = build_model(cfg)
    p, q = resolve_endpoints(cfg, model)
    cx, counts = build_omega_complex(
        model, p, q, cfg["command"]["max_winding"],
        lam=cfg["discretization"]["lambda"], epsilon=float(cfg["flow"]["epsilon"]),
    )
    groups = homology(cx, max_degree=cfg["command"]["max_degree"],
                      coefficients=cfg["command"]["coefficients"])
    payload = {
        "config": cfg,
        "groups": [
            {"degree": g.degree, "free_rank": g.free_rank, "torsion": g.torsion,
             "truncated": g.truncated, "pretty": str(g)}
            for g in groups
        ],
    }
    name = f"homology-{config_hash(cfg)}.json"
    path = write_report(outdir, name, payload, "json")
    echo("degree  group")
    for g in groups:
        echo(f"{g.degree:>6}  {g}")
    echo(f"wrote {path}")
    return 0


def cmd_table(cfg, outdir, echo):
    workers = cfg.get("workers") or os.cpu_count() or 1
    lam = cfg["discretization"]["lambda"]
    eps = float(cfg["flow"]["epsilon"])
    n_values = (1, 2, 3, 4, 5)

    def row(n):
        return n, verification.compute_omega_table(
            lam=lam, epsilon=eps, n_values=(n,)
        )[n]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = dict(pool.map(row, n_values))
    else:
        rows = dict(map(row, n_values))
    lines = ["space," + ",".join(str(k) for k in range(7))]
    for n in n_values:
        lines.append(f"Omega(S^{n})," + ",".join(rows[n]))
    csv = "\n".join(lines) + "\n"
    name = f"table-{config_hash(cfg)}.csv"
    path = write_report(outdir, name, csv, "csv")
    echo(csv.strip())
    echo(f"wrote {path}")
    return 0


def cmd_verify(cfg, outdir, echo):
    spec = str(cfg["command"].get("criteria", "") or "")
    numbers = [int(tok) for tok in spec.replace(",", " ").split()] if spec.strip() else None
    ctx = verification.VerificationContext(
        lam=cfg["discretization"]["lambda"], epsilon=float(cfg["flow"]["epsilon"])
    )
    results = verification.run_criteria(numbers, ctx=ctx, echo=echo)
    payload = {
        "config": cfg,
        "results": [
            {"criterion": r.number, "passed": r.passed, "description": r.description,
             "details": r.details, "seconds": round(r.seconds, 2)}
            for r in results
        ],
    }
    name = f"verify-{config_hash(cfg)}.json"
    path = write_report(outdir, name, payload, "json")
    echo(f"wrote {path}")
    return 0 if all(r.passed for r in results) else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="pathmorse",
        description="Morse theory of the path space of a sphere: geodesics, "
                    "Jacobi indices, gradient-flow trajectories, and homology.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration field (dotted path)")
    parser.add_argument("--output-dir", default="reports",
                        help="directory for report files (default: reports)")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count for independent computations "
                             "(default: all cores)")
    parser.add_argument("--quiet", action="store_true")
    return parser


HANDLERS = {
    "geodesics": cmd_geodesics,
    "index": cmd_index,
    "flow": cmd_flow,
    "complex": cmd_complex,
    "homology": cmd_homology,
    "table": cmd_table,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    echo = (lambda *_: None) if args.quiet else print
    try:
        cfg = copy.deepcopy(DEFAULT_CONFIG)
        if args.config:
            with open(args.config) as fh:
                cfg = merge_config(cfg, json.load(fh))
        for assignment in args.set:
            apply_set(cfg, assignment)
        if args.workers is not None:
            cfg["workers"] = args.workers
        cfg = validate_config(cfg)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        return HANDLERS[args.command](cfg, args.output_dir, echo)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except PathmorseError as exc:
        print(f"computation error [{args.command}]: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
