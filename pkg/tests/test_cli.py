"""Command-line interface: configuration handling, report formats, and
byte-level determinism."""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pathmorse.cli import (
    DEFAULT_CONFIG,
    apply_set,
    main,
    merge_config,
    validate_config,
)
from pathmorse.errors import ConfigInvalid


def _read(path):
    with open(path) as fh:
        return fh.read()


def _only_file(outdir, prefix):
    names = [n for n in os.listdir(outdir) if n.startswith(prefix)]
    assert len(names) == 1, names
    return os.path.join(outdir, names[0])


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def test_merge_and_set():
    cfg = merge_config(DEFAULT_CONFIG, {"manifold": {"n": 3}})
    assert cfg["manifold"]["n"] == 3
    assert cfg["manifold"]["kind"] == "sphere"
    apply_set(cfg, "flow.epsilon=0.005")
    assert cfg["flow"]["epsilon"] == 0.005
    apply_set(cfg, "system.V=radial:1.0,0.5")
    assert cfg["system"]["V"] == "radial:1.0,0.5"


@pytest.mark.parametrize(
    "assignment",
    ["manifold.kind=torus", "manifold.n=0", "discretization.lambda=4",
     "command.max_winding=-1", "flow.epsilon=0", "endpoints.theta=3.15",
     "command.coefficients=Q"],
)
def test_validation_rejects(assignment):
    cfg = merge_config(DEFAULT_CONFIG, {})
    apply_set(cfg, assignment)
    with pytest.raises(ConfigInvalid):
        validate_config(cfg)


def test_bad_config_exits_1(tmp_path):
    rc = main(["geodesics", "--set", "manifold.n=0",
               "--output-dir", str(tmp_path)])
    assert rc == 1


def test_computation_error_exits_2(tmp_path):
    rc = main([
        "geodesics", "--set", "endpoints.p=[1.0,0.0,0.0]",
        "--set", "endpoints.q=[-1.0,0.0,0.0]", "--output-dir", str(tmp_path),
    ])
    assert rc == 2


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_geodesics_report(tmp_path):
    rc = main(["geodesics", "--set", "command.max_winding=3",
               "--output-dir", str(tmp_path), "--quiet"])
    assert rc == 0
    with open(_only_file(tmp_path, "geodesics-")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    want = [np.pi / 2, 3 * np.pi / 2, 5 * np.pi / 2, 7 * np.pi / 2]
    for row, expect in zip(rows, want):
        assert float(row["action"]) == pytest.approx(expect, rel=1e-9)
        assert row["index"] == ""  # placeholder column


def test_geodesics_determinism(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    for d in (a_dir, b_dir):
        rc = main(["geodesics", "--set", "command.max_winding=2",
                   "--output-dir", str(d), "--quiet"])
        assert rc == 0
    a = _read(_only_file(a_dir, "geodesics-"))
    b = _read(_only_file(b_dir, "geodesics-"))
    assert a == b


def test_index_report(tmp_path):
    rc = main(["index", "--set", "command.max_winding=2",
               "--output-dir", str(tmp_path), "--quiet"])
    assert rc == 0
    with open(_only_file(tmp_path, "index-")) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["index"]) for r in rows] == [0, 1, 2]
    assert all(r["agree"] == "1" for r in rows)
    assert rows[0]["conjugate_points"] == "-"
    s_star = float(rows[1]["conjugate_points"].split(":")[0])
    assert s_star == pytest.approx(np.pi, abs=1e-4)


def test_homology_s1_report(tmp_path):
    rc = main([
        "homology", "--set", "manifold.n=1", "--set", "command.max_winding=4",
        "--set", "command.max_degree=2", "--output-dir", str(tmp_path), "--quiet",
    ])
    assert rc == 0
    payload = json.loads(_read(_only_file(tmp_path, "homology-")))
    groups = payload["groups"]
    assert groups[0]["free_rank"] == 5  # windings 0..4
    assert groups[0]["truncated"] is True
    assert groups[1]["free_rank"] == 0
    assert payload["config"]["command"]["max_winding"] == 4  # provenance


def test_homology_config_file_and_override(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({
        "manifold": {"kind": "sphere", "n": 1},
        "command": {"max_winding": 2, "max_degree": 1},
    }))
    rc = main(["homology", "--config", str(cfg_file),
               "--set", "command.max_winding=3",
               "--output-dir", str(tmp_path), "--quiet"])
    assert rc == 0
    payload = json.loads(_read(_only_file(tmp_path, "homology-")))
    assert payload["groups"][0]["free_rank"] == 4  # flag overrides the file


def test_flow_report(tmp_path):
    rc = main(["flow", "--output-dir", str(tmp_path), "--quiet"])
    assert rc == 0
    payload = json.loads(_read(_only_file(tmp_path, "flow-")))
    assert payload["limit_minus"] == "k1"
    assert payload["limit_plus"] == "k0"
    assert payload["converged"] is True
    assert payload["flow_energy"] == pytest.approx(2 * np.pi, rel=0.01)
    acts = payload["action"]
    assert all(a >= b - 1e-10 for a, b in zip(acts, acts[1:]))


def test_verify_subset(tmp_path):
    rc = main(["verify", "--set", "command.criteria=3,6",
               "--output-dir", str(tmp_path), "--quiet"])
    assert rc == 0
    payload = json.loads(_read(_only_file(tmp_path, "verify-")))
    assert [r["criterion"] for r in payload["results"]] == [3, 6]
    assert all(r["passed"] for r in payload["results"])


def test_console_script_runs(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pathmorse.cli", "geodesics",
         "--set", "command.max_winding=1", "--output-dir", str(tmp_path)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "k,arc_length,action,index" in proc.stdout


def test_table_cell_vocabulary():
    from pathmorse.homology import HomologyGroup
    from pathmorse.verification import table_cell

    assert table_cell(HomologyGroup(0, 1, [])) == "Z"
    assert table_cell(HomologyGroup(0, 0, [])) == "0"
    assert table_cell(HomologyGroup(0, 5, [], truncated=True)) == "+Z(trunc)"
