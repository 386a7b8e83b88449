import json
import re
from pathlib import Path

import pytest

from ivsmpc import cli
from ivsmpc.errors import SolverFailure

DATA = Path(__file__).parent / "data"

SCALAR = """\
system: {a: [[1.0]], b: [[1.0]], vw: [[0.1]]}
cost: {q: [[1.0]], r: [[1.0]]}
horizon: 2
constraints:
  - {c: [1.0], d: 2.0, rho: 0.9, kind: state}
sim: {steps: 5, runs: 2, seed: 1, x0: [0.5]}
"""


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_bundled(tmp_path, capsys):
    code, out, _ = _run(["synth", "--out", tmp_path], capsys)
    assert code == cli.EXIT_OK
    assert "K = [[-0.2409" in out
    for value in re.findall(r"residual \w+: (\S+)", out):
        assert float(value) < 1e-9
    rec = json.loads((tmp_path / "synth.json").read_text())
    assert rec["residuals"]


def test_synth_scalar_golden_ratio(tmp_path, capsys):
    cfg = tmp_path / "g.yaml"
    cfg.write_text(SCALAR)
    code, out, _ = _run(["synth", "--config", cfg, "--out", tmp_path / "s.json"], capsys)
    assert code == cli.EXIT_OK
    k = float(re.search(r"K = \[\[(\S+)\]\]", out).group(1))
    assert k == pytest.approx(-(5 ** 0.5 - 1) / 2, abs=1e-12)


def test_malformed_matrix_names_field(tmp_path, capsys):
    text = (Path(cli.bundled_problem_path()).read_text()
            .replace("[[1.0, 0.0], [0.0, 10.0]]", "[[1.0, 0.0], [0.0]]"))
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(text)
    code, _, err = _run(["synth", "--config", cfg, "--out", tmp_path], capsys)
    assert code == cli.EXIT_INPUT
    assert "cost.q" in err


def test_solve_first_step(capsys):
    code, out, _ = _run(["solve"], capsys)
    assert code == cli.EXIT_OK
    res = json.loads(out)
    assert res["xi"] == 0.0
    assert res["status"] == "optimal"
    assert len(res["v"]) == 8


def test_solve_infeasible_start(capsys):
    code, _, err = _run(["solve", "--x", "5,0"], capsys)
    assert code == cli.EXIT_INFEASIBLE
    assert "infeasible" in err


def test_solve_bad_vector(capsys):
    code, _, err = _run(["solve", "--x", "1,2,3"], capsys)
    assert code == cli.EXIT_INPUT
    assert "--x" in err


def test_solve_icsmpc_reports_kappa(capsys):
    code, out, _ = _run(["solve", "--scheme", "icsmpc"], capsys)
    assert code == cli.EXIT_OK
    res = json.loads(out)
    assert res["tightening"] == "unimodal"
    assert res["kappa"][0] == pytest.approx((2 / (9 * 0.1)) ** 0.5, rel=1e-12)


def test_solve_lqr_rejected(capsys):
    code, _, _ = _run(["solve", "--scheme", "lqr"], capsys)
    assert code == cli.EXIT_INPUT


def test_simulate_golden(tmp_path, capsys):
    code, _, _ = _run(["simulate", "--runs", 1, "--steps", 5, "--seed", 7, "--out", tmp_path], capsys)
    assert code == cli.EXIT_OK
    assert (tmp_path / "traces.csv").read_bytes() == (DATA / "golden_ivsmpc_r1_s5.csv").read_bytes()
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["scheme"] == "ivsmpc"


def test_synth_artifact_round_trip(tmp_path, capsys):
    _run(["synth", "--out", tmp_path / "s.json"], capsys)
    code, _, _ = _run(["simulate", "--runs", 1, "--steps", 5, "--seed", 7,
                       "--synth", tmp_path / "s.json", "--out", tmp_path / "sim"], capsys)
    assert code == cli.EXIT_OK
    assert (tmp_path / "sim" / "traces.csv").read_bytes() == \
        (DATA / "golden_ivsmpc_r1_s5.csv").read_bytes()


def test_simulate_solver_failure_exit(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise SolverFailure("forced", dump='{"forced": true}')

    monkeypatch.setattr(cli, "simulate", boom)
    code, _, err = _run(["simulate", "--runs", 1, "--steps", 2, "--out", tmp_path], capsys)
    assert code == cli.EXIT_SOLVER
    assert "solver failure" in err
    assert json.loads((tmp_path / "failure_dump.json").read_text()) == {"forced": True}


def test_report_two_schemes(tmp_path, capsys):
    for scheme in ("ivsmpc", "lqr"):
        code, _, _ = _run(["simulate", "--scheme", scheme, "--runs", 2, "--steps", 6,
                           "--out", tmp_path / scheme], capsys)
        assert code == cli.EXIT_OK
    code, _, _ = _run(["report", tmp_path / "ivsmpc", tmp_path / "lqr", "--check-traces",
                       "--out", tmp_path / "fig"], capsys)
    assert code == cli.EXIT_OK
    fig = tmp_path / "fig"
    for name in ("phase.svg", "xi.svg", "ecdf_ivsmpc.svg"):
        assert (fig / name).read_text().startswith("<svg")
    metrics = json.loads((fig / "metrics.json").read_text())
    assert set(metrics) == {"ivsmpc", "lqr"}
    for m in metrics.values():
        assert "cost_ratio" in m
    assert metrics["lqr"]["cost_ratio"] == pytest.approx(1.0)


def test_report_missing_dir(tmp_path, capsys):
    code, _, _ = _run(["report", tmp_path / "nope", "--out", tmp_path / "fig"], capsys)
    assert code != cli.EXIT_OK
