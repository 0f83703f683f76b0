import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bpmf import cli, message_passing, scheduler, verify
from bpmf.graph_io import load_graph_spec
from bpmf.ofdm.simulate import BER_COLUMNS
from bpmf.oracle import exact_marginals

SPECS = Path(__file__).resolve().parent.parent / "demos" / "specs"

TOY = {"n_carriers": 7, "n_pilots": 3, "generators": [7, 5], "ebn0_db": [4.0, 8.0], "seed": 11,
       "max_outer": 20}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_infer_tree_matches_oracle(capsys):
    code, out, err = run(capsys, "infer", "--config", str(SPECS / "chain.json"))
    assert code == cli.EXIT_OK
    res = json.loads(out)
    assert res["schedule"] == "convergent" and res["status"] == "converged"
    g = load_graph_spec(SPECS / "chain.json").graph
    vm, _ = exact_marginals(g)
    for i, v in enumerate(g.variables):
        np.testing.assert_allclose(res["beliefs"][v.name], vm[i], atol=1e-12)
    assert "free energy" in err


def test_infer_writes_beliefs_and_trace(tmp_path, capsys):
    code, out, _ = run(capsys, "infer", "--config", str(SPECS / "mixed.json"), "--out", str(tmp_path))
    assert code == cli.EXIT_OK and out == ""
    res = json.loads((tmp_path / "beliefs.json").read_text())
    assert set(res["beliefs"]) == {"s0", "s1", "g"}
    assert set(res["beliefs"]["g"]) == {"mean", "variance"}
    rows = list(csv.DictReader(io.StringIO((tmp_path / "trace.csv").read_text())))
    assert rows and float(rows[-1]["free_energy"]) == pytest.approx(res["free_energy"])


def test_infer_refuses_cycles_with_a_witness(capsys):
    code, out, err = run(capsys, "infer", "--config", str(SPECS / "loop.json"))
    assert code == cli.EXIT_REFUSED and out == ""
    assert "cycle" in err and "--loopy" in err
    # the witness names the variables and factors on the cycle
    for name in ("w", "x", "y", "z", "wx", "xy"):
        assert name in err.split("cycle:")[1]


def test_infer_loopy_and_iteration_limit(capsys):
    code, out, _ = run(capsys, "infer", "--config", str(SPECS / "loop.json"), "--loopy")
    assert code == cli.EXIT_OK and json.loads(out)["schedule"] == "loopy"
    code, out, _ = run(capsys, "infer", "--config", str(SPECS / "loop.json"), "--loopy", "--max-iters", "1")
    assert code == cli.EXIT_MAXITER and json.loads(out)["status"] != "converged"


def test_infer_contradiction(capsys):
    code, out, err = run(capsys, "infer", "--config", str(SPECS / "contradiction.json"))
    assert code == cli.EXIT_CONTRADICTION and "contradiction" in err


def test_infer_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "variables": [{"name": "x", "card": 2}],\n "factors": [{"scope": ["q"], "values": [1, 1]}]\n}')
    code, _, err = run(capsys, "infer", "--config", str(bad))
    assert code == cli.EXIT_INPUT
    assert "line 3" in err and "factors[0].scope" in err and "unknown variable" in err
    code, _, err = run(capsys, "infer", "--config", str(tmp_path / "missing.json"))
    assert code == cli.EXIT_INPUT and "cannot read" in err


def test_bad_flags_exit_with_input_error(capsys):
    # argparse exits with status 2 on its own; main maps flag errors to 1
    for argv in (["infer", "--config", "x", "--max-iters", "0"], ["ofdm-ber", "--seed", "-1"],
                 ["ofdm-ber", "--jobs", "many"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == cli.EXIT_INPUT
    capsys.readouterr()


def test_ofdm_ber_csv_and_determinism(tmp_path, capsys):
    scen = tmp_path / "toy.json"
    scen.write_text(json.dumps(TOY))
    args = ["ofdm-ber", "--config", str(scen), "--trials", "3", "--seed", "5"]
    code, out, _ = run(capsys, *args)
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == list(BER_COLUMNS)
    assert len(rows) == 2 * 3
    assert {r["receiver"] for r in rows} == {"bpmf", "bp_gauss", "perfect_csi"}
    target = tmp_path / "ber.csv"
    code, out2, _ = run(capsys, *args, "--out", str(target))
    assert code == cli.EXIT_OK and out2 == ""
    assert target.read_text() == out
    code, out3, _ = run(capsys, *args, "--jobs", "2")
    assert out3 == out


def test_ofdm_ber_input_errors(tmp_path, capsys):
    code, _, err = run(capsys, "ofdm-ber", "--scenario", "nope")
    assert code == cli.EXIT_INPUT
    code, _, err = run(capsys, "ofdm-ber", "--receivers", "zf")
    assert code == cli.EXIT_INPUT and "unknown receivers" in err
    code, _, err = run(capsys, "ofdm-ber", "--config", str(tmp_path / "none.json"))
    assert code == cli.EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_carriers": 4, "n_pilots": 9}')
    code, _, err = run(capsys, "ofdm-ber", "--config", str(bad))
    assert code == cli.EXIT_INPUT and "invalid scenario" in err


def _small_suite(full=False, jobs=1, out=None):
    return [verify.check_tree_exactness(n_instances=5), verify.check_mf_monotone(n_instances=5)]


def test_verify_report_has_anchors(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(verify, "run_checks", _small_suite)
    out_file = tmp_path / "report.txt"
    code, out, _ = run(capsys, "verify", "--out", str(out_file))
    assert code == cli.EXIT_OK
    assert out_file.read_text() == out
    lines = out.splitlines()
    assert lines[0].startswith("[PASS] 1 tree exactness")
    assert sum(line.strip().startswith("anchor:") for line in lines) == 2
    assert lines[-1] == "2/2 checks passed"


def test_verify_catches_a_broken_kernel(monkeypatch, capsys):
    # mutation sanity: invert every sum-product factor message and the suite must notice
    real = message_passing.bp_factor_to_var

    def flipped(*a, **kw):
        return -real(*a, **kw)

    monkeypatch.setattr(message_passing, "bp_factor_to_var", flipped)
    monkeypatch.setattr(scheduler, "bp_factor_to_var", flipped)
    r = verify.check_tree_exactness(n_instances=5)
    assert not r.passed
    monkeypatch.setattr(verify, "run_checks", _small_suite)
    code, out, _ = run(capsys, "verify")
    assert code == cli.EXIT_CHECKS and "[FAIL] 1 tree exactness" in out


def test_console_entry_point(tmp_path):
    # the module entry point behaves like main(): stdout carries the result, the exit code the status
    proc = subprocess.run([sys.executable, "-m", "bpmf", "infer", "--config", str(SPECS / "loop.json")],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == cli.EXIT_REFUSED and "refused" in proc.stderr
