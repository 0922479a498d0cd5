import json

import pytest

from nsvtp.cli import main

from conftest import DATA


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- sweep -------------------------------------------------------------------


def test_sweep_writes_csv_and_summary(tmp_path, capsys):
    out = tmp_path / "eta.csv"
    code, stdout, _ = run(capsys, "sweep", "--rho-steps", "4", "--ratio-steps", "3", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "rho,tcomp_over_delta,eta,feasible" and len(lines) == 13
    assert stdout.startswith("min eta=0.6")


def test_sweep_all_infeasible_exits_1(capsys):
    code, _, err = run(capsys, "sweep", "--rho-min", "5", "--rho-max", "10", "--ratio-min", "1", "--ratio-max", "2")
    assert code == 1 and "no feasible cell" in err


def test_sweep_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"rho_steps": 2, "ratio_steps": 2}, "model": {"P3": 0.001}}))
    code, _, err = run(capsys, "sweep", "--config", str(cfg), "--p3", "107.8", "--rho-steps", "1")
    assert code == 0
    assert "feasible 2/2" in err and "min eta=0.622594" in err


@pytest.mark.parametrize("argv", [["--fmin", "5"], ["--rho-min", "-1"], ["--rho-steps", "0"]])
def test_sweep_bad_config_exits_2(capsys, argv):
    code, _, err = run(capsys, "sweep", *argv)
    assert code == 2 and err.startswith("ConfigError")


def test_sweep_equal_frequencies_all_one(capsys):
    code, out, _ = run(capsys, "sweep", "--fmin", "3", "--rho-steps", "3", "--ratio-steps", "3")
    values = {float(line.split(",")[2]) for line in out.splitlines()[1:] if line.endswith("true")}
    assert code == 0 and values == {1.0}


# -- simulate ----------------------------------------------------------------


def test_simulate_report_and_trace(tmp_path, capsys):
    trace = tmp_path / "trace.jsonl"
    code, out, _ = run(capsys, "simulate", "--out", str(trace))
    assert code == 0
    report = json.loads(out)
    assert report["abs_diff"] < 1e-9 and report["middle_decodes"] == 0 and report["main_results"] == 100
    events = [json.loads(line) for line in trace.read_text().splitlines()]
    assert events[0]["kind"] == "tx.deposit"


def test_simulate_shipped_scenario(capsys):
    code, out, _ = run(capsys, "simulate", "--config", str(DATA / "scenario_rotation.json"))
    assert code == 0 and json.loads(out)["main_results"] == 100


def test_simulate_infeasible_delta_exits_2(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"workload": {"rho": 2}, "delta": 0.3}))
    code, _, err = run(capsys, "simulate", "--config", str(cfg))
    assert code == 2 and "ConfigError" in err


def test_simulate_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"wrkload": {}}))
    assert run(capsys, "simulate", "--config", str(cfg))[0] == 2


def test_simulate_pool_exhausted_exits_1(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"failures": [{"component": "os-01", "time": 1.0}], "workload": {"cycles": 3}}))
    code, _, err = run(capsys, "simulate", "--config", str(cfg))
    assert code == 1 and err.startswith("PoolExhausted")


# -- capsule -----------------------------------------------------------------


def test_capsule_encode_decode(tmp_path, capsys):
    status = tmp_path / "status.json"
    status.write_text('{"frequency": 3.0}')
    xid = tmp_path / "xid.txt"
    code, _, _ = run(
        capsys, "capsule", "encode", "--id", "cpu-core-017",
        "--blueprint", str(DATA / "dvfs_high.scheme"), "--status", str(status), "--out", str(xid),
    )
    assert code == 0 and xid.read_bytes().startswith(b"cpu-core-017#")
    code, out, _ = run(capsys, "capsule", "decode", str(xid))
    assert code == 0
    assert out.startswith("id: cpu-core-017\ndirection: northwise\nstatus: {\"frequency\":3.0}\n")
    assert out.endswith((DATA / "dvfs_high.scheme").read_text())
    code, out, _ = run(capsys, "capsule", "decode", str(xid), "--blueprint-only")
    assert out == (DATA / "dvfs_high.scheme").read_text()


def test_capsule_decode_bare_id(tmp_path, capsys):
    f = tmp_path / "x"
    f.write_text("vm-9\n")
    assert run(capsys, "capsule", "decode", str(f))[1] == "id: vm-9\nno capsule\n"


def test_capsule_decode_malformed_exits_2(tmp_path, capsys):
    f = tmp_path / "x"
    f.write_text("vm-9#AQEAEAAFYWJj")
    code, _, err = run(capsys, "capsule", "decode", str(f))
    assert code == 2 and err.startswith("TruncatedStream")


def test_capsule_encode_syntax_error_exits_2(tmp_path, capsys):
    bp = tmp_path / "bad.scheme"
    bp.write_text('blueprint "x" revision 1 {\n  scheme s { param p : [1, ; }\n}\n')
    code, _, err = run(capsys, "capsule", "encode", "--id", "c", "--blueprint", str(bp))
    assert code == 2 and "line 2, column 28" in err


# -- tx-demo -----------------------------------------------------------------


def test_tx_demo_steps(capsys):
    code, out, _ = run(capsys, "tx-demo")
    assert code == 0
    order = ["deposits", "relay_key", "claims", "released", "forwards k''", "(tweak; tweak)", "settled"]
    positions = [out.index(word) for word in order]
    assert positions == sorted(positions)
    assert "TX-addressed messages after release: 0" in out


def test_tx_demo_direct_has_no_exchange(capsys):
    code, out, _ = run(capsys, "tx-demo", "--direct")
    assert code == 0 and "TX events in trace: 0" in out


def test_tx_demo_wrong_layer(capsys):
    code, out, err = run(capsys, "tx-demo", "--claimant-layer", "2")
    assert code == 1
    assert err.startswith("LayerMismatch") and "claim rejected: LayerMismatch" in out
