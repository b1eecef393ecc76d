import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from htrcf.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = json.dumps({"seed": 2, "node_count": 6, "target_groups": 2, "rsa_bits": 64, "duration_ms": 12000,
                    "churn": [{"time": 2500, "event": "Leave", "node": 3}]})


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(CONFIGS / "minimal.json"), "--out", str(out)]) == 0
    for name in ("trace.jsonl", "report.json", "report.csv"):
        assert (out / name).stat().st_size > 0
    report = json.loads((out / "report.json").read_text())
    assert report["rekey_count"] == 1
    assert "rekeys=1" in capsys.readouterr().out


def test_run_full_trace_has_ciphertexts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, SMALL), "--out", str(out), "--full-trace"]) == 0
    first = json.loads((out / "transcripts.jsonl").read_text().splitlines()[0])
    assert "ciphertext" in first["messages"][0]


def test_unknown_churn_node_exit_1(tmp_path, capsys):
    text = '{\n  "node_count": 3,\n  "duration_ms": 9000,\n  "churn": [\n    {"time": 5, "event": "Leave", "node": 42}\n  ]\n}\n'
    out = tmp_path / "out"
    assert main(["run", "--config", _write(tmp_path, text), "--out", str(out)]) == 1
    assert "line 5" in capsys.readouterr().err
    assert not out.exists()


def test_unwritable_out_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", _write(tmp_path, SMALL), "--out", str(blocker / "sub")]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_compare_text_and_json(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["compare", "--config", cfg]) == 0
    text = capsys.readouterr().out
    for word in ("Power", "Time", "Messages", "paper-reported"):
        assert word in text
    assert main(["compare", "--config", cfg, "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert {r["metric"] for r in data["rows"]} >= {"Power", "Time", "Messages"}
    assert data["reference"]


def test_compare_seed_override(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    main(["compare", "--config", cfg, "--json", "--seed", "9"])
    a = json.loads(capsys.readouterr().out)
    main(["compare", "--config", cfg, "--json"])
    b = json.loads(capsys.readouterr().out)
    assert a["seed"] == 9 and b["seed"] == 2
    assert a["rows"] != b["rows"]


def test_keygen_deterministic(capsys):
    assert main(["keygen", "--node-id", "7", "--bits", "64"]) == 0
    first = capsys.readouterr().out
    assert main(["keygen", "--node-id", "7", "--bits", "64"]) == 0
    assert capsys.readouterr().out == first
    assert first.splitlines()[1].endswith(": ok")
    assert json.loads(first.splitlines()[0])["public"]["n"]


def test_keygen_small_bits_exit_1():
    assert main(["keygen", "--node-id", "7", "--bits", "8"]) == 1


def test_keygen_entropy(capsys):
    assert main(["keygen", "--node-id", "7", "--bits", "32", "--entropy"]) == 0
    assert capsys.readouterr().out.strip().endswith("ok")


def test_handshake_demo(capsys):
    assert main(["handshake-demo", "--seed", "1", "--params", "test"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("honest responder: Verified")
    assert "Rejected" in out[1] and "Rejected" in out[2]


def test_trace_filter(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", _write(tmp_path, SMALL), "--out", str(out)])
    capsys.readouterr()
    trace = str(out / "trace.jsonl")
    assert main(["trace", trace, "--kind", "Leave"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["node"] == 3
    assert main(["trace", trace, "--summary", "--end", "0"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["events"] > 0
    assert main(["trace", str(tmp_path / "missing.jsonl")]) == 2


@pytest.mark.parametrize("cmd", ["run", "compare", "keygen", "handshake-demo", "trace"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["keygen", "--node-id", "1", "--wat"])
    assert exc.value.code != 0


def test_console_script_module():
    env = dict(os.environ, HTRCF_LOG="debug")
    proc = subprocess.run(
        [sys.executable, "-m", "htrcf.cli", "keygen", "--node-id", "3", "--bits", "32"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0 and "ok" in proc.stdout


@pytest.mark.parametrize("name", ["minimal.json", "small.json", "default.json"])
def test_shipped_configs_validate(name):
    from htrcf.sim import load_config

    load_config((CONFIGS / name).read_text())
