import json
import subprocess
import sys

import pytest

from eriflow.cli import main
from eriflow.validate import FIXTURE_ENERGIES


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_compile_stats(tmp_path, capsys):
    path = tmp_path / "stats.json"
    code, out, _ = run(["compile", "--class", "1,1,0,0", "--lambda", "0.1", "--stats-json", str(path)], capsys)
    assert code == 0
    stats = json.loads(path.read_text())
    assert stats["class"] == [1, 1, 0, 0]
    assert {"op_count", "slot_count", "node_count", "reuse_count"} <= set(stats)
    assert "op_count=" in out


def test_compile_emit_source(tmp_path, capsys):
    path = tmp_path / "kernel.py"
    assert run(["compile", "--class", "1,0,0,0", "--emit-source", str(path)], capsys)[0] == 0
    compile(path.read_text(), str(path), "exec")


def test_compile_all(capsys):
    code, out, _ = run(["compile", "--max-l", "1"], capsys)
    assert code == 0
    assert out.count("class ") == 16


@pytest.mark.parametrize("args", [
    ["compile", "--class", "1,2"],
    ["compile", "--class", "1,x,0,0"],
    ["compile", "--max-l", "-1"],
    ["compile"],
    ["nonsense"],
    ["validate", "bogus"],
    ["scf", "--xyz", "/no/such/file.xyz"],
    ["scf", "--xyz", "water", "--threads", "0"],
    ["scf", "--xyz", "water", "--diis", "maybe"],
    ["scf", "--xyz", "water", "--damping", "1.5"],
    ["scf", "--xyz", "water", "--deterministic", "--contended"],
])
def test_usage_errors(args, capsys):
    assert run(args, capsys)[0] == 2


def test_bad_env_threads(monkeypatch, capsys):
    monkeypatch.setenv("ERIFLOW_THREADS", "many")
    assert run(["scf", "--xyz", "h2"], capsys)[0] == 2


def test_env_threads_default(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("ERIFLOW_THREADS", "2")
    path = tmp_path / "bench.json"
    assert run(["bench", "--xyz", "h2", "--repeats", "1", "--json", str(path)], capsys)[0] == 0
    assert json.loads(path.read_text())["threads"] == 2


def test_scf_json_round_trip(tmp_path, capsys):
    path = tmp_path / "scf.json"
    code, out, _ = run(["scf", "--xyz", "water", "--json", str(path)], capsys)
    assert code == 0
    rec = json.loads(path.read_text())
    assert rec["converged"] is True
    assert abs(rec["energy_hartree"] - FIXTURE_ENERGIES["water"]) < 1e-8
    assert rec["nbasis"] == 7
    assert json.loads(json.dumps(rec)) == rec
    assert "E = " in out


def test_scf_not_converged_exit_code(capsys):
    assert run(["scf", "--xyz", "water", "--max-iter", "1", "--diis", "off"], capsys)[0] == 1


def test_scf_deterministic_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(["scf", "--xyz", "water", "--deterministic", "--json", str(p)], capsys)[0] == 0
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert ra["per_iteration_energies"] == rb["per_iteration_energies"]


def test_input_not_mutated(tmp_path, capsys):
    src = tmp_path / "h2.xyz"
    src.write_text("2\nh2\nH 0 0 0\nH 0 0 0.74\n")
    before = src.read_bytes()
    assert run(["scf", "--xyz", str(src)], capsys)[0] == 0
    assert src.read_bytes() == before


def test_tune_json(tmp_path, capsys):
    path = tmp_path / "tune.json"
    code, _, _ = run(["tune", "--xyz", "h2", "--sample-blocks", "1", "--repeats", "1", "--json", str(path)], capsys)
    assert code == 0
    report = json.loads(path.read_text())
    assert report and {"class", "g_final", "t_history"} <= set(report[0])


def test_bench_json_round_trip(tmp_path, capsys):
    path = tmp_path / "bench.json"
    code, _, _ = run(["bench", "--xyz", "water", "--repeats", "1", "--tune", "--sample-blocks", "1",
                      "--json", str(path)], capsys)
    assert code == 0
    rep = json.loads(path.read_text())
    assert json.loads(json.dumps(rep)) == rep
    assert "tuned" in rep and rep["untuned"]["median_seconds"] > 0


def test_validate_allocator(tmp_path, capsys):
    path = tmp_path / "v.json"
    code, out, _ = run(["validate", "allocator", "--json", str(path)], capsys)
    assert code == 0 and "allocator: PASS" in out
    assert json.loads(path.read_text())["passed"] is True


def test_validate_energies_fixture(capsys):
    code, out, _ = run(["validate", "energies", "--reference", "fixture", "--molecules", "water"], capsys)
    assert code == 0


def test_validate_missing_fixture_fails(capsys):
    code, out, _ = run(["validate", "energies", "--molecules", "water10"], capsys)
    assert code == 1
    assert "no geometry fixture" in out


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "eriflow.cli", "compile", "--class", "0,0,0,0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "op_count=1" in proc.stdout
