"""Command-line interface behaviour."""

import csv
import io
import os

from hybridkv.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_model_verb_prints_closed_forms(capsys):
    code, out, _ = run_cli(
        capsys, "model", "--levels", "3", "--growth", "8", "--simulate",
        "--key-fraction", "1/5",
    )
    assert code == 0
    rows = dict(line.split(": ", 1) for line in out.strip().splitlines())
    assert int(rows["traffic_in_place"]) == 8**3 * (3 - 1 + 8 * 3)
    # simulation agrees with the closed form
    assert rows["simulated_in_place"] == rows["traffic_in_place"]
    assert float(rows["separation_benefit"]) > 1


def test_model_capacity_ratio(capsys):
    code, out, _ = run_cli(
        capsys, "model", "--levels", "5", "--growth", "4", "--capacity-ratio", "1"
    )
    assert code == 0
    rows = dict(line.split(": ", 1) for line in out.strip().splitlines())
    assert abs(float(rows["capacity_ratio"]) - (4**4 - 1) / (4**5 - 1)) < 1e-12


def small_engine_args():
    return [
        "--ram",
        "--capacity", str(64 * 1024 * 1024),
        "--growth", "4",
        "--l0-capacity", str(256 * 1024),
        "--segment-length", str(128 * 1024),
    ]


def test_load_reports_amplification(capsys):
    code, out, _ = run_cli(
        capsys, "load", *small_engine_args(), "--mix", "SD", "--keys", "3000"
    )
    assert code == 0
    rows = dict(line.split(": ", 1) for line in out.strip().splitlines())
    assert float(rows["write_amplification"]) >= 1.0
    assert int(rows["device_write_bytes"]) > 0
    assert rows["fingerprint"]


def test_run_executes_an_op_mix_in_ram(capsys):
    code, out, _ = run_cli(
        capsys, "run", *small_engine_args(),
        "--mix", "SD", "--keys", "2000", "--op-mix", "run-a", "--ops", "2000",
    )
    assert code == 0
    rows = dict(line.split(": ", 1) for line in out.strip().splitlines())
    assert int(rows["ops.total"]) == 2000
    assert int(rows["device.lookup_read"]) > 0


def test_sweep_emits_csv_grid(capsys):
    code, out, _ = run_cli(
        capsys, "sweep", *small_engine_args(),
        "--keys", "1500", "--ops", "1500",
        "--policies", "hybrid,all-in-place", "--mixes", "SD,M", "--op-mixes", "load-a",
    )
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    header, data = rows[0], rows[1:]
    assert header[:4] == ["fingerprint", "policy", "mix", "op_mix"]
    assert len(data) == 4  # 2 policies x 2 mixes x 1 op mix
    assert {r[1] for r in data} == {"hybrid", "all-in-place"}
    for r in data:
        assert float(r[header.index("write_amplification")]) >= 1.0


def test_fsck_clean_store_exits_zero(tmp_path, capsys):
    path = os.fspath(tmp_path / "store.db")
    code, _, _ = run_cli(
        capsys, "load", "--path", path,
        "--capacity", str(64 * 1024 * 1024),
        "--growth", "4", "--l0-capacity", str(256 * 1024),
        "--segment-length", str(128 * 1024),
        "--mix", "S", "--keys", "1000",
    )
    assert code == 0
    code, out, _ = run_cli(capsys, "fsck", "--path", path, "--capacity", str(64 * 1024 * 1024))
    assert code == 0
    assert "clean" in out


def test_stats_verb_reads_existing_store(tmp_path, capsys):
    path = os.fspath(tmp_path / "store.db")
    run_cli(
        capsys, "load", "--path", path,
        "--capacity", str(64 * 1024 * 1024),
        "--growth", "4", "--l0-capacity", str(256 * 1024),
        "--segment-length", str(128 * 1024),
        "--mix", "S", "--keys", "500",
    )
    code, out, _ = run_cli(capsys, "stats", "--path", path, "--capacity", str(64 * 1024 * 1024))
    assert code == 0
    assert "region.default.levels" in out
    assert "space.free_segments" in out


def test_missing_device_arguments_exit_nonzero(capsys):
    code = main(["load", "--mix", "S", "--keys", "10"])
    assert code == 2


def test_errors_exit_with_code_two(tmp_path, capsys):
    code = main(["fsck", "--path", os.fspath(tmp_path / "absent.db")])
    assert code == 2
