"""End-to-end CLI behaviour through in-process main() calls."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from lobeval.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from lobeval.generator import RateProfile

QUICK_CFG = {
    "bootstrap_iters": 100,
    "scores": ["spread", "imbalance", "interarrival_time"],
    "conditionals": [],
    "discriminator": {"enabled": True, "window": 60, "epochs": 3,
                      "n_filters": 8},
}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    for sub, seed in (("real", 31), ("generated", 32)):
        code = main(["simulate", "--out", str(root / sub), "--stem", "seq0",
                     "--n-messages", "5000", "--seed", str(seed)])
        assert code == EXIT_OK
    return root


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "quick.json"
    path.write_text(json.dumps(QUICK_CFG))
    return path


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err.lower()


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["rates"]) == EXIT_USAGE


def test_simulate_writes_lobster_pair(data_dir):
    mfile = data_dir / "real" / "seq0_message.csv"
    bfile = data_dir / "real" / "seq0_orderbook.csv"
    assert mfile.exists() and bfile.exists()
    assert len(mfile.read_text().splitlines()) == 5000


def test_simulate_is_deterministic(tmp_path, data_dir):
    code = main(["simulate", "--out", str(tmp_path), "--stem", "seq0",
                 "--n-messages", "5000", "--seed", "31"])
    assert code == EXIT_OK
    assert (tmp_path / "seq0_message.csv").read_bytes() == \
        (data_dir / "real" / "seq0_message.csv").read_bytes()
    assert (tmp_path / "seq0_orderbook.csv").read_bytes() == \
        (data_dir / "real" / "seq0_orderbook.csv").read_bytes()


def test_validate_reports_dataset(data_dir, capsys):
    assert main(["validate", "--data", str(data_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "real: 1 sequences, 5000 messages" in out
    assert "no warnings" in out


def test_validate_missing_root_is_data_error(tmp_path, capsys):
    assert main(["validate", "--data", str(tmp_path / "nope")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_validate_crossed_book_names_row(tmp_path, data_dir, capsys):
    corrupt = tmp_path / "corrupt"
    for sub in ("real", "generated"):
        (corrupt / sub).mkdir(parents=True)
        for f in (data_dir / sub).iterdir():
            (corrupt / sub / f.name).write_bytes(f.read_bytes())
    bfile = corrupt / "real" / "seq0_orderbook.csv"
    lines = bfile.read_text().splitlines()
    cells = lines[41].split(",")
    cells[2] = str(int(cells[0]) + 100)  # bid through the ask
    lines[41] = ",".join(cells)
    bfile.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--data", str(corrupt)]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "row 42" in err


def test_rates_round_trips_profile(data_dir, tmp_path, capsys):
    prof_path = tmp_path / "profile.json"
    assert main(["rates", "--data", str(data_dir), "--out",
                 str(prof_path)]) == EXIT_OK
    profile = RateProfile.from_dict(json.loads(prof_path.read_text()))
    assert profile.limit_rate.shape[0] == 2
    code = main(["simulate", "--out", str(tmp_path / "resim"),
                 "--stem", "r0", "--n-messages", "2000", "--seed", "7",
                 "--profile", str(prof_path), "--perturb", "limit", "2.0"])
    assert code == EXIT_OK
    assert (tmp_path / "resim" / "r0_message.csv").exists()


def test_simulate_bad_perturb_factor(tmp_path, capsys):
    code = main(["simulate", "--out", str(tmp_path), "--perturb",
                 "limit", "fast"])
    assert code == EXIT_USAGE
    assert "not a number" in capsys.readouterr().err


def test_run_benchmark_end_to_end(data_dir, cfg_path, tmp_path, capsys):
    out = tmp_path / "report"
    code = main(["run", "--config", str(cfg_path), "--data", str(data_dir),
                 "--out", str(out)])
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert "mean L1" in stdout
    assert "discriminator AUC" in stdout
    doc = json.loads((out / "report.json").read_text())
    assert [s["name"] for s in doc["scores"]] == list(QUICK_CFG["scores"])
    assert doc["metadata"]["data_root"] == str(data_dir)


def test_run_jobs_flag_keeps_bytes_identical(data_dir, cfg_path, tmp_path):
    outs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"jobs{jobs}"
        assert main(["run", "--config", str(cfg_path), "--data",
                     str(data_dir), "--out", str(out), "--jobs",
                     jobs]) == EXIT_OK
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_run_unknown_config_key(data_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bootstrap_iterations": 5}))
    code = main(["run", "--config", str(bad), "--data", str(data_dir),
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_ablate_bins_table_and_csv(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scores": ["spread", "ask_volume"]}))
    out = tmp_path / "ablation"
    code = main(["ablate-bins", "--config", str(cfg), "--data",
                 str(data_dir), "--out", str(out),
                 "--factors", "0.5", "2.0"])
    assert code == EXIT_OK
    table = capsys.readouterr().out
    assert "x0.5" in table and "x1" in table and "x2" in table
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "score,width_factor,l1"
    assert len(lines) == 1 + 2 * 3  # two scores, three factors


def test_ablate_bins_needs_data(capsys):
    assert main(["ablate-bins"]) == EXIT_USAGE
