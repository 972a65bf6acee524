import subprocess
import sys

import numpy as np
import pytest

from rbmstop.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main
from rbmstop.datasets import gen_bars_and_stripes, load_dataset
from rbmstop.metrics import read_csv
from rbmstop.neighborhood import load_index
from rbmstop.pbm import read_pbm

CONFIG = """
[dataset]
family = ran
n_visible = 6

[model]
n_hidden = 3

[training]
learning_rate = 0.1
epochs = 100
measure_every = 10

[monitors]
xi = DA:1
sampled_xi = 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(CONFIG)
    return path


def test_gen_data_and_neighborhood(tmp_path, capsys):
    data = tmp_path / "bs.txt"
    assert main(["gen-data", "--family", "bs", "--out", str(data)]) == EXIT_OK
    assert load_dataset(data) == gen_bars_and_stripes()
    shells = tmp_path / "bs.shells"
    assert main(["build-neighborhood", "--data", str(data), "--d-max", "2", "--out", str(shells)]) == EXIT_OK
    assert load_index(shells).sizes() == [30, 480, 3216]
    assert "d=1\t480" in capsys.readouterr().out


def test_gen_random_dataset(tmp_path):
    out = tmp_path / "ran.txt"
    assert main(["gen-data", "--family", "ran", "--n-visible", "12", "--seed", "3", "--out", str(out)]) == 0
    assert len(load_dataset(out)) == 64


def test_train_aggregate_detect_sample_render(tmp_path, config, capsys):
    out = tmp_path / "run"
    code = main(["train", "--config", str(config), "--seeds", "0-1", "--out", str(out),
                 "--epochs", "60", "--measure-every", "10"])
    assert code == EXIT_OK
    assert read_csv(out / "trace_seed1.csv").epochs == [0, 10, 20, 30, 40, 50, 60]

    agg = tmp_path / "agg.csv"
    assert main(["aggregate", str(out / "trace_seed0.csv"), str(out / "trace_seed1.csv"),
                 "--out", str(agg)]) == EXIT_OK
    assert agg.read_bytes() == (out / "aggregate.csv").read_bytes()

    capsys.readouterr()
    assert main(["detect-stop", "--trace", str(agg), "--column", "log_xi_DA_d1"]) == EXIT_OK
    line = capsys.readouterr().out.strip().split("\t")
    assert line[0] == "log_xi_DA_d1" and int(line[1]) in range(0, 61, 10)

    samples = tmp_path / "samples.txt"
    assert main(["sample", "--params", str(out / "params_seed0.npz"), "--stop-trace", str(agg),
                 "--stop-column", "log_xi_DAs_d1", "--count", "8", "--burn-in", "10",
                 "--thin", "2", "--out", str(samples)]) == EXIT_OK
    lines = [ln for ln in samples.read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 8 and all(len(ln) == 6 for ln in lines)

    image = tmp_path / "samples.pbm"
    assert main(["render", "--states", str(samples), "--rows", "2", "--cols", "3",
                 "--per-row", "4", "--out", str(image)]) == EXIT_OK
    assert read_pbm(image).shape == (2 * 2 + 1, 4 * 3 + 3)


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[dataset]\nfamily = nope\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "nope" in capsys.readouterr().err


def test_exit_code_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["no-such-verb"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["gen-data"])
    assert info.value.code == EXIT_CONFIG


def test_exit_code_io_error(tmp_path):
    assert main(["build-neighborhood", "--data", str(tmp_path / "missing.txt"), "--d-max", "1",
                 "--out", str(tmp_path / "o")]) == EXIT_IO
    bad = tmp_path / "bad.txt"
    bad.write_text("0120\n")
    assert main(["build-neighborhood", "--data", str(bad), "--d-max", "1",
                 "--out", str(tmp_path / "o")]) == EXIT_IO


def test_exit_code_divergence(tmp_path, config):
    config.write_text(CONFIG + "max_abs_weight = 2\n")
    code = main(["train", "--config", str(config), "--seeds", "0", "--out", str(tmp_path / "d"),
                 "--learning-rate", "5"])
    assert code == EXIT_DIVERGED


def test_unknown_stop_column(tmp_path, config):
    out = tmp_path / "run"
    main(["train", "--config", str(config), "--seeds", "0", "--out", str(out), "--epochs", "50"])
    assert main(["detect-stop", "--trace", str(out / "aggregate.csv"), "--column", "nope"]) == EXIT_CONFIG


def test_render_shape_mismatch(tmp_path):
    states = tmp_path / "s.txt"
    states.write_text("0101\n")
    assert main(["render", "--states", str(states), "--rows", "3", "--cols", "3",
                 "--out", str(tmp_path / "x.pbm")]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    out = tmp_path / "bs.txt"
    proc = subprocess.run([sys.executable, "-m", "rbmstop.cli", "gen-data", "--family", "lse",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert np.asarray(load_dataset(out)).shape == (768, 19)
