import csv
import json
from pathlib import Path

import pytest

from fsip.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from fsip.config import load_toml, run_config, train_config
from fsip.harness import CSV_COLUMNS, ConfigError, load_dataset
from fsip.neural import load_checkpoint

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = """
[run]
S = 12
T = 4
Nr = 2
Nt = 2
layers = [2]
mcs = [3]
alpha = 0.2
V = 2
snr_db = [10.0]
slots = 4
batch = 4

[train]
width = 4
n_blocks = 1
batch = 2
steps = 2
log_every = 1
snr_db = [0.0, 20.0]
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def test_include_merge_and_override(tmp_path):
    (tmp_path / "a.toml").write_text('[run]\nS = 12\nT = 4\nlabel = "a"\n[train]\nwidth = 8\n')
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "b.toml").write_text('include = "../a.toml"\n[run]\nlabel = "b"\ncheckpoint = "m.ckpt"\n')
    doc = load_toml(tmp_path / "sub" / "b.toml")
    assert doc["run"] == {"S": 12, "T": 4, "label": "b",
                          "checkpoint": str((tmp_path / "sub" / "m.ckpt").resolve())}
    assert doc["train"]["width"] == 8 and "include" not in doc


def test_include_errors(tmp_path):
    (tmp_path / "x.toml").write_text('include = "y.toml"\n')
    (tmp_path / "y.toml").write_text('include = "x.toml"\n')
    with pytest.raises(ConfigError, match="cycle"):
        load_toml(tmp_path / "x.toml")
    with pytest.raises(ConfigError):
        load_toml(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[run\n")
    with pytest.raises(ConfigError):
        load_toml(tmp_path / "bad.toml")


def test_run_and_train_config(tiny):
    doc = load_toml(tiny)
    rc = run_config(doc, seed=9)
    assert rc.seed == 9 and rc.S == 12
    tc = train_config(doc)
    assert (tc.S, tc.alpha, tc.V, tc.width, tc.steps) == (12, 0.2, 2, 4, 2)
    with pytest.raises(ConfigError):
        train_config({"train": {"nonsense": 1}})
    with pytest.raises(ConfigError):
        run_config({"run": {"nonsense": 1}})


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    doc = load_toml(path)
    run_config(doc)
    train_config(doc)


def test_cli_sweep_and_pilotbook(tiny, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(tiny), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert tuple(rows[0]) == CSV_COLUMNS and rows[0]["scheme"] == "sip-classical"
    pb = tmp_path / "pb.json"
    assert main(["pilotbook", "--config", str(tiny), "--out", str(pb), "--seed", "3"]) == 0
    book = json.loads(pb.read_text())
    assert book["L"] == 2 and book["seed"] == 3


def test_cli_dataset(tiny, tmp_path):
    out = tmp_path / "d.bin"
    assert main(["dataset", "--config", str(tiny), "--out", str(out), "-n", "3"]) == 0
    assert len(load_dataset(out)) == 3


def test_cli_train_then_eval(tiny, tmp_path):
    ck = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(tiny), "--out", str(ck)]) == 0
    log = (tmp_path / "m.jsonl").read_text().splitlines()
    assert len(log) == 2 and json.loads(log[0])["step"] == 1
    rx, header = load_checkpoint(ck)
    assert rx.config.width == 4
    ev = tmp_path / "ev.toml"
    ev.write_text(f'include = "{tiny.name}"\n[[eval.models]]\nlabel = "a"\ncheckpoint = "m.ckpt"\n'
                  f'[[eval.models]]\nlabel = "b"\ncheckpoint = "m.ckpt"\n')
    out = tmp_path / "ev.csv"
    assert main(["eval", "--config", str(ev), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["scheme"] for r in rows] == ["a", "b"]
    # an untrained-size model (two Adam steps) cannot decode anything yet
    assert all(float(r["bler"]) == 1.0 for r in rows)
    diag = [json.loads(x) for x in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert len(diag[0]["ce_mse"]) == 2


def test_cli_config_errors(tiny, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["sweep", "--config", str(tmp_path / "none.toml"), "--out", out]) == EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text('[run]\nscheme = "warp-drive"\n')
    assert main(["sweep", "--config", str(bad), "--out", out]) == EXIT_CONFIG
    neural = tmp_path / "n.toml"
    neural.write_text(TINY.replace("[run]", '[run]\nscheme = "sip-neural"\ncheckpoint = "nowhere.ckpt"'))
    assert main(["sweep", "--config", str(neural), "--out", out]) == EXIT_CONFIG
    assert "checkpoint not found" in capsys.readouterr().err


def test_cli_checkpoint_mismatch(tiny, tmp_path):
    ck = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(tiny), "--out", str(ck), "--steps", "1"]) == 0
    other = tmp_path / "o.toml"
    other.write_text(TINY.replace("S = 12", "S = 24").replace("[run]", '[run]\nscheme = "sip-neural"\ncheckpoint = "m.ckpt"'))
    assert main(["sweep", "--config", str(other), "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_cli_numerical_failure(tiny, tmp_path, monkeypatch):
    import fsip.neural as nm
    orig = nm.iteration_loss
    monkeypatch.setattr(nm, "iteration_loss",
                        lambda *a, **k: tuple(x * float("nan") for x in orig(*a, **k)))
    assert main(["train", "--config", str(tiny), "--out", str(tmp_path / "m.ckpt")]) == EXIT_NUMERIC
