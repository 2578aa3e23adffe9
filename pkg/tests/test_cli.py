import json
import subprocess
import sys

import numpy as np
import pytest

from tsadp.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from tsadp.cli import main
from tsadp.config import ConfigError, parse_config
from tsadp.dpg import DpgParams
from tsadp.model import PARAM_NAMES, TsadpModel, init_model
from tsadp.synthbench import SynthConfig, generate_dataset, load_dataset, save_dataset

SMALL = """
[synth]
num_sequences = 10
T = 5
d_visual = 6
d_language = 5
latent_dim = 3

[model]
d_proj = 4
d_out = 4
d_prompt = 4
d_emb = 4

[train]
epochs = 3
batch_size = 4
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "small.ini").write_text(SMALL)
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_data_writes_declared_file(workdir, capsys):
    code, out, _ = run(capsys, "gen-data", "--config", "small.ini", "--out", "a.tsds")
    assert code == 0
    summary = json.loads(out)
    assert summary["sequences"] == 10 and summary["T"] == 5 and summary["seed"] == 0
    data = (workdir / "a.tsds").read_bytes()
    assert data[:4] == b"TSDS"
    assert int.from_bytes(data[8:12], "little") == 10
    assert len(load_dataset("a.tsds")) == 10

    run(capsys, "gen-data", "--config", "small.ini", "--out", "b.tsds")
    assert (workdir / "b.tsds").read_bytes() == data
    run(capsys, "gen-data", "--config", "small.ini", "--out", "c.tsds", "--seed", "3")
    assert (workdir / "c.tsds").read_bytes() != data


def test_gen_data_rejects_zero_sequences(workdir, capsys):
    (workdir / "zero.ini").write_text("[synth]\nnum_sequences = 0\n")
    code, _, err = run(capsys, "gen-data", "--config", "zero.ini")
    assert code == 1 and "num_sequences" in err


def test_unknown_key_is_named(workdir, capsys):
    (workdir / "typo.ini").write_text("[train]\nepoch = 3\n")
    code, _, err = run(capsys, "gen-data", "--config", "typo.ini")
    assert code == 1 and "'epoch'" in err
    with pytest.raises(ConfigError, match="section"):
        parse_config("[optim]\nlr = 1\n")
    with pytest.raises(ConfigError, match="k"):
        parse_config("[loss]\nk = two\n")


def test_config_defaults_and_overrides():
    cfg = parse_config("[loss]\ntau = 0.2\nsymmetric = yes\n[train]\nablation = no_tcl\n")
    assert cfg.loss.tau == 0.2 and cfg.loss.symmetric
    tc = cfg.train_config()
    assert tc.loss.tau == 0.2 and tc.effective_loss().lambda1 == 0.0
    assert parse_config("") == parse_config("[synth]\n")


def test_unwritable_output_is_io_error(workdir, capsys):
    code, _, err = run(capsys, "gen-data", "--out", str(workdir / "missing" / "x.tsds"))
    assert code == 2 and err


def test_train_writes_checkpoint_and_metrics(workdir, capsys):
    run(capsys, "gen-data", "--config", "small.ini")
    code, out, _ = run(capsys, "train", "--config", "small.ini")
    assert code == 0
    summary = json.loads(out)
    assert summary["epochs"] == 3
    rows = (workdir / "metrics.jsonl").read_text().splitlines()
    assert len(rows) == 3
    model = load_checkpoint("model.tsdp")
    assert model.d_visual == 6 and model.d_emb == 4

    run(capsys, "train", "--config", "small.ini", "--out", "again.tsdp", "--metrics", "m2.jsonl")
    assert (workdir / "again.tsdp").read_bytes() == (workdir / "model.tsdp").read_bytes()


def test_train_with_zero_rate_returns_initialisation(workdir, capsys):
    (workdir / "lr0.ini").write_text(SMALL.replace("epochs = 3", "epochs = 1\nlearning_rate = 0"))
    run(capsys, "gen-data", "--config", "lr0.ini")
    assert run(capsys, "train", "--config", "lr0.ini")[0] == 0
    fresh = init_model(6, 5, 4, 4, 4, 4, seed=0)
    assert (workdir / "model.tsdp").read_bytes() == checkpoint_bytes(fresh)


def test_train_no_tcl_flag(workdir, capsys):
    run(capsys, "gen-data", "--config", "small.ini")
    code, out, _ = run(capsys, "train", "--config", "small.ini", "--ablation", "no_tcl")
    assert code == 0 and json.loads(out)["ablation"] == "no_tcl"
    for line in (workdir / "metrics.jsonl").read_text().splitlines():
        r = json.loads(line)
        assert r["loss_tcl"] > 0 and r["loss_total"] == pytest.approx(r["loss_mtp"], rel=1e-12)


def test_train_missing_dataset(workdir, capsys):
    code, _, err = run(capsys, "train", "--dataset", "nope.tsds")
    assert code == 2 and "nope.tsds" in err


def test_train_non_finite_loss(workdir, capsys):
    ds = generate_dataset(SynthConfig(num_sequences=4, T=5, d_visual=6, d_language=5, latent_dim=3))
    ds[1].visual[0, 0] = np.inf
    save_dataset(ds, "dataset.tsds")
    code, _, err = run(capsys, "train", "--config", "small.ini")
    assert code == 1 and "epoch 1" in err


def test_eval_perfect_checkpoint(workdir, capsys):
    eye = np.eye(4)
    perfect = TsadpModel(DpgParams(eye, eye, eye, eye), eye, eye, np.zeros(4), eye)
    save_checkpoint(perfect, "perfect.tsdp")
    ds = generate_dataset(SynthConfig(num_sequences=10, T=6, d_visual=4, d_language=4,
                                      latent_dim=4, noise_scale=0.0),
                          visual_map=eye, language_map=eye)
    save_dataset(ds, "clean.tsds")
    (workdir / "k0.ini").write_text("[loss]\nk = 0\n")
    code, out, _ = run(capsys, "eval", "--config", "k0.ini", "--checkpoint", "perfect.tsdp",
                       "--dataset", "clean.tsds", "--out", "result.json")
    assert code == 0
    result = json.loads(out)
    assert result["retrieval_accuracy"] == 1.0 and result["chronology_mae"] == 0.0
    assert {"chronology_seed", "mask_seed"} <= set(result)
    assert json.loads((workdir / "result.json").read_text()) == result


def test_eval_untrained_is_near_chance(workdir, capsys):
    save_dataset(generate_dataset(SynthConfig(num_sequences=60, seed=1)), "held.tsds")
    save_checkpoint(init_model(16, 16, seed=2), "init.tsdp")
    code, out, _ = run(capsys, "eval", "--checkpoint", "init.tsdp", "--dataset", "held.tsds")
    result = json.loads(out)
    assert code == 0
    assert abs(result["retrieval_accuracy"] - 0.125) <= 0.1
    assert abs(result["chronology_mae"] - 2.625) <= 0.5


def test_eval_dimension_mismatch(workdir, capsys):
    save_dataset(generate_dataset(SynthConfig(num_sequences=2, d_visual=5)), "d.tsds")
    save_checkpoint(init_model(16, 16), "m.tsdp")
    code, _, err = run(capsys, "eval", "--checkpoint", "m.tsdp", "--dataset", "d.tsds")
    assert code == 1 and "dims" in err


def test_gradcheck_default_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and "PASS" in out
    for name in PARAM_NAMES:
        assert name in out


def test_gradcheck_planted_fault_fails(capsys):
    code, out, _ = run(capsys, "gradcheck", "--plant-fault", "--json")
    record = json.loads(out)
    assert code == 1 and not record["passed"]
    worst = max(record["params"], key=lambda p: p["max_rel_error"])
    assert worst["name"] == "w_q" and worst["argmax"] == [0, 0]


def test_gradcheck_vacuous_tolerance(workdir, capsys):
    (workdir / "loose.ini").write_text("[gradcheck]\ntolerance = 1e9\nd = 4\nT = 3\n")
    assert run(capsys, "gradcheck", "--config", "loose.ini", "--plant-fault")[0] == 0


def test_inspect_lists_parameters(workdir, capsys):
    save_checkpoint(init_model(5, 3, seed=1), "m.tsdp")
    code, out, _ = run(capsys, "inspect", "--checkpoint", "m.tsdp", "--json")
    assert code == 0
    rows = json.loads(out)["params"]
    assert [r["name"] for r in rows] == list(PARAM_NAMES)
    token = rows[PARAM_NAMES.index("mask_token")]
    assert token["norm"] == 0.0 and token["shape"] == [1, 5]


def test_inspect_format_errors(workdir, capsys):
    save_checkpoint(init_model(3, 3), "m.tsdp")
    data = bytearray((workdir / "m.tsdp").read_bytes())
    data[4] = 9
    (workdir / "v.tsdp").write_bytes(bytes(data))
    code, _, err = run(capsys, "inspect", "--checkpoint", "v.tsdp")
    assert code == 2 and "version" in err
    data[4] = 1
    (workdir / "t.tsdp").write_bytes(bytes(data[:-3]))
    code, _, err = run(capsys, "inspect", "--checkpoint", "t.tsdp")
    assert code == 2 and "truncated" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tsadp.cli", "inspect", "--checkpoint",
                           str(tmp_path / "absent.tsdp")], capture_output=True, text=True)
    assert proc.returncode == 2
