import csv
import hashlib
import json
import math

import numpy as np
import pytest

from iwsft import diffnum, io
from iwsft.cli import bound_sweep_rows, main
from iwsft.config import bundled_configs
from iwsft.diffnum import PolicyParams
from iwsft.envs import BanditSpec, ChainMDPSpec

from conftest import returns_dataset
from oracles import brute_curate


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_cfg(path, **kw):
    path.write_text(json.dumps(kw))
    return path


def test_generate_bandit(tmp_path, capsys):
    out = tmp_path / "b.jsonl"
    assert main(["generate", "--env", "bandit", "--n", "1000", "--seed", "3", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "wrote 1000 trajectories" in text and "mean" in text
    lines = out.read_bytes().splitlines()
    assert len(lines) == 1001
    ds, _ = io.load_dataset(out)
    from iwsft.envs import generate_bandit_data

    assert ds == generate_bandit_data(BanditSpec(), 1000, 3)


@pytest.mark.parametrize("env", ["bandit", "chain", "pointmass"])
def test_generate_byte_identical(tmp_path, env):
    a, b = tmp_path / "a", tmp_path / "b"
    for p in (a, b):
        assert main(["generate", "--env", env, "--n", "50", "--seed", "11", "--out", str(p)]) == 0
    assert sha(a) == sha(b)


def test_seed_env_fallback(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("IWSFT_SEED", "11")
    main(["generate", "--env", "bandit", "--n", "50", "--out", str(a)])
    monkeypatch.delenv("IWSFT_SEED")
    main(["generate", "--env", "bandit", "--n", "50", "--seed", "11", "--out", str(b)])
    assert sha(a) == sha(b)


def test_curate_quality_bins(tmp_path, capsys):
    returns = [float(r) for r in range(1, 101)]
    src = tmp_path / "d.jsonl"
    io.save_dataset(returns_dataset(returns), src)
    assert main(["curate", "--in", str(src), "--out", str(tmp_path / "c.json"), "--cutoffs", "90,95,98"]) == 0
    out = capsys.readouterr().out
    oracle = brute_curate(returns, [90, 95, 98])
    sizes = [sum(1 for m in oracle.values() if m >= c) for c in (1, 2, 3)]
    assert f"bin sizes {' '.join(map(str, sizes))}" in out
    assert "thresholds 90.1 95.05 98.02" in out


def test_curate_binary_bandit_composition(tmp_path, capsys):
    src = tmp_path / "b.jsonl"
    main(["generate", "--env", "bandit", "--n", "10000", "--seed", "0", "--out", str(src)])
    capsys.readouterr()
    assert main(["curate", "--in", str(src), "--out", str(tmp_path / "c.json"), "--threshold", "0"]) == 0
    line = [x for x in capsys.readouterr().out.splitlines() if x.startswith("composition")][0]
    counts = dict(tok.split("=") for tok in line.split()[1:])
    assert int(counts["action1"]) / int(counts["action0"]) == pytest.approx(2.0, abs=0.1)


def test_curate_empty_exit_code(tmp_path, capsys):
    src = tmp_path / "d.jsonl"
    io.save_dataset(returns_dataset([1.0, 1.0, 1.0]), src)
    assert main(["curate", "--in", str(src), "--out", str(tmp_path / "c"), "--cutoffs", "50"]) == 1
    assert "empty curated set" in capsys.readouterr().err


def test_curate_needs_one_mode(tmp_path):
    src = tmp_path / "d.jsonl"
    io.save_dataset(returns_dataset([1.0, 2.0]), src)
    assert main(["curate", "--in", str(src), "--out", str(tmp_path / "c")]) == 1


def test_train_with_mismatched_curated_hash(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["generate", "--env", "bandit", "--n", "200", "--seed", "0", "--out", str(a)])
    main(["generate", "--env", "bandit", "--n", "200", "--seed", "1", "--out", str(b)])
    main(["curate", "--in", str(a), "--out", str(tmp_path / "c.json"), "--threshold", "0"])
    cfg = write_cfg(tmp_path / "t.cfg", dataset="b.jsonl", curated="c.json", total_steps=2, batch_size=4,
                    pretrain_steps=1)
    capsys.readouterr()
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 1
    assert "curated set was built from" in capsys.readouterr().err


def test_train_from_files(tmp_path):
    d = tmp_path / "d.jsonl"
    main(["generate", "--env", "bandit", "--n", "500", "--seed", "0", "--out", str(d)])
    main(["curate", "--in", str(d), "--out", str(tmp_path / "c.json"), "--threshold", "0"])
    cfg = write_cfg(tmp_path / "t.cfg", dataset="d.jsonl", curated="c.json", env="bandit", hidden=[], bias=False,
                    total_steps=5, batch_size=8, pretrain_steps=2, eval_episodes=10)
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 0
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["steps"] == 5
    assert diffnum.load_checkpoint(tmp_path / "run" / "checkpoint.bin").layout == BanditSpec().layout()


def _bundled(name):
    return [p for p in bundled_configs() if p.name == name][0]


def test_bundled_bandit_sft(tmp_path):
    assert main(["train", "--config", str(_bundled("bandit_sft.cfg")), "--out-dir", str(tmp_path)]) == 0
    p = json.loads((tmp_path / "summary.json").read_text())["eval"]["p_right"]
    assert 0.64 <= p <= 0.70


def test_bundled_bandit_iwsft(tmp_path):
    assert main(["train", "--config", str(_bundled("bandit_iwsft.cfg")), "--out-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["eval"]["p_right"] >= 0.99


def test_bundled_configs_present():
    names = {p.name for p in bundled_configs()}
    assert {"bandit_sft.cfg", "bandit_iwsft.cfg", "pointmass_sft.cfg", "pointmass_sftq.cfg",
            "pointmass_iwsftq.cfg"} <= names


def test_train_missing_dataset_names_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "t.cfg", dataset="nope.jsonl", threshold=0.0)
    assert main(["train", "--config", str(cfg)]) == 1
    assert "'dataset'" in capsys.readouterr().err
    cfg = write_cfg(tmp_path / "t2.cfg", threshold=0.0)
    assert main(["train", "--config", str(cfg)]) == 1
    assert "'dataset'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "key,value",
    [("batch_size", "big"), ("mode", "PPO"), ("alpha_min", 2.0), ("bogus", 1), ("warmup_steps", 5000),
     ("pretrain_init", "ones"), ("ema_alpha", 1.0)],
)
def test_train_invalid_field_named(tmp_path, capsys, key, value):
    cfg = write_cfg(tmp_path / "t.cfg", dataset="generate", env="bandit", threshold=0.0, **{key: value})
    assert main(["train", "--config", str(cfg)]) == 1
    assert f"'{key}'" in capsys.readouterr().err


def test_train_divergence_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "t.cfg", dataset="generate", env="bandit", n=100, threshold=0.0, hidden=[],
                    pretrain_steps=1, total_steps=20, peak_lr=1e306, weight_decay=10.0, eval_episodes=0)
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(cfg)]) == 2
    assert "non-finite" in capsys.readouterr().err


def _bandit_ckpt(tmp_path, logits, name):
    p = PolicyParams(np.array(logits), BanditSpec().layout())
    diffnum.save_checkpoint(p, tmp_path / name)
    return str(tmp_path / name)


def test_eval_always_right(tmp_path, capsys):
    ck = _bandit_ckpt(tmp_path, [-50.0, 50.0], "r.bin")
    out_csv = tmp_path / "e.csv"
    assert main(["eval", "--checkpoint", ck, "--env", "bandit", "--episodes", "1000", "--seed", "0",
                 "--csv", str(out_csv)]) == 0
    assert "mc_return_mean 1.0" in capsys.readouterr().out
    rows = list(csv.DictReader(out_csv.open()))
    assert float(rows[0]["mc_return_mean"]) == 1.0


def test_eval_uniform_exact(tmp_path, capsys):
    ck = _bandit_ckpt(tmp_path, [0.0, 0.0], "u.bin")
    assert main(["eval", "--checkpoint", ck, "--env", "bandit", "--episodes", "10", "--exact"]) == 0
    line = [x for x in capsys.readouterr().out.splitlines() if x.startswith("exact_J")][0]
    assert float(line.split()[1]) == pytest.approx(0.75, abs=1e-15)


def test_eval_zero_episodes_usage_error(tmp_path):
    ck = _bandit_ckpt(tmp_path, [0.0, 0.0], "u.bin")
    assert main(["eval", "--checkpoint", ck, "--env", "bandit", "--episodes", "0"]) == 1


def test_eval_layout_mismatch(tmp_path, capsys):
    ck = _bandit_ckpt(tmp_path, [0.0, 0.0], "u.bin")
    assert main(["eval", "--checkpoint", ck, "--env", "pointmass", "--episodes", "5"]) == 1
    assert "layout" in capsys.readouterr().err


def test_eval_missing_checkpoint_runtime_error(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none"), "--env", "bandit", "--episodes", "5"]) == 2


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--env", "moon", "--n", "1", "--out", "x"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_bound_sweep_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["bound-sweep", "--probes", "30", "--out", str(out), "--seed", "2", "--with-reference"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 31
    assert list(rows[0]) == ["probe", "kl", "exact_J", "sft_bound", "iw_bound"]
    first = rows[0]
    assert float(first["kl"]) == 0.0
    assert float(first["exact_J"]) == pytest.approx(float(first["sft_bound"]), abs=1e-15)
    assert float(first["exact_J"]) == pytest.approx(float(first["iw_bound"]), abs=1e-15)
    for r in rows:
        assert float(r["iw_bound"]) <= float(r["exact_J"]) + 1e-10
        assert float(r["sft_bound"]) <= float(r["iw_bound"]) + 1e-10
    again = tmp_path / "t.csv"
    main(["bound-sweep", "--probes", "30", "--out", str(again), "--seed", "2", "--with-reference"])
    assert sha(out) == sha(again)


def test_bound_sweep_rows_direct():
    rows = bound_sweep_rows(ChainMDPSpec.random(3, 3, 1), 5, seed=0)
    assert len(rows) == 5 and all(0 < r[1] <= 0.1 + 1e-12 for r in rows)
    assert all(math.isfinite(x) for r in rows for x in r)
