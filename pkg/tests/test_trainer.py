import numpy as np
import pytest

from iwsft import diffnum
from iwsft.curation import curate_quality, filter_binary
from iwsft.diffnum import Layout, PolicyParams
from iwsft.envs import PULL_RIGHT, BanditSpec, PointMassEnv, generate_bandit_data, generate_pointmass_data
from iwsft.objectives import Mode, WeightConfig
from iwsft.trainer import (
    METRICS_HEADER,
    Adam,
    TrainConfig,
    TrainingDivergedError,
    lr_at,
    metrics_csv,
    pretrain_bc,
    train,
)

BANDIT = BanditSpec().layout()


@pytest.fixture(scope="module")
def bandit_curated():
    return filter_binary(generate_bandit_data(BanditSpec(), 10_000, seed=0), 0.0)


def p_right(params):
    return float(diffnum.action_probs(params, np.ones((1, 1)))[0, PULL_RIGHT])


def bandit_cfg(**kw):
    base = dict(mode=Mode.SFT, batch_size=256, total_steps=500, warmup_steps=20, peak_lr=0.05, seed=1)
    base.update(kw)
    return TrainConfig(**base)


# -- schedule ---------------------------------------------------------------------


def test_lr_schedule_points():
    cfg = TrainConfig(total_steps=1000, warmup_steps=100, peak_lr=3e-4)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(100, cfg) == 3e-4
    assert lr_at(50, cfg) == pytest.approx(1.5e-4)
    assert lr_at(550, cfg) == pytest.approx(1.5e-4, rel=1e-12)
    assert lr_at(1000, cfg) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        lr_at(1001, cfg)


def test_lr_schedule_monotone_after_warmup():
    cfg = TrainConfig(total_steps=200, warmup_steps=10)
    lrs = [lr_at(i, cfg) for i in range(201)]
    assert all(a <= b for a, b in zip(lrs[:10], lrs[1:11]))
    assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))


@pytest.mark.parametrize(
    "kwargs",
    [dict(warmup_steps=10, total_steps=10), dict(ema_alpha=1.0), dict(q_period=0), dict(batch_size=0),
     dict(optimizer="lbfgs"), dict(q_update="never"), dict(total_steps=-1)],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_adam_first_step_by_hand():
    opt = Adam(2, beta1=0.9, beta2=0.95, eps=1e-8, weight_decay=0.1)
    x = np.array([1.0, -2.0])
    g = np.array([0.5, -4.0])
    out = opt.step(x, g, 0.01)
    # bias-corrected first step moves each coordinate by lr * sign(g) (up to eps)
    expected = x - 0.01 * (g / (np.abs(g) + 1e-8) + 0.1 * x)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


# -- training --------------------------------------------------------------------


def test_bandit_sft_two_thirds(bandit_curated):
    res = train(bandit_curated, diffnum.zeros(BANDIT), bandit_cfg())
    assert p_right(res.params) == pytest.approx(2 / 3, abs=0.02)


def test_bandit_iw_sft_recovers_optimum(bandit_curated):
    cfg = bandit_cfg(mode=Mode.IW_SFT, total_steps=2000, q_update="ema", ema_alpha=0.99,
                     weight_cfg=WeightConfig(normalize_batch=True))
    res = train(bandit_curated, diffnum.zeros(BANDIT), cfg)
    assert p_right(res.params) >= 0.99


def test_zero_steps_returns_reference(bandit_curated):
    ref = PolicyParams(np.array([0.3, -0.2]), BANDIT)
    res = train(bandit_curated, ref, bandit_cfg(total_steps=0, warmup_steps=0))
    assert res.params == ref and res.metrics == []


def test_reproducible(bandit_curated):
    cfg = bandit_cfg(mode=Mode.IW_SFT, total_steps=50)
    a = train(bandit_curated, diffnum.zeros(BANDIT), cfg)
    b = train(bandit_curated, diffnum.zeros(BANDIT), cfg)
    assert metrics_csv(a.metrics) == metrics_csv(b.metrics)
    assert a.params.values.tobytes() == b.params.values.tobytes()


@pytest.mark.parametrize("Q", [1, 3, 7])
def test_periodic_q_lag(bandit_curated, Q):
    ref = diffnum.zeros(BANDIT)
    seen = {0: ref}
    checks = []

    def on_step(i, theta, theta_q):
        seen[i] = theta
        checks.append(theta_q == seen[(i // Q) * Q])

    cfg = bandit_cfg(mode=Mode.IW_SFT, total_steps=30, warmup_steps=0, q_update="periodic", q_period=Q)
    train(bandit_curated, ref, cfg, on_step=on_step)
    assert len(checks) == 30 and all(checks)


def test_ema_q_tracks_theta(bandit_curated):
    ref = diffnum.zeros(BANDIT)
    state = {"q": ref}
    ok = []

    def on_step(i, theta, theta_q):
        ok.append(np.allclose(theta_q.values, 0.9 * state["q"].values + 0.1 * theta.values, rtol=0, atol=1e-15))
        state["q"] = theta_q

    train(bandit_curated, ref, bandit_cfg(mode=Mode.IW_SFT, total_steps=20, ema_alpha=0.9, warmup_steps=0),
          on_step=on_step)
    assert all(ok)


def test_mode_equivalence_k_zero(bandit_curated):
    ref = PolicyParams(np.array([0.1, -0.1]), BANDIT)
    a = train(bandit_curated, ref, bandit_cfg(total_steps=40))
    b = train(bandit_curated, ref, bandit_cfg(total_steps=40, mode=Mode.IW_SFT,
                                               weight_cfg=WeightConfig(k_mode="fixed", k=0.0)))
    assert [r.loss for r in a.metrics] == [r.loss for r in b.metrics]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(bandit_curated):
    cfg = bandit_cfg(total_steps=50, warmup_steps=0, peak_lr=1e306, weight_decay=10.0)
    with pytest.raises(TrainingDivergedError) as exc:
        train(bandit_curated, diffnum.zeros(BANDIT), cfg)
    assert exc.value.record.step >= 1


def test_metrics_csv_format(bandit_curated):
    res = train(bandit_curated, diffnum.zeros(BANDIT), bandit_cfg(total_steps=3, warmup_steps=1))
    text = metrics_csv(res.metrics)
    lines = text.split("\r\n")
    assert lines[0] == ",".join(METRICS_HEADER)
    assert len([x for x in lines if x]) == 4
    assert lines[1].startswith("1,") and float(lines[1].split(",")[2]) == 0.0


def test_quality_mode_runs():
    ds = generate_pointmass_data(200, 0.3, seed=0)
    cd = curate_quality(ds, [90, 95, 98])
    ref = diffnum.init_params(PointMassEnv().layout(hidden=(8,)), 0)
    res = train(cd, ref, TrainConfig(mode=Mode.IW_SFT_Q, batch_size=16, total_steps=5, peak_lr=1e-3,
                                     weight_cfg=WeightConfig(scheme="per_step_clip")))
    assert len(res.metrics) == 5
    assert all(0.1 <= r.w_min <= r.w_max <= 10.0 for r in res.metrics)


# -- behaviour cloning ---------------------------------------------------------------


def test_bc_bandit_uniform():
    ds = generate_bandit_data(BanditSpec(), 10_000, seed=0)
    p = pretrain_bc(ds, BANDIT, steps=500, lr=0.01, batch_size=1024, init=diffnum.zeros(BANDIT))
    assert p_right(p) == pytest.approx(0.5, abs=0.02)


def test_bc_scripted_controller_fit():
    env = PointMassEnv(start_spread=1.0)
    train_ds = generate_pointmass_data(200, 0.0, seed=0, env=env)
    held_out = generate_pointmass_data(50, 0.0, seed=1, env=env)
    lay = env.layout(hidden=(32, 32))
    p = pretrain_bc(train_ds, lay, steps=1500, lr=3e-3, batch_size=16, seed=0)
    states = np.concatenate([t.states for t in held_out])
    actions = np.concatenate([t.actions for t in held_out])
    mse = np.mean((diffnum.forward(p, states) - actions) ** 2)
    assert mse < 0.1 * np.var(actions)


def test_bc_zero_lr_unchanged():
    ds = generate_bandit_data(BanditSpec(), 100, seed=0)
    init = PolicyParams(np.array([0.2, 0.7]), BANDIT)
    assert pretrain_bc(ds, BANDIT, steps=1, lr=0.0, init=init) == init


def test_bc_layout_mismatch():
    ds = generate_bandit_data(BanditSpec(), 10, seed=0)
    with pytest.raises(diffnum.LayoutMismatchError):
        pretrain_bc(ds, Layout.categorical(2, 2, hidden=()), steps=1, lr=0.1)
