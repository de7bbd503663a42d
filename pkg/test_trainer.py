"""
🧪 ALIGNED SAE LAB - TESTES DE TREINAMENTO
=========================================
Schedules, features mortas, inicialização, loop de treino e checkpoints SAEC
"""

import numpy as np
import pytest

from activation_data import ActivationSet, SyntheticSpec, batch_iter, gen_synthetic, toy_point_set
from exceptions import BadMagicError, ConfigError, DimensionError, NumericalError, TruncatedFileError
from numerics import RngStream
from sae_model import SaeVariant, alignment_scores
from tensor_io import to_storage
from trainer import (INIT_STREAM, DeadTracker, TrainConfig, dead_fraction_train, dead_update, init_params,
                     lambda_schedule, load_checkpoint, lr_schedule, p_schedule, save_checkpoint, train)

STANDARD = SaeVariant(encoder_mode="standard", activation="relu")
ALIGNED = SaeVariant(encoder_mode="aligned", activation="relu")


def schedule_config(**changes):
    values = dict(variant=STANDARD, n=4, m=8, lam=0.2, lr=0.01, total_steps=1000, lr_warmup_steps=100,
                  lambda_warmup_steps=500, lr_decay_start_frac=0.8)
    values.update(changes)
    return TrainConfig(**values)


def small_data(seed=3):
    return gen_synthetic(SyntheticSpec(n=8, m_true=16, fire_prob=0.1, samples=512, seed=seed))


def small_config(variant=ALIGNED, **changes):
    values = dict(variant=variant, n=8, m=16, lam=0.05, lr=1e-3, total_steps=200, lr_warmup_steps=20,
                  lambda_warmup_steps=50, batch_size=64, seed=7, log_every=20, dead_window=50)
    values.update(changes)
    return TrainConfig(**values)


# ==========================================
# SCHEDULES
# ==========================================

def test_lr_schedule_examples():
    cfg = schedule_config()
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(100, cfg) == cfg.lr
    assert lr_schedule(500, cfg) == cfg.lr
    assert lr_schedule(900, cfg) == pytest.approx(cfg.lr / 2, rel=1e-12)
    assert lr_schedule(1000, cfg) == 0.0


def test_lambda_schedule_examples():
    cfg = schedule_config()
    assert lambda_schedule(0, cfg) == 0.0
    assert lambda_schedule(250, cfg) == pytest.approx(cfg.lam / 2, rel=1e-12)
    assert lambda_schedule(500, cfg) == cfg.lam
    assert lambda_schedule(999, cfg) == cfg.lam
    assert lambda_schedule(10, schedule_config(lambda_warmup_steps=0)) == cfg.lam


def test_schedules_are_continuous_and_nonnegative():
    cfg = schedule_config()
    lrs = np.array([lr_schedule(step, cfg) for step in range(cfg.total_steps + 1)])
    lams = np.array([lambda_schedule(step, cfg) for step in range(cfg.total_steps + 1)])
    assert lrs.min() >= 0.0 and lams.min() >= 0.0
    assert np.max(np.abs(np.diff(lrs))) <= cfg.lr / 100 + 1e-15
    assert np.max(np.abs(np.diff(lams))) <= cfg.lam / 500 + 1e-15


def test_p_schedule_examples():
    variant = SaeVariant(encoder_mode="aligned", penalty="lp_annealed", p_start=1.0, p_end=0.5, anneal_steps=200)
    cfg = schedule_config(variant=variant)
    assert p_schedule(0, cfg) == 1.0
    assert p_schedule(499, cfg) == 1.0
    assert p_schedule(600, cfg) == pytest.approx(0.75, abs=1e-12)
    assert p_schedule(800, cfg) == 0.5
    assert p_schedule(1000, cfg) == 0.5


def test_schedule_errors():
    with pytest.raises(ConfigError):
        p_schedule(0, schedule_config())
    with pytest.raises(ConfigError):
        lr_schedule(1001, schedule_config())
    with pytest.raises(ConfigError):
        schedule_config(lr_warmup_steps=1000).validate()
    with pytest.raises(ConfigError):
        schedule_config(lam=-0.1).validate()


# ==========================================
# FEATURES MORTAS
# ==========================================

def test_dead_tracker_all_firing_is_zero():
    tracker = DeadTracker.create(3)
    for _ in range(20):
        dead_update(tracker, np.ones((2, 3)))
    assert dead_fraction_train(tracker, window=5) == 0.0


def test_dead_tracker_counts_silent_features():
    tracker = DeadTracker.create(2)
    for _ in range(10):
        dead_update(tracker, np.array([[1.0, 0.0], [0.5, 0.0]]))
    assert dead_fraction_train(tracker, window=5) == 0.5
    assert dead_fraction_train(tracker, window=11) == 0.0


def test_dead_fraction_is_monotone_in_window():
    rng = RngStream(17)
    tracker = DeadTracker.create(12)
    for _ in range(60):
        # features de índice alto disparam cada vez menos
        fire = rng.uniform((4, 12)) < np.linspace(0.5, 0.0, 12)
        dead_update(tracker, fire.astype(float))
    fractions = [dead_fraction_train(tracker, window) for window in range(1, 70)]
    assert all(a >= b for a, b in zip(fractions, fractions[1:]))


def test_dead_update_rejects_wrong_width():
    with pytest.raises(ConfigError):
        dead_update(DeadTracker.create(3), np.ones((2, 4)))


# ==========================================
# INICIALIZAÇÃO
# ==========================================

@pytest.mark.parametrize("mode", ["standard", "aligned", "tied"])
def test_init_unit_decoder_columns(mode):
    cfg = small_config(variant=SaeVariant(encoder_mode=mode, activation="relu"))
    params = init_params(cfg, RngStream(cfg.seed, INIT_STREAM))
    assert np.max(np.abs(np.linalg.norm(params.w_dec, axis=0) - 1.0)) <= 1e-12
    assert not params.b_enc.any()


def test_init_alignment_and_determinism():
    cfg = small_config()
    first = init_params(cfg, RngStream(cfg.seed, INIT_STREAM))
    second = init_params(cfg, RngStream(cfg.seed, INIT_STREAM))
    assert np.max(np.abs(alignment_scores(first) - 1.0)) <= 1e-10
    assert np.array_equal(first.a_free, second.a_free)
    assert np.array_equal(first.w_dec, second.w_dec)

    standard = init_params(small_config(variant=STANDARD), RngStream(cfg.seed, INIT_STREAM))
    assert np.array_equal(standard.w_enc_raw, standard.w_dec.T)


def test_init_b_dec_is_first_batch_mean():
    batch = RngStream(2).normal((16, 8))
    params = init_params(small_config(), RngStream(0, INIT_STREAM), batch)
    assert np.allclose(params.b_dec, batch.mean(axis=0), atol=1e-15)
    no_bias = init_params(small_config(use_biases=False), RngStream(0, INIT_STREAM), batch)
    assert not no_bias.b_dec.any()


# ==========================================
# LOOP DE TREINO
# ==========================================

def test_zero_steps_returns_init():
    data = small_data()
    cfg = small_config(total_steps=0)
    ckpt, log = train(cfg, data)
    first_batch = next(batch_iter(data, cfg.batch_size, cfg.seed))
    expected = init_params(cfg, RngStream(cfg.seed, INIT_STREAM), first_batch)
    assert np.array_equal(ckpt.params.a_free, expected.a_free)
    assert np.array_equal(ckpt.params.w_dec, expected.w_dec)
    assert [record.step for record in log] == [0]


def toy_config():
    return TrainConfig(variant=STANDARD, n=2, m=1, lam=0.0, lr=0.01, total_steps=5000, lr_warmup_steps=100,
                       lambda_warmup_steps=0, batch_size=1, seed=0, log_every=500, use_biases=False)


def toy_point_for(cfg):
    """Ponto a 45° da coluna inicial do decoder: a feature começa viva e precisa girar"""
    column = init_params(cfg, RngStream(cfg.seed, INIT_STREAM)).w_dec[:, 0]
    rotated = np.array([column[0] - column[1], column[0] + column[1]]) / np.sqrt(2.0)
    return 2.0 * rotated


def test_toy_model_converges_to_unit_alignment():
    cfg = toy_config()
    ckpt, log = train(cfg, toy_point_set(toy_point_for(cfg)))
    assert ckpt.metrics.recon_loss < 1e-8
    assert abs(alignment_scores(ckpt.params)[0] - 1.0) < 1e-3
    assert abs(log[-1].alignment_mean - 1.0) < 1e-3
    assert not ckpt.params.b_enc.any() and not ckpt.params.b_dec.any()


def test_training_is_deterministic():
    data = small_data()
    cfg = small_config(total_steps=60)
    ckpt_a, log_a = train(cfg, data)
    ckpt_b, log_b = train(cfg, data)
    assert [r.to_dict() for r in log_a] == [r.to_dict() for r in log_b]
    for name, tensor in ckpt_a.params.free_tensors().items():
        assert np.array_equal(tensor, ckpt_b.params.free_tensors()[name])


def test_aligned_run_holds_constraint_at_every_logged_step():
    ckpt, log = train(small_config(), small_data())
    assert [record.step for record in log] == list(range(0, 201, 20))
    for record in log:
        assert record.alignment_min >= 1.0 - 1e-6
        assert record.alignment_max <= 1.0 + 1e-6
    assert np.max(np.abs(alignment_scores(ckpt.params) - 1.0)) <= 1e-10


def test_snapshots_are_kept_in_memory():
    cfg = small_config(total_steps=40, lr_warmup_steps=10, lambda_warmup_steps=10, snapshot_every=20)
    ckpt, _ = train(cfg, small_data())
    assert sorted(ckpt.snapshots) == [0, 20, 40]
    assert np.array_equal(ckpt.snapshots[40], ckpt.params.w_dec)


def test_train_rejects_mismatched_data():
    with pytest.raises(DimensionError):
        train(small_config(n=6), small_data())
    with pytest.raises(ConfigError):
        train(small_config(batch_size=1024), small_data())


def test_non_finite_loss_aborts_with_step():
    big = 1e300
    data = ActivationSet(data=np.array([[big, 0.0], [-big, 0.0], [0.0, big], [0.0, -big]]))
    cfg = TrainConfig(variant=STANDARD, n=2, m=4, lam=0.0, lr=1e-3, total_steps=10, lr_warmup_steps=0,
                      lambda_warmup_steps=0, batch_size=4, log_every=5)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalError) as info:
            train(cfg, data)
    assert info.value.step == 0


# ==========================================
# CHECKPOINTS
# ==========================================

def test_checkpoint_round_trip(tmp_path):
    ckpt, _ = train(small_config(total_steps=20, lr_warmup_steps=5, lambda_warmup_steps=10), small_data())
    path = save_checkpoint(ckpt, tmp_path / "run" / "checkpoint.saec")
    loaded = load_checkpoint(path)
    assert loaded.config == ckpt.config
    assert loaded.step == 20
    assert loaded.metrics == ckpt.metrics
    for name, tensor in ckpt.params.free_tensors().items():
        assert np.array_equal(loaded.params.free_tensors()[name], to_storage(tensor))


def test_checkpoint_truncated_and_bad_magic(tmp_path):
    cfg = small_config(variant=STANDARD, total_steps=5, lr_warmup_steps=1, lambda_warmup_steps=2)
    ckpt, _ = train(cfg, small_data())
    path = save_checkpoint(ckpt, tmp_path / "checkpoint.saec")
    payload = path.read_bytes()

    truncated = tmp_path / "truncated.saec"
    truncated.write_bytes(payload[:-3])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(truncated)

    wrong = tmp_path / "wrong.saec"
    wrong.write_bytes(b"XXXX" + payload[4:])
    with pytest.raises(BadMagicError) as info:
        load_checkpoint(wrong)
    assert "SAEC" in str(info.value)
