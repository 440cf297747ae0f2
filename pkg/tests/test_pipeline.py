import numpy as np
import numpy.testing as npt
import pytest

from visuomotor import data, pipeline
from visuomotor.pcrnn import LearningRates, init_params
from visuomotor.pipeline import (CheckpointError, ConfigError, Pipeline,
                                 TrainConfig, apply_overrides, config_from_dict,
                                 config_to_dict, eval_reconstruction,
                                 impair_params, load_checkpoint, one_hot,
                                 parse_config, path_error, perturbation_noise,
                                 run_sandbox_experiment, save_checkpoint,
                                 train_visual)


# --- config --------------------------------------------------------------------

def test_config_roundtrip():
    cfg = TrainConfig()
    npt.assert_equal(config_to_dict(config_from_dict(config_to_dict(cfg))),
                     config_to_dict(cfg))


def test_parse_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("""
# acceptance run
n = 20
tau = 4.0
alpha_m = 0.005
gate_threshold = none
direction = motor_to_visual
""")
    cfg = parse_config(f)
    assert cfg.n == 20
    assert cfg.tau == 4.0
    assert cfg.aif.alpha_m == 0.005
    assert cfg.aif.gate_threshold is None
    assert cfg.aif.direction == "motor_to_visual"


def test_parse_config_rejects_unknown_key(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("volume = 11\n")
    with pytest.raises(ConfigError, match="volume"):
        parse_config(f)


def test_parse_config_rejects_bad_value(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("n = many\n")
    with pytest.raises(ConfigError):
        parse_config(f)


def test_overrides():
    cfg = apply_overrides(TrainConfig(), ["n=32", "alpha_h_v=0.25", "gate_threshold=0.01"])
    assert cfg.n == 32
    assert cfg.rates_v.alpha_h == 0.25
    assert cfg.aif.gate_threshold == 0.01
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["n"])


# --- checkpoints -----------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = init_params(10, 3, 2, d=5, seed=9)
    f = tmp_path / "m.ckpt"
    save_checkpoint(params, f)
    back = load_checkpoint(f)
    assert (back.n, back.p, back.d, back.out_dim, back.tau) == (10, 3, 5, 2, 5.0)
    for name in ("W_p", "W_f", "W_c", "W_out"):
        npt.assert_array_equal(getattr(back, name), getattr(params, name))


def test_checkpoint_bad_magic(tmp_path):
    f = tmp_path / "junk.ckpt"
    f.write_bytes(b"NOTPCRNN" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(f)


def test_checkpoint_truncated(tmp_path):
    params = init_params(6, 2, 2, d=3, seed=1)
    f = tmp_path / "m.ckpt"
    save_checkpoint(params, f)
    blob = f.read_bytes()
    f.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="implies"):
        load_checkpoint(f)


# --- metric ----------------------------------------------------------------------

def test_path_error_zero_iff_identical():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((10, 2))
    assert path_error(a, a) == 0.0
    b = a.copy(); b[3, 1] += 1e-3
    assert path_error(a, b) > 0.0


def test_path_error_constant_offset():
    a = np.zeros((8, 2))
    b = a + np.array([1.0, 0.0])
    assert path_error(a, b) == pytest.approx(1.0)


def test_path_error_symmetric_translation_invariant():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((12, 2)), rng.standard_normal((12, 2))
    assert path_error(a, b) == pytest.approx(path_error(b, a))
    shift = np.array([3.0, -2.0])
    assert path_error(a + shift, b + shift) == pytest.approx(path_error(a, b))


def test_path_error_shape_mismatch():
    with pytest.raises(ValueError):
        path_error(np.zeros((5, 2)), np.zeros((6, 2)))


# --- training loops ---------------------------------------------------------------

def tiny_dataset(p=2, seed=0):
    return data.synth_letters(p, 6, seed=seed)


def test_train_visual_zero_iterations_keeps_init():
    ds = tiny_dataset()
    cfg = TrainConfig(n=8, iterations=0, seed=3)
    params, loss = train_visual(ds, cfg)
    fresh = init_params(8, ds.p, 2, tau=cfg.tau, d=cfg.factor_dim, seed=3, stream=0)
    for name in ("W_p", "W_f", "W_c", "W_out"):
        npt.assert_array_equal(getattr(params, name), getattr(fresh, name))
    assert len(loss) == 0


def test_train_visual_reduces_online_error():
    ds = tiny_dataset()
    cfg = TrainConfig(n=16, iterations=300, seed=3)
    params, loss = train_visual(ds, cfg)
    assert np.isfinite(loss).all()
    assert loss[-50:].mean() < loss[:50].mean()


def test_train_visual_divergence_detected():
    ds = tiny_dataset()
    cfg = TrainConfig(n=16, iterations=500, seed=3)
    cfg.rates_v = LearningRates(alpha_h=0.3, alpha_c=0.0, lambda_out=50.0,
                                lambda_p=50.0, lambda_f=50.0, lambda_c=50.0)
    with pytest.raises(pipeline.DivergenceError, match="iteration"):
        train_visual(ds, cfg)


def test_train_motor_smoke_and_determinism():
    ds = tiny_dataset()
    cfg = TrainConfig(n=12, iterations=40, seed=5)
    visual, _ = train_visual(ds, pipeline.replace(cfg, iterations=100))
    m1, l1 = pipeline.train_motor(visual, cfg)
    m2, l2 = pipeline.train_motor(visual, cfg)
    npt.assert_array_equal(l1, l2)
    for name in ("W_p", "W_f", "W_c", "W_out"):
        npt.assert_array_equal(getattr(m1, name), getattr(m2, name))
    assert m1.out_dim == 3


# --- evaluation --------------------------------------------------------------------

def test_eval_reconstruction_modes():
    ds = tiny_dataset()
    cfg = TrainConfig(n=12, iterations=60, seed=6)
    visual, _ = train_visual(ds, cfg)
    motor, _ = pipeline.train_motor(visual, pipeline.replace(cfg, iterations=30))
    pipe = Pipeline(cfg=cfg, visual=visual, motor=motor)
    for mode in ("visual", "motor_controlled", "motor_natural"):
        err = eval_reconstruction(pipe, ds.test, mode)
        assert np.isfinite(err) and err >= 0.0
    with pytest.raises(ValueError):
        eval_reconstruction(pipe, ds.test, "telepathy")


def test_eval_visual_accepts_bare_params():
    ds = tiny_dataset()
    params = init_params(10, ds.p, 2, d=5, seed=2, stream=0)
    err = eval_reconstruction(params, ds.test, "visual")
    assert np.isfinite(err)


# --- impairment ----------------------------------------------------------------------

def test_impair_zero_variance_is_identity():
    params = init_params(10, 2, 2, d=5, seed=4)
    out = impair_params(params, 0.0, seed=1)
    for name in ("W_p", "W_f", "W_c", "W_out"):
        npt.assert_array_equal(getattr(out, name), getattr(params, name))


def test_impair_same_seed_identical():
    params = init_params(10, 2, 2, d=5, seed=4)
    a = impair_params(params, 0.05, seed=9)
    b = impair_params(params, 0.05, seed=9)
    for name in ("W_p", "W_f", "W_c", "W_out"):
        npt.assert_array_equal(getattr(a, name), getattr(b, name))


def test_impair_relative_deviation_variance():
    params = init_params(200, 3, 2, d=100, seed=4)
    sigma2 = 0.04
    out = impair_params(params, sigma2, seed=2)
    ratio = out.W_p / params.W_p
    assert np.var(ratio - 1.0) == pytest.approx(sigma2, rel=0.1)


# --- experiment utilities --------------------------------------------------------------

def test_perturbation_noise_structure():
    noise = perturbation_noise(0.5, 60, seed=1, label=0)
    npt.assert_array_equal(noise[:11], np.zeros((11, 3)))
    assert np.any(noise[11:] != 0)
    npt.assert_array_equal(noise, perturbation_noise(0.5, 60, seed=1, label=0))
    zero = perturbation_noise(0.0, 60, seed=1, label=0)
    npt.assert_array_equal(zero, np.zeros((60, 3)))


def test_sandbox_experiment_reproducible():
    cfg = TrainConfig(n=10, seed=2)
    a = run_sandbox_experiment(cfg, train_iterations=30, T=15)
    b = run_sandbox_experiment(cfg, train_iterations=30, T=15)
    assert a.rows == b.rows
    assert a.columns[0] == "phase"
    phases = {row[0] for row in a.rows}
    assert {"control_sweep", "learning", "perturbation_clean",
            "perturbation_kicked"} <= phases


def test_report_csv_roundtrip(tmp_path):
    rep = pipeline.ExperimentReport(name="x", columns=["a", "b"],
                                    rows=[[1.0, 2.0], [3.0, 4.0]])
    f = tmp_path / "r.csv"
    rep.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "a,b"
    assert len(lines) == 3
    assert rep.column("b") == [2.0, 4.0]
