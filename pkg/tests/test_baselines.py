import numpy as np
import numpy.testing as npt
import pytest

from visuomotor import baselines as bl
from visuomotor.arm import ArmConfig
from visuomotor.data import synth_letters
from visuomotor.pipeline import CheckpointError, TrainConfig

ARM = ArmConfig()


def zeroed(params):
    params = params.copy()
    for name in ("W_ff", "W_fs", "W_sf", "W_ss", "W_in", "W_out", "b", "b_out"):
        setattr(params, name, np.zeros_like(getattr(params, name)))
    return params


# --- rollout ---------------------------------------------------------------------

def test_zero_weights_zero_state_rolls_zeros():
    params = zeroed(bl.init_mtrnn(n=8, seed=0))
    out = bl.mtrnn_rollout(params, np.zeros(8), 7)
    npt.assert_array_equal(out, np.zeros((7, 5)))


def test_rollout_determinism():
    params = bl.init_mtrnn(n=10, seed=4)
    h0 = np.random.default_rng(1).standard_normal(10)
    npt.assert_array_equal(bl.mtrnn_rollout(params, h0, 12),
                           bl.mtrnn_rollout(params, h0, 12))


def test_equal_timescales_match_single_block_leaky_rnn():
    # with tau_f == tau_s the two-block wiring is one leaky RNN whose
    # recurrent matrix is the assembled block matrix
    n = 8
    params = bl.init_mtrnn(n=n, seed=7, tau_f=4.0, tau_s=4.0 + 1e-12)
    h0 = np.random.default_rng(2).standard_normal(n)
    T = 9
    out = bl.mtrnn_rollout(params, h0, T)

    W = params.recurrent_matrix()
    W_fb = params.feedback_matrix()
    tau = 4.0
    s = h0.copy()
    x = params.W_out @ np.tanh(s) + params.b_out
    expected = np.zeros((T, 5))
    for t in range(T):
        a = W @ np.tanh(s) + W_fb @ x + params.b
        s = (1 - 1 / tau) * s + (1 / tau) * a
        x = params.W_out @ np.tanh(s) + params.b_out
        expected[t] = x
    npt.assert_allclose(out, expected, atol=1e-9)


def test_tau_ordering_enforced():
    with pytest.raises(ValueError):
        bl.init_mtrnn(n=8, tau_f=10.0, tau_s=5.0)


# --- BPTT ------------------------------------------------------------------------

def test_bptt_zero_steps_is_identity():
    params = bl.init_mtrnn(n=8, seed=3)
    before = params.copy()
    target = np.random.default_rng(3).standard_normal((6, 2))
    bl.mtrnn_bptt_train(params, np.zeros(8), target, None, steps=0, lr=0.01)
    for name in ("W_ff", "W_fs", "W_sf", "W_ss", "W_in", "W_out", "b", "b_out"):
        npt.assert_array_equal(getattr(params, name), getattr(before, name))


def test_bptt_loss_decreases_on_toy_problem():
    params = bl.init_mtrnn(n=10, seed=5)
    rng = np.random.default_rng(5)
    h0 = rng.standard_normal(10)
    visual = rng.standard_normal((8, 2)) * 0.5
    motor = rng.standard_normal((8, 3)) * 0.5
    losses = bl.mtrnn_bptt_train(params, h0, visual, motor, steps=10, lr=5e-3)
    assert np.all(np.diff(losses) < 0)


def test_bptt_gradients_match_finite_differences():
    params = bl.init_mtrnn(n=6, seed=11)
    rng = np.random.default_rng(7)
    h0 = rng.standard_normal(params.n)
    T = 5
    targets = rng.standard_normal((T, 5))
    mask = np.ones(5)
    grads, g_h0, _ = bl._mtrnn_backward(params, h0, targets, mask)

    def loss_of():
        out = bl.mtrnn_rollout(params, h0, T)
        return 0.5 * float(np.sum((out - targets) ** 2))

    eps = 1e-6
    for name in ("W_ff", "W_fs", "W_sf", "W_ss", "W_in", "W_out", "b", "b_out"):
        w = getattr(params, name)
        flat = w.reshape(-1)
        g = grads[name].reshape(-1)
        for idx in np.random.default_rng(8).choice(flat.size, size=min(6, flat.size),
                                                   replace=False):
            old = flat[idx]
            flat[idx] = old + eps; lp = loss_of()
            flat[idx] = old - eps; lm = loss_of()
            flat[idx] = old
            fd = (lp - lm) / (2 * eps)
            assert abs(g[idx] - fd) / max(abs(fd), 1e-8) < 1e-4, name
    for i in range(params.n):
        old = h0[i]
        h0[i] = old + eps; lp = loss_of()
        h0[i] = old - eps; lm = loss_of()
        h0[i] = old
        fd = (lp - lm) / (2 * eps)
        assert abs(g_h0[i] - fd) / max(abs(fd), 1e-8) < 1e-4


def test_infer_h0_reduces_visual_error():
    params = bl.init_mtrnn(n=10, seed=9)
    target = np.random.default_rng(9).standard_normal((8, 2)) * 0.3

    def visual_loss(h0):
        out = bl.mtrnn_rollout(params, h0, 8)
        return float(np.sum((out[:, :2] - target) ** 2))

    h0 = bl.mtrnn_infer_h0(params, target, steps=100, lr=0.05)
    assert visual_loss(h0) < visual_loss(np.zeros(10))


# --- phases ----------------------------------------------------------------------

def test_babbling_zero_iterations_is_fresh_init():
    budget = bl.BaselineBudget(I1=0, I2=0)
    params = bl.babbling_phase(ARM, budget, seed=3, n=8, T=6)
    fresh = bl.init_mtrnn(n=8, seed=3)
    for name in ("W_ff", "W_out", "b"):
        npt.assert_array_equal(getattr(params, name), getattr(fresh, name))


def test_babbling_improves_joint_prediction():
    budget = bl.BaselineBudget(I1=40, I2=0, train_steps=3, lr=0.01)
    trained = bl.babbling_phase(ARM, budget, seed=2, n=12, T=10)
    fresh = bl.init_mtrnn(n=12, seed=2)
    rng = np.random.default_rng(33)

    def joint_error(params):
        errs = []
        for _ in range(10):
            h0 = rng.standard_normal(params.n)
            joint = bl.mtrnn_rollout(params, h0, 10)
            visual = bl.execute_motor(ARM, joint[:, 2:])
            errs.append(np.mean(np.sum((joint[:, :2] - visual) ** 2, axis=1)))
        return float(np.mean(errs))

    assert joint_error(trained) < joint_error(fresh)


def test_babbling_reproducible():
    budget = bl.BaselineBudget(I1=5, I2=0, train_steps=2)
    a = bl.babbling_phase(ARM, budget, seed=6, n=8, T=6)
    b = bl.babbling_phase(ARM, budget, seed=6, n=8, T=6)
    for name in ("W_ff", "W_fs", "W_sf", "W_ss", "W_in", "W_out", "b", "b_out"):
        npt.assert_array_equal(getattr(a, name), getattr(b, name))


def test_imitation_zero_iterations_keeps_weights():
    params = bl.init_mtrnn(n=8, seed=4)
    before = params.copy()
    targets = [np.random.default_rng(k).standard_normal((6, 2)) for k in range(2)]
    budget = bl.BaselineBudget(I1=0, I2=0, h0_steps=20, h0_lr=0.05)
    tuned, h0s = bl.imitation_phase(params, targets, budget, ARM)
    for name in ("W_ff", "W_out"):
        npt.assert_array_equal(getattr(tuned, name), getattr(before, name))
    assert h0s.shape == (2, 8)
    assert np.linalg.norm(h0s[0] - h0s[1]) > 0


def test_imitation_improves_over_babbling_only():
    budget = bl.BaselineBudget(I1=30, I2=15, train_steps=3, h0_steps=40,
                               lr=0.01, h0_lr=0.05)
    ds = synth_letters(1, 4, seed=5)
    target = ds.by_label("train", 0)[0].points
    babbled = bl.babbling_phase(ARM, budget, seed=5, n=12, T=len(target))

    def executed_error(params, h0):
        joint = bl.mtrnn_rollout(params, h0, len(target))
        visual = bl.execute_motor(ARM, joint[:, 2:])
        return float(np.mean(np.linalg.norm(visual - target, axis=1)))

    h0_b = bl.mtrnn_infer_h0(babbled, target, budget.h0_steps, budget.h0_lr)
    before = executed_error(babbled, h0_b)
    tuned, h0s = bl.imitation_phase(babbled.copy(), [target], budget, ARM)
    after = executed_error(tuned, h0s[0])
    assert after < before


# --- RNN+FM ----------------------------------------------------------------------

def test_rnnfm_zero_budget_identity():
    params = bl.init_rnnfm(8, 2, seed=1)
    before = params.copy()
    bl.rnnfm_train(params, ARM, [np.zeros((5, 2))], steps=0, lr=0.01)
    for name in ("W", "W_in", "W_out", "b", "b_out"):
        npt.assert_array_equal(getattr(params, name), getattr(before, name))


def test_rnnfm_gradient_matches_finite_differences():
    params = bl.init_rnnfm(6, 2, seed=2)
    rng = np.random.default_rng(12)
    target = rng.standard_normal((5, 2)) * 0.5
    grads, _ = bl.rnnfm_visual_loss_grads(params, params.h0, 0, target, ARM)

    def loss_of():
        m, _, _ = bl.rnnfm_rollout(params, params.h0, 0, 5)
        o = bl.execute_motor(ARM, m)
        return 0.5 * float(np.sum((o - target) ** 2))

    eps = 1e-6
    for name in ("W", "W_in", "W_out", "b", "b_out"):
        w = getattr(params, name)
        flat = w.reshape(-1)
        g = grads[name].reshape(-1)
        for idx in np.random.default_rng(13).choice(flat.size, size=min(6, flat.size),
                                                    replace=False):
            old = flat[idx]
            flat[idx] = old + eps; lp = loss_of()
            flat[idx] = old - eps; lm = loss_of()
            flat[idx] = old
            fd = (lp - lm) / (2 * eps)
            assert abs(g[idx] - fd) / max(abs(fd), 1e-8) < 1e-4, name


def test_rnnfm_training_reduces_visual_error():
    params = bl.init_rnnfm(12, 1, seed=3)
    ds = synth_letters(1, 4, seed=6)
    target = ds.by_label("train", 0)[0].points

    def err(params):
        m, _, _ = bl.rnnfm_rollout(params, params.h0, 0, len(target))
        o = bl.execute_motor(ARM, m)
        return float(np.mean(np.linalg.norm(o - target, axis=1)))

    before = err(params)
    bl.rnnfm_train(params, ARM, [target], steps=150, lr=2e-3)
    assert err(params) < before


# --- checkpoints -------------------------------------------------------------------

def test_mtrnn_checkpoint_roundtrip(tmp_path):
    params = bl.init_mtrnn(n=10, seed=8)
    f = tmp_path / "m.ckpt"
    bl.save_mtrnn(params, f)
    back = bl.load_mtrnn(f)
    assert (back.n_f, back.n_s, back.out_dim) == (params.n_f, params.n_s, params.out_dim)
    assert (back.tau_f, back.tau_s) == (params.tau_f, params.tau_s)
    for name in ("W_ff", "W_fs", "W_sf", "W_ss", "W_in", "W_out", "b", "b_out"):
        npt.assert_array_equal(getattr(back, name), getattr(params, name))


def test_mtrnn_checkpoint_bad_magic(tmp_path):
    f = tmp_path / "x.ckpt"
    f.write_bytes(b"PCRNN1" + b"\x00" * 40)
    with pytest.raises(CheckpointError, match="magic"):
        bl.load_mtrnn(f)


# --- capacity ----------------------------------------------------------------------

def test_capacity_report_one_row_per_cell():
    budget = bl.CapacityBudget(pcrnn_iterations=30)
    budget.mtrnn = bl.BaselineBudget(I1=3, I2=2, train_steps=1, h0_steps=5)
    budget.rnnfm_steps = 10
    cfg = TrainConfig(n=10, seed=1)
    report = bl.run_capacity_experiment(class_counts=(1, 2), seeds=(1,),
                                        models=("pcrnn", "mtrnn50", "rnnfm"),
                                        cfg=cfg, budget=budget, per_class=4)
    assert report.columns == ["model", "n", "p", "seed", "test_error"]
    cells = [(r[0], r[2], r[3]) for r in report.rows]
    assert len(cells) == len(set(cells)) == 6
    assert all(np.isfinite(r[4]) for r in report.rows)
