"""Comparison models: a two-timescale RNN trained by backpropagation through
time (babbling then imitation), and a leaky RNN trained through the arm
Jacobian, plus the capacity sweep that pits them against the main
architecture.

Both baselines are open-loop generators: once their initial state (and class
input) is set, they roll out without any inference-time feedback.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .arm import ArmConfig, forward_kinematics, jacobian
from .data import Dataset, synth_letters
from .pipeline import (CheckpointError, ExperimentReport, Pipeline,
                       TrainConfig, DivergenceError, _error_vs_tests,
                       one_hot, train_motor, train_visual)

VISUAL_DIMS = 2
MOTOR_DIMS = 3


@dataclass
class MtrnnParams:
    """Two-timescale leaky RNN with joint visuomotor output.

    The fast block receives output feedback and the slow state; the slow
    block listens to the fast state; the readout sees both. out_dim is the
    concatenated (visual, motor) dimension.
    """

    n_f: int
    n_s: int
    tau_f: float
    tau_s: float
    out_dim: int
    W_ff: np.ndarray
    W_fs: np.ndarray
    W_sf: np.ndarray
    W_ss: np.ndarray
    W_in: np.ndarray   # (n_f, out_dim) output feedback into the fast block
    W_out: np.ndarray  # (out_dim, n_f + n_s)
    b: np.ndarray      # (n_f + n_s,)
    b_out: np.ndarray  # (out_dim,)

    @property
    def n(self) -> int:
        return self.n_f + self.n_s

    def tau_vector(self) -> np.ndarray:
        return np.concatenate([np.full(self.n_f, self.tau_f),
                               np.full(self.n_s, self.tau_s)])

    def recurrent_matrix(self) -> np.ndarray:
        top = np.hstack([self.W_ff, self.W_fs])
        bottom = np.hstack([self.W_sf, self.W_ss])
        return np.vstack([top, bottom])

    def feedback_matrix(self) -> np.ndarray:
        full = np.zeros((self.n, self.out_dim))
        full[:self.n_f] = self.W_in
        return full

    def copy(self) -> "MtrnnParams":
        return MtrnnParams(
            n_f=self.n_f, n_s=self.n_s, tau_f=self.tau_f, tau_s=self.tau_s,
            out_dim=self.out_dim,
            W_ff=self.W_ff.copy(), W_fs=self.W_fs.copy(), W_sf=self.W_sf.copy(),
            W_ss=self.W_ss.copy(), W_in=self.W_in.copy(), W_out=self.W_out.copy(),
            b=self.b.copy(), b_out=self.b_out.copy())


@dataclass
class BaselineBudget:
    """Iteration counts and step sizes for the baseline training phases."""

    I1: int = 3000           # babbling iterations
    I2: int = 2000           # imitation outer iterations
    train_steps: int = 3     # gradient steps per collected trajectory pair
    h0_steps: int = 200      # gradient steps per initial-state inference
    lr: float = 0.01
    h0_lr: float = 0.05

    def __post_init__(self):
        if min(self.I1, self.I2, self.train_steps, self.h0_steps) < 0:
            raise ValueError("budget counts must be non-negative")


def init_mtrnn(n: int = 50, out_dim: int = VISUAL_DIMS + MOTOR_DIMS,
               tau_f: float = 5.0, tau_s: float = 10.0,
               seed: int = 0) -> MtrnnParams:
    if tau_f >= tau_s:
        raise ValueError("tau_f must be smaller than tau_s")
    n_f = n // 2
    n_s = n - n_f
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7128]))
    sd = lambda fan_in: 1.0 / np.sqrt(fan_in)
    return MtrnnParams(
        n_f=n_f, n_s=n_s, tau_f=tau_f, tau_s=tau_s, out_dim=out_dim,
        W_ff=rng.standard_normal((n_f, n_f)) * sd(n_f),
        W_fs=rng.standard_normal((n_f, n_s)) * sd(n_s),
        W_sf=rng.standard_normal((n_s, n_f)) * sd(n_f),
        W_ss=rng.standard_normal((n_s, n_s)) * sd(n_s),
        W_in=rng.standard_normal((n_f, out_dim)) * sd(out_dim),
        W_out=rng.standard_normal((out_dim, n_f + n_s)) * sd(n_f + n_s),
        b=np.zeros(n_f + n_s),
        b_out=np.zeros(out_dim))


def _mtrnn_forward(params: MtrnnParams, h0: np.ndarray, T: int):
    """Closed-loop unroll; returns (states s, tanh states y, outputs x, preacts a).

    Index 0 holds the initial condition; outputs[1..T] are the rollout. The
    network feeds its own previous output back through W_in.
    """
    n, out_dim = params.n, params.out_dim
    tau = params.tau_vector()
    W_rec, W_fb = params.recurrent_matrix(), params.feedback_matrix()
    s = np.zeros((T + 1, n))
    y = np.zeros((T + 1, n))
    x = np.zeros((T + 1, out_dim))
    a = np.zeros((T + 1, n))
    s[0] = h0
    y[0] = np.tanh(h0)
    x[0] = params.W_out @ y[0] + params.b_out
    leak = 1.0 - 1.0 / tau
    inv_tau = 1.0 / tau
    for t in range(1, T + 1):
        a[t] = W_rec @ y[t - 1] + W_fb @ x[t - 1] + params.b
        s[t] = leak * s[t - 1] + inv_tau * a[t]
        y[t] = np.tanh(s[t])
        x[t] = params.W_out @ y[t] + params.b_out
    return s, y, x, a


def mtrnn_rollout(params: MtrnnParams, h0: np.ndarray, T: int) -> np.ndarray:
    """Generate T joint visuomotor outputs from an initial state."""
    _, _, x, _ = _mtrnn_forward(params, h0, T)
    return x[1:]


def _mtrnn_backward(params: MtrnnParams, h0: np.ndarray, targets: np.ndarray,
                    mask: np.ndarray):
    """Full-unroll gradients of sum-squared masked output error.

    Returns (grads dict, h0 gradient, loss). targets has shape (T, out_dim);
    mask selects the supervised output dims.
    """
    T = len(targets)
    tau = params.tau_vector()
    W_rec, W_fb = params.recurrent_matrix(), params.feedback_matrix()
    s, y, x, _ = _mtrnn_forward(params, h0, T)
    leak = 1.0 - 1.0 / tau
    inv_tau = 1.0 / tau

    gW_rec = np.zeros_like(W_rec)
    gW_fb = np.zeros_like(W_fb)
    gW_out = np.zeros_like(params.W_out)
    gb = np.zeros_like(params.b)
    gb_out = np.zeros_like(params.b_out)

    g_a_next = np.zeros(params.n)
    g_s_next = np.zeros(params.n)
    loss = 0.0
    for t in range(T, 0, -1):
        err = (x[t] - targets[t - 1]) * mask
        loss += 0.5 * float(err @ err)
        g_x = err + W_fb.T @ g_a_next
        g_y = params.W_out.T @ g_x + W_rec.T @ g_a_next
        g_s = g_y * (1.0 - y[t] ** 2) + g_s_next * leak
        g_a = g_s * inv_tau
        gW_out += np.outer(g_x, y[t])
        gb_out += g_x
        gW_rec += np.outer(g_a, y[t - 1])
        gW_fb += np.outer(g_a, x[t - 1])
        gb += g_a
        g_a_next, g_s_next = g_a, g_s
    # initial node: y_0 and x_0 feed the first preactivation
    g_x0 = W_fb.T @ g_a_next
    g_y0 = params.W_out.T @ g_x0 + W_rec.T @ g_a_next
    g_s0 = g_y0 * (1.0 - y[0] ** 2) + g_s_next * leak
    gW_out += np.outer(g_x0, y[0])
    gb_out += g_x0

    n_f = params.n_f
    grads = {
        "W_ff": gW_rec[:n_f, :n_f], "W_fs": gW_rec[:n_f, n_f:],
        "W_sf": gW_rec[n_f:, :n_f], "W_ss": gW_rec[n_f:, n_f:],
        "W_in": gW_fb[:n_f], "W_out": gW_out, "b": gb, "b_out": gb_out,
    }
    return grads, g_s0, loss


def _supervision_mask(out_dim: int, motor: bool) -> np.ndarray:
    mask = np.zeros(out_dim)
    mask[:VISUAL_DIMS] = 1.0
    if motor:
        mask[VISUAL_DIMS:] = 1.0
    return mask


def mtrnn_bptt_train(params: MtrnnParams, h0: np.ndarray,
                     visual_traj: np.ndarray, motor_traj: np.ndarray | None,
                     steps: int, lr: float) -> np.ndarray:
    """Gradient-descend the weights on one visuomotor pair; returns losses.

    The visual dims are always supervised; the motor dims only when
    motor_traj is given. Mutates params in place.
    """
    T = len(visual_traj)
    targets = np.zeros((T, params.out_dim))
    targets[:, :VISUAL_DIMS] = visual_traj
    if motor_traj is not None:
        if len(motor_traj) != T:
            raise ValueError("visual and motor trajectories must be length-aligned")
        targets[:, VISUAL_DIMS:] = motor_traj
    mask = _supervision_mask(params.out_dim, motor=motor_traj is not None)
    losses = np.zeros(steps)
    for k in range(steps):
        grads, _, loss = _mtrnn_backward(params, h0, targets, mask)
        losses[k] = loss
        if not np.isfinite(loss):
            raise DivergenceError(f"mtrnn_bptt_train: non-finite loss at step {k}")
        for name, g in grads.items():
            w = getattr(params, name)
            w -= lr * g
    return losses


def mtrnn_infer_h0(params: MtrnnParams, visual_traj: np.ndarray,
                   steps: int, lr: float,
                   h0_init: np.ndarray | None = None) -> np.ndarray:
    """Fit an initial hidden state to a target visual trajectory by BPTT."""
    T = len(visual_traj)
    targets = np.zeros((T, params.out_dim))
    targets[:, :VISUAL_DIMS] = visual_traj
    mask = _supervision_mask(params.out_dim, motor=False)
    h0 = np.zeros(params.n) if h0_init is None else h0_init.copy()
    for _ in range(steps):
        _, g_h0, _ = _mtrnn_backward(params, h0, targets, mask)
        h0 -= lr * g_h0
    return h0


def execute_motor(arm_cfg: ArmConfig, motor_traj: np.ndarray) -> np.ndarray:
    """End-effector positions for a sequence of joint-angle commands."""
    return np.array([forward_kinematics(arm_cfg, m) for m in motor_traj])


def babbling_phase(arm_cfg: ArmConfig, budget: BaselineBudget, seed: int,
                   n: int = 50, T: int = data_mod.TRAJECTORY_LENGTH) -> MtrnnParams:
    """Random-exploration pretraining of the joint visuomotor model.

    Each iteration rolls a motor trajectory from a random initial state,
    executes it on the arm, and trains on the resulting pair with the same
    initial state.
    """
    params = init_mtrnn(n=n, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBABB1E]))
    for _ in range(budget.I1):
        h0 = rng.standard_normal(params.n)
        joint = mtrnn_rollout(params, h0, T)
        motor = joint[:, VISUAL_DIMS:]
        visual = execute_motor(arm_cfg, motor)
        mtrnn_bptt_train(params, h0, visual, motor, budget.train_steps, budget.lr)
    return params


def imitation_phase(params: MtrnnParams, targets: list[np.ndarray],
                    budget: BaselineBudget, arm_cfg: ArmConfig
                    ) -> tuple[MtrnnParams, np.ndarray]:
    """Per-class loop: infer an initial state for the target, perform the
    motor trajectory, retrain on the executed pair with that same state.

    Returns the tuned parameters and one inferred initial state per class
    (re-inferred after the final weight update).
    """
    p = len(targets)
    for _ in range(budget.I2):
        for k in range(p):
            h0 = mtrnn_infer_h0(params, targets[k], budget.h0_steps, budget.h0_lr)
            joint = mtrnn_rollout(params, h0, len(targets[k]))
            motor = joint[:, VISUAL_DIMS:]
            visual = execute_motor(arm_cfg, motor)
            mtrnn_bptt_train(params, h0, visual, motor, budget.train_steps, budget.lr)
    h0s = np.array([mtrnn_infer_h0(params, targets[k], budget.h0_steps, budget.h0_lr)
                    for k in range(p)])
    return params, h0s


# --- Plain leaky RNN trained through the arm Jacobian -------------------------

@dataclass
class RnnFmParams:
    """Leaky RNN emitting joint angles, conditioned by a one-hot class input.

    h0 is the shared random initial state, fixed at init time.
    """

    n: int
    p: int
    tau: float
    W: np.ndarray       # (n, n)
    W_in: np.ndarray    # (n, p)
    W_out: np.ndarray   # (MOTOR_DIMS, n)
    b: np.ndarray
    b_out: np.ndarray
    h0: np.ndarray

    def copy(self) -> "RnnFmParams":
        return RnnFmParams(n=self.n, p=self.p, tau=self.tau, W=self.W.copy(),
                           W_in=self.W_in.copy(), W_out=self.W_out.copy(),
                           b=self.b.copy(), b_out=self.b_out.copy(),
                           h0=self.h0.copy())


def init_rnnfm(n: int, p: int, tau: float = 5.0, seed: int = 0) -> RnnFmParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF14]))
    return RnnFmParams(
        n=n, p=p, tau=tau,
        W=rng.standard_normal((n, n)) / np.sqrt(n),
        W_in=rng.standard_normal((n, p)) / np.sqrt(p),
        W_out=rng.standard_normal((MOTOR_DIMS, n)) / np.sqrt(n),
        b=np.zeros(n), b_out=np.zeros(MOTOR_DIMS),
        h0=rng.standard_normal(n))


def rnnfm_rollout(params: RnnFmParams, h0: np.ndarray, label: int, T: int):
    """Motor command sequence for a class; returns (motor, states s, tanh y)."""
    u = one_hot(params.p, label)
    drive = params.W_in @ u + params.b
    leak, inv_tau = 1.0 - 1.0 / params.tau, 1.0 / params.tau
    s = np.zeros((T + 1, params.n))
    y = np.zeros((T + 1, params.n))
    m = np.zeros((T, MOTOR_DIMS))
    s[0] = h0
    y[0] = np.tanh(h0)
    for t in range(1, T + 1):
        s[t] = leak * s[t - 1] + inv_tau * (params.W @ y[t - 1] + drive)
        y[t] = np.tanh(s[t])
        m[t - 1] = params.W_out @ y[t] + params.b_out
    return m, s, y


def rnnfm_visual_loss_grads(params: RnnFmParams, h0: np.ndarray, label: int,
                            target_visual: np.ndarray, arm_cfg: ArmConfig):
    """Gradients of the visual-space error, chained through the arm Jacobian."""
    T = len(target_visual)
    u = one_hot(params.p, label)
    m, s, y = rnnfm_rollout(params, h0, label, T)
    leak, inv_tau = 1.0 - 1.0 / params.tau, 1.0 / params.tau
    gW = np.zeros_like(params.W)
    gW_in = np.zeros_like(params.W_in)
    gW_out = np.zeros_like(params.W_out)
    gb = np.zeros_like(params.b)
    gb_out = np.zeros_like(params.b_out)
    g_s_next = np.zeros(params.n)
    g_a_next = np.zeros(params.n)
    loss = 0.0
    for t in range(T, 0, -1):
        diff = forward_kinematics(arm_cfg, m[t - 1]) - target_visual[t - 1]
        loss += 0.5 * float(diff @ diff)
        g_m = jacobian(arm_cfg, m[t - 1]).T @ diff
        g_y = params.W_out.T @ g_m + params.W.T @ g_a_next
        g_s = g_y * (1.0 - y[t] ** 2) + g_s_next * leak
        g_a = g_s * inv_tau
        gW_out += np.outer(g_m, y[t])
        gb_out += g_m
        gW += np.outer(g_a, y[t - 1])
        gW_in += np.outer(g_a, u)
        gb += g_a
        g_s_next, g_a_next = g_s, g_a
    grads = {"W": gW, "W_in": gW_in, "W_out": gW_out, "b": gb, "b_out": gb_out}
    return grads, loss


def rnnfm_train(params: RnnFmParams, arm_cfg: ArmConfig,
                targets: list[np.ndarray], steps: int, lr: float) -> RnnFmParams:
    """BPTT through the forward model; one class target per gradient step."""
    for k in range(steps):
        label = k % len(targets)
        grads, loss = rnnfm_visual_loss_grads(params, params.h0, label,
                                              targets[label], arm_cfg)
        if not np.isfinite(loss):
            raise DivergenceError(f"rnnfm_train: non-finite loss at step {k}")
        for name, g in grads.items():
            w = getattr(params, name)
            w -= lr * g
    return params


# --- Checkpoint container (same layout idea as the main model) ----------------

_MTRNN_MAGIC = b"MTRNN1"


def save_mtrnn(params: MtrnnParams, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MTRNN_MAGIC)
        fh.write(struct.pack("<3i", params.n_f, params.n_s, params.out_dim))
        fh.write(struct.pack("<2d", params.tau_f, params.tau_s))
        for w in (params.W_ff, params.W_fs, params.W_sf, params.W_ss,
                  params.W_in, params.W_out, params.b, params.b_out):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_mtrnn(path: str | Path) -> MtrnnParams:
    blob = Path(path).read_bytes()
    if blob[:6] != _MTRNN_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:6]!r}, expected {_MTRNN_MAGIC!r}")
    n_f, n_s, out_dim = struct.unpack("<3i", blob[6:18])
    tau_f, tau_s = struct.unpack("<2d", blob[18:34])
    n = n_f + n_s
    shapes = [(n_f, n_f), (n_f, n_s), (n_s, n_f), (n_s, n_s),
              (n_f, out_dim), (out_dim, n), (n,), (out_dim,)]
    counts = [int(np.prod(sh)) for sh in shapes]
    expected = 34 + 8 * sum(counts)
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: file is {len(blob)} bytes but header implies {expected}")
    offset = 34
    mats = []
    for sh, count in zip(shapes, counts):
        mats.append(np.frombuffer(blob, dtype="<f8", count=count,
                                  offset=offset).copy().reshape(sh))
        offset += 8 * count
    return MtrnnParams(n_f=n_f, n_s=n_s, tau_f=tau_f, tau_s=tau_s,
                       out_dim=out_dim, W_ff=mats[0], W_fs=mats[1],
                       W_sf=mats[2], W_ss=mats[3], W_in=mats[4],
                       W_out=mats[5], b=mats[6], b_out=mats[7])


# --- Capacity comparison -------------------------------------------------------

@dataclass
class CapacityBudget:
    """Desk-scale training budgets for the capacity sweep."""

    pcrnn_iterations: int = 3000
    mtrnn: BaselineBudget = field(default_factory=lambda: BaselineBudget(
        I1=400, I2=40, train_steps=2, h0_steps=50, lr=0.01, h0_lr=0.05))
    rnnfm_steps: int = 3000
    rnnfm_lr: float = 2e-3


def _class_targets(dataset: Dataset) -> list[np.ndarray]:
    """One target visual trajectory per class (the first training sample)."""
    return [dataset.by_label("train", k)[0].points for k in range(dataset.p)]


def _eval_executed(dataset: Dataset, arm_cfg: ArmConfig,
                   motor_by_label: dict[int, np.ndarray]) -> float:
    errs = []
    for label, motor in motor_by_label.items():
        executed = execute_motor(arm_cfg, motor)
        errs.append(_error_vs_tests(executed, dataset.test, label))
    return float(np.mean(errs))


def capacity_cell(model: str, dataset: Dataset, cfg: TrainConfig,
                  budget: CapacityBudget) -> float:
    """Train one model on one dataset and return its test reconstruction error."""
    if model == "pcrnn":
        run_cfg = replace(cfg, p=dataset.p, iterations=budget.pcrnn_iterations)
        visual, _ = train_visual(dataset, run_cfg)
        motor, _ = train_motor(visual, run_cfg)
        pipe = Pipeline(cfg=run_cfg, visual=visual, motor=motor)
        labels = range(dataset.p)
        return float(np.mean([_error_vs_tests(pipe.controlled_trace(l).o_m,
                                              dataset.test, l) for l in labels]))
    if model in ("mtrnn50", "mtrnn100"):
        n = 50 if model == "mtrnn50" else 100
        params = babbling_phase(cfg.arm, budget.mtrnn, cfg.seed, n=n)
        targets = _class_targets(dataset)
        params, h0s = imitation_phase(params, targets, budget.mtrnn, cfg.arm)
        motor_by_label = {
            k: mtrnn_rollout(params, h0s[k], len(targets[k]))[:, VISUAL_DIMS:]
            for k in range(dataset.p)}
        return _eval_executed(dataset, cfg.arm, motor_by_label)
    if model == "rnnfm":
        params = init_rnnfm(cfg.n, dataset.p, tau=cfg.tau, seed=cfg.seed)
        targets = _class_targets(dataset)
        params = rnnfm_train(params, cfg.arm, targets, budget.rnnfm_steps,
                             budget.rnnfm_lr)
        motor_by_label = {
            k: rnnfm_rollout(params, params.h0, k, len(targets[k]))[0]
            for k in range(dataset.p)}
        return _eval_executed(dataset, cfg.arm, motor_by_label)
    raise ValueError(f"unknown model {model!r}")


def run_capacity_experiment(class_counts: tuple = (1, 2, 4, 6, 8),
                            seeds: tuple = (1, 2, 3),
                            models: tuple = ("pcrnn", "mtrnn50", "mtrnn100", "rnnfm"),
                            cfg: TrainConfig | None = None,
                            budget: CapacityBudget | None = None,
                            per_class: int = 40) -> ExperimentReport:
    """Test reconstruction error vs class count for every requested model.

    Each (model, p, seed) cell trains from scratch on a fresh synthetic
    corpus; rows follow the schema model, n, p, seed, test_error.
    """
    cfg = cfg or TrainConfig()
    budget = budget or CapacityBudget()
    report = ExperimentReport(name="capacity",
                              columns=["model", "n", "p", "seed", "test_error"],
                              rows=[])
    n_of = {"pcrnn": cfg.n, "mtrnn50": 50, "mtrnn100": 100, "rnnfm": cfg.n}
    for p in class_counts:
        for seed in seeds:
            dataset = synth_letters(p, per_class, seed=seed)
            for model in models:
                cell_cfg = replace(cfg, seed=seed, p=p)
                err = capacity_cell(model, dataset, cell_cfg, budget)
                report.rows.append([model, n_of[model], p, seed, err])
    return report
