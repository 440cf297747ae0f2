"""Prediction-error control coupling the motor network to visual targets.

Each timestep the motor network emits a command; the controller pushes that
command down the gradient of the squared distance between the forward-model
observation and the target observation, and the corrected command is fed back
to the network as its inference target. An optional squared-error threshold
gates the whole feedback pathway on and off (intermittent control).

The coupling runs in either direction. visual_to_motor corrects motor
commands against visual predictions through the arm model. motor_to_visual
corrects the visual network's hidden state instead, using the motor-side
observations as inference targets; the observation map there is the identity,
so no gradient step through a forward model is needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import ArmConfig, forward_kinematics, jacobian
from .pcrnn import LearningRates, PcrnnParams, PcrnnState, infer_step, local_update, predict_step

VISUAL_TO_MOTOR = "visual_to_motor"
MOTOR_TO_VISUAL = "motor_to_visual"


@dataclass
class AifOptions:
    """Controller settings.

    gate_threshold None means the feedback pathway is always on. direction
    selects which network the feedback corrects.
    """

    alpha_m: float = 0.02
    grad_steps: int = 1
    gate_threshold: float | None = None
    direction: str = VISUAL_TO_MOTOR

    def __post_init__(self):
        if self.alpha_m < 0:
            raise ValueError("alpha_m must be non-negative")
        if self.grad_steps < 1:
            raise ValueError("grad_steps must be >= 1")
        if self.direction not in (VISUAL_TO_MOTOR, MOTOR_TO_VISUAL):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class ControlTrace:
    """Per-timestep record of a controlled rollout.

    m is the network's raw command, m_star the command after gating and
    correction, o_m the observation actually produced (forward model of
    m_star, or the prediction itself in motor_to_visual mode), o_v the target
    observation. err2 is the squared observation error of the uncorrected
    command (after any perturbation), i.e. the quantity the gate tests.
    """

    m: np.ndarray        # (T, dof)
    m_star: np.ndarray   # (T, dof)
    o_m: np.ndarray      # (T, 2)
    o_v: np.ndarray      # (T, 2)
    err2: np.ndarray     # (T,)
    gate: np.ndarray     # (T,) bool

    def mean_visual_error(self) -> float:
        """Mean per-step distance between produced and target observations."""
        return float(np.mean(np.linalg.norm(self.o_m - self.o_v, axis=1)))

    def activations(self) -> int:
        return int(np.sum(self.gate))

    def to_csv(self, path: str | Path) -> None:
        dof = self.m.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"theta{k}" for k in range(dof)]
                       + [f"theta_star{k}" for k in range(dof)]
                       + ["omx", "omy", "ovx", "ovy", "err2", "gate"])
            for t in range(len(self.m)):
                w.writerow([t]
                           + [repr(float(v)) for v in self.m[t]]
                           + [repr(float(v)) for v in self.m_star[t]]
                           + [repr(float(self.o_m[t, 0])), repr(float(self.o_m[t, 1]))]
                           + [repr(float(self.o_v[t, 0])), repr(float(self.o_v[t, 1]))]
                           + [repr(float(self.err2[t])), int(self.gate[t])])


def correct_motor(m: np.ndarray, o_v: np.ndarray, cfg: ArmConfig,
                  opts: AifOptions) -> tuple[np.ndarray, float]:
    """Gradient-descend the command on its squared observation error.

    Runs opts.grad_steps steps of m <- m - alpha_m * 2 J(m)^T (f(m) - o_v).
    Returns the corrected command and the squared error of the input command.
    """
    diff0 = forward_kinematics(cfg, m) - o_v
    err = float(diff0 @ diff0)
    m_star = np.asarray(m, dtype=float).copy()
    for _ in range(opts.grad_steps):
        diff = forward_kinematics(cfg, m_star) - o_v
        m_star -= opts.alpha_m * 2.0 * (jacobian(cfg, m_star).T @ diff)
    return m_star, err


def gated_correct(m: np.ndarray, o_v: np.ndarray, cfg: ArmConfig,
                  opts: AifOptions) -> tuple[np.ndarray, bool]:
    """Apply correct_motor only when the squared error reaches the threshold."""
    if opts.gate_threshold is None:
        raise ValueError("gated_correct requires opts.gate_threshold")
    diff = forward_kinematics(cfg, m) - o_v
    if float(diff @ diff) < opts.gate_threshold:
        return np.asarray(m, dtype=float).copy(), False
    m_star, _ = correct_motor(m, o_v, cfg, opts)
    return m_star, True


def controlled_rollout(params: PcrnnParams, target_traj: np.ndarray,
                       cfg: ArmConfig, opts: AifOptions, rates: LearningRates,
                       h0: np.ndarray, c0: np.ndarray,
                       perturb: np.ndarray | None = None,
                       learn: bool = False) -> ControlTrace:
    """Roll the network under prediction-error control.

    Per step: predict a command, add the optional perturbation, gate and
    correct it against the target observation, then feed the corrected
    command back as the inference target. With learn=True the local weight
    updates run every step, mutating ``params`` (callers pass a private copy).

    In motor_to_visual mode the observation map is the identity and the
    correction feeds the target observation itself back as the inference
    target (alpha_m plays no role); the produced observation is the network's
    own prediction.
    """
    T = len(target_traj)
    if perturb is not None and len(perturb) != T:
        raise ValueError(f"perturbation length {len(perturb)} != T={T}")
    visual_to_motor = opts.direction == VISUAL_TO_MOTOR
    if visual_to_motor and params.out_dim != 3:
        raise ValueError(f"visual_to_motor control needs a 3-dof command network, got out_dim={params.out_dim}")

    dof = params.out_dim
    trace = ControlTrace(
        m=np.zeros((T, dof)), m_star=np.zeros((T, dof)),
        o_m=np.zeros((T, 2)), o_v=np.asarray(target_traj, dtype=float).copy(),
        err2=np.zeros(T), gate=np.zeros(T, dtype=bool),
    )
    state = PcrnnState.initial(h0, c0, dof)
    for t in range(T):
        h, x = predict_step(params, state)
        command = x + perturb[t] if perturb is not None else x
        target = target_traj[t]
        if visual_to_motor:
            diff = forward_kinematics(cfg, command) - target
        else:
            diff = command - target
        err2 = float(diff @ diff)
        active = opts.gate_threshold is None or err2 >= opts.gate_threshold
        if not active:
            m_star = command.copy()
        elif visual_to_motor:
            m_star, _ = correct_motor(command, target, cfg, opts)
        else:
            m_star = np.asarray(target, dtype=float).copy()
        prev_post, c_prev = state.h_post, state.c
        state = infer_step(params, h, x, m_star, prev_post, c_prev, rates)
        if learn:
            local_update(params, prev_post, c_prev, h, state.eps, state.eps_h, rates)
        trace.m[t] = x
        trace.m_star[t] = m_star
        trace.o_m[t] = forward_kinematics(cfg, m_star) if visual_to_motor else x
        trace.err2[t] = err2
        trace.gate[t] = active
    return trace
