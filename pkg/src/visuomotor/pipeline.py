"""Two-stage training, checkpointing, the shared error metric and all
experiment runners.

Stage one trains the visual network on letter trajectories with the causes
clamped to the one-hot class label. Stage two trains the motor network with
no motor supervision at all: the visual network generates the target
observations, the controller corrects each emitted command through the arm
model, and the corrected command serves as the motor network's own learning
target.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .aif import (AifOptions, ControlTrace, MOTOR_TO_VISUAL, VISUAL_TO_MOTOR,
                  controlled_rollout)
from .arm import ArmConfig
from .data import Dataset, Trajectory, transform_points
from .pcrnn import (LearningRates, PcrnnParams, PcrnnState, infer_step,
                    init_params, initial_state, local_update, predict_step,
                    rollout)


class ConfigError(Exception):
    """Bad experiment configuration file or override."""


class CheckpointError(Exception):
    """Unreadable or inconsistent checkpoint file."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values."""


# --- Configuration -----------------------------------------------------------

@dataclass
class TrainConfig:
    """Every knob of the two training stages and the controller.

    d = 0 means "use n // 2". Rates with the _v suffix drive the visual
    network, _m the motor network. alpha_c is forced to zero inside the
    training loops (causes are clamped one-hot there); the configured value
    is what classification-by-inference uses.
    """

    n: int = 50
    p: int = 3
    d: int = 0
    tau: float = 5.0
    iterations: int = 10000
    seed: int = 1
    rates_v: LearningRates = field(default_factory=lambda: LearningRates(
        alpha_h=0.3, alpha_c=0.5, lambda_out=0.01, lambda_p=0.01,
        lambda_f=0.01, lambda_c=0.05))
    rates_m: LearningRates = field(default_factory=lambda: LearningRates(
        alpha_h=0.1, alpha_c=0.0, lambda_out=0.01, lambda_p=0.01,
        lambda_f=0.01, lambda_c=0.05))
    aif: AifOptions = field(default_factory=AifOptions)
    arm: ArmConfig = field(default_factory=ArmConfig)

    @property
    def factor_dim(self) -> int:
        return self.d if self.d > 0 else self.n // 2


_CONFIG_KEYS = {
    "n": int, "p": int, "d": int, "tau": float, "iterations": int, "seed": int,
    "alpha_h_v": float, "alpha_c_v": float, "lambda_out_v": float,
    "lambda_p_v": float, "lambda_f_v": float, "lambda_c_v": float,
    "alpha_h_m": float, "alpha_c_m": float, "lambda_out_m": float,
    "lambda_p_m": float, "lambda_f_m": float, "lambda_c_m": float,
    "alpha_m": float, "grad_steps": int, "gate_threshold": float,
    "direction": str,
    "shoulder_x": float, "shoulder_y": float,
    "len0": float, "len1": float, "len2": float,
}


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "n": cfg.n, "p": cfg.p, "d": cfg.d, "tau": cfg.tau,
        "iterations": cfg.iterations, "seed": cfg.seed,
        "alpha_h_v": cfg.rates_v.alpha_h, "alpha_c_v": cfg.rates_v.alpha_c,
        "lambda_out_v": cfg.rates_v.lambda_out, "lambda_p_v": cfg.rates_v.lambda_p,
        "lambda_f_v": cfg.rates_v.lambda_f, "lambda_c_v": cfg.rates_v.lambda_c,
        "alpha_h_m": cfg.rates_m.alpha_h, "alpha_c_m": cfg.rates_m.alpha_c,
        "lambda_out_m": cfg.rates_m.lambda_out, "lambda_p_m": cfg.rates_m.lambda_p,
        "lambda_f_m": cfg.rates_m.lambda_f, "lambda_c_m": cfg.rates_m.lambda_c,
        "alpha_m": cfg.aif.alpha_m, "grad_steps": cfg.aif.grad_steps,
        "gate_threshold": cfg.aif.gate_threshold, "direction": cfg.aif.direction,
        "shoulder_x": cfg.arm.shoulder[0], "shoulder_y": cfg.arm.shoulder[1],
        "len0": cfg.arm.lengths[0], "len1": cfg.arm.lengths[1],
        "len2": cfg.arm.lengths[2],
    }


def config_from_dict(values: dict) -> TrainConfig:
    base = config_to_dict(TrainConfig())
    for key in values:
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
    base.update(values)
    rates_v = LearningRates(
        alpha_h=base["alpha_h_v"], alpha_c=base["alpha_c_v"],
        lambda_out=base["lambda_out_v"], lambda_p=base["lambda_p_v"],
        lambda_f=base["lambda_f_v"], lambda_c=base["lambda_c_v"])
    rates_m = LearningRates(
        alpha_h=base["alpha_h_m"], alpha_c=base["alpha_c_m"],
        lambda_out=base["lambda_out_m"], lambda_p=base["lambda_p_m"],
        lambda_f=base["lambda_f_m"], lambda_c=base["lambda_c_m"])
    aif = AifOptions(alpha_m=base["alpha_m"], grad_steps=base["grad_steps"],
                     gate_threshold=base["gate_threshold"],
                     direction=base["direction"])
    arm = ArmConfig(shoulder=(base["shoulder_x"], base["shoulder_y"]),
                    lengths=(base["len0"], base["len1"], base["len2"]))
    return TrainConfig(n=base["n"], p=base["p"], d=base["d"], tau=base["tau"],
                       iterations=base["iterations"], seed=base["seed"],
                       rates_v=rates_v, rates_m=rates_m, aif=aif, arm=arm)


def _parse_value(key: str, raw: str):
    if key not in _CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "gate_threshold" and raw.lower() in ("none", "off"):
        return None
    try:
        return _CONFIG_KEYS[key](raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}")


def parse_config(path: str | Path) -> TrainConfig:
    """Read a flat key = value config file ('#' starts a comment)."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            values[key] = _parse_value(key, raw)
    return config_from_dict(values)


def apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    """Apply key=value override strings on top of a config."""
    values = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        values[key] = _parse_value(key, raw)
    return config_from_dict(values)


# --- Checkpoints ---------------------------------------------------------------

_MAGIC = b"PCRNN1"


def save_checkpoint(params: PcrnnParams, path: str | Path) -> None:
    """Self-describing binary: magic, int32 dims, then float64 tau + weights."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4i", params.n, params.p, params.d, params.out_dim))
        fh.write(struct.pack("<d", params.tau))
        for w in (params.W_p, params.W_f, params.W_c, params.W_out):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> PcrnnParams:
    blob = Path(path).read_bytes()
    if blob[:6] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:6]!r}, expected {_MAGIC!r}")
    n, p, d, out_dim = struct.unpack("<4i", blob[6:22])
    counts = [n * d, n * d, p * d, out_dim * n]
    expected = 22 + 8 + 8 * sum(counts)
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: file is {len(blob)} bytes but header (n={n}, p={p}, d={d}, "
            f"out_dim={out_dim}) implies {expected}")
    (tau,) = struct.unpack("<d", blob[22:30])
    offset = 30
    mats = []
    for count in counts:
        mats.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy())
        offset += 8 * count
    return PcrnnParams(n=n, p=p, d=d, out_dim=out_dim, tau=tau,
                       W_p=mats[0].reshape(n, d), W_f=mats[1].reshape(n, d),
                       W_c=mats[2].reshape(p, d), W_out=mats[3].reshape(out_dim, n))


# --- Training -----------------------------------------------------------------

def one_hot(p: int, label: int) -> np.ndarray:
    c = np.zeros(p)
    c[label] = 1.0
    return c


def _check_finite(value: float, stage: str, iteration: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(
            f"{stage}: loss became non-finite at iteration {iteration}; "
            "reduce the learning rates or tau")


def train_visual(dataset: Dataset, cfg: TrainConfig) -> tuple[PcrnnParams, np.ndarray]:
    """Stage one: online learning of the visual trajectories.

    One training trajectory per iteration, causes clamped to the one-hot
    label (alpha_c = 0), weight updates at every timestep. Returns the
    trained parameters and the per-iteration mean prediction error.
    """
    params = init_params(cfg.n, dataset.p, out_dim=2, tau=cfg.tau,
                         d=cfg.factor_dim, seed=cfg.seed, stream=0)
    h0 = initial_state(cfg.n, cfg.seed, stream=0)
    rates = replace(cfg.rates_v, alpha_c=0.0)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EAC]))
    train = dataset.train
    loss = np.zeros(cfg.iterations)
    for it in range(cfg.iterations):
        traj = train[rng.integers(len(train))]
        state = PcrnnState.initial(h0, one_hot(dataset.p, traj.label), 2)
        err = 0.0
        for target in traj.points:
            h, x = predict_step(params, state)
            prev_post, c_prev = state.h_post, state.c
            state = infer_step(params, h, x, target, prev_post, c_prev, rates)
            local_update(params, prev_post, c_prev, h, state.eps, state.eps_h, rates)
            err += float(np.linalg.norm(state.eps))
        loss[it] = err / len(traj.points)
        _check_finite(loss[it], "train_visual", it)
    return params, loss


def visual_predictions(visual: PcrnnParams, h0: np.ndarray,
                       T: int = data_mod.TRAJECTORY_LENGTH) -> list[np.ndarray]:
    """Pure-prediction rollout per class, the motor stage's targets."""
    preds = []
    for label in range(visual.p):
        outputs, _ = rollout(visual, h0, one_hot(visual.p, label), T)
        preds.append(outputs)
    return preds


def train_motor(visual: PcrnnParams, cfg: TrainConfig) -> tuple[PcrnnParams, np.ndarray]:
    """Stage two: motor learning with no supervision in the motor space.

    Per iteration, one class's predicted visual trajectory is replayed and
    the controller's corrected commands serve as the motor network's per-step
    targets. Returns trained parameters and the per-iteration mean
    end-effector tracking error (visual units).
    """
    p = visual.p
    h0_v = initial_state(cfg.n, cfg.seed, stream=0)
    targets = visual_predictions(visual, h0_v)
    motor = init_params(cfg.n, p, out_dim=3, tau=cfg.tau,
                        d=cfg.factor_dim, seed=cfg.seed, stream=1)
    h0_m = initial_state(cfg.n, cfg.seed, stream=1)
    rates = replace(cfg.rates_m, alpha_c=0.0)
    opts = replace(cfg.aif, gate_threshold=None, direction=VISUAL_TO_MOTOR)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x307E]))
    loss = np.zeros(cfg.iterations)
    for it in range(cfg.iterations):
        k = int(rng.integers(p))
        trace = controlled_rollout(motor, targets[k], cfg.arm, opts, rates,
                                   h0_m, one_hot(p, k), learn=True)
        loss[it] = trace.mean_visual_error()
        _check_finite(loss[it], "train_motor", it)
    return motor, loss


# --- Bundle and evaluation ------------------------------------------------------

@dataclass
class Pipeline:
    """Trained stages plus everything needed to rerun them deterministically."""

    cfg: TrainConfig
    visual: PcrnnParams
    motor: PcrnnParams | None = None
    _vis_preds: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def h0_visual(self) -> np.ndarray:
        return initial_state(self.cfg.n, self.cfg.seed, stream=0)

    @property
    def h0_motor(self) -> np.ndarray:
        return initial_state(self.cfg.n, self.cfg.seed, stream=1)

    def visual_prediction(self, label: int) -> np.ndarray:
        if self._vis_preds is None:
            self._vis_preds = visual_predictions(self.visual, self.h0_visual)
        return self._vis_preds[label]

    def test_rates_motor(self) -> LearningRates:
        return replace(self.cfg.rates_m, alpha_c=0.0)

    def test_opts(self, **kwargs) -> AifOptions:
        return replace(self.cfg.aif, direction=VISUAL_TO_MOTOR, **kwargs)

    def controlled_trace(self, label: int, target: np.ndarray | None = None,
                         perturb: np.ndarray | None = None,
                         gate_threshold: float | None = None) -> ControlTrace:
        if self.motor is None:
            raise ValueError("pipeline has no trained motor network")
        o_v = self.visual_prediction(label) if target is None else target
        return controlled_rollout(self.motor, o_v, self.cfg.arm,
                                  self.test_opts(gate_threshold=gate_threshold),
                                  self.test_rates_motor(), self.h0_motor,
                                  one_hot(self.motor.p, label), perturb=perturb)

    def uncontrolled_trace(self, label: int, target: np.ndarray | None = None,
                           perturb: np.ndarray | None = None) -> ControlTrace:
        """Control fully off: alpha_m = 0 and alpha_h = 0, all else identical."""
        if self.motor is None:
            raise ValueError("pipeline has no trained motor network")
        o_v = self.visual_prediction(label) if target is None else target
        return controlled_rollout(self.motor, o_v, self.cfg.arm,
                                  self.test_opts(alpha_m=0.0),
                                  replace(self.test_rates_motor(), alpha_h=0.0),
                                  self.h0_motor, one_hot(self.motor.p, label),
                                  perturb=perturb)


def path_error(a: np.ndarray, b: np.ndarray) -> float:
    """Mean point-to-point Euclidean distance between equal-length paths."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"path shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def _error_vs_tests(produced: np.ndarray, testset: list[Trajectory], label: int) -> float:
    refs = [t for t in testset if t.label == label]
    if not refs:
        raise ValueError(f"no test trajectories with label {label}")
    return float(np.mean([path_error(produced, r.points) for r in refs]))


def eval_reconstruction(pipe: "Pipeline | PcrnnParams", testset: list[Trajectory],
                        mode: str = "visual") -> float:
    """Mean reconstruction error of per-class generated trajectories.

    Modes: 'visual' (visual network prediction), 'motor_controlled'
    (end-effector under control), 'motor_natural' (end-effector, control off).
    """
    if isinstance(pipe, PcrnnParams):
        if mode != "visual":
            raise ValueError("bare params only support mode='visual'")
        pipe = Pipeline(cfg=TrainConfig(n=pipe.n, p=pipe.p), visual=pipe)
    labels = sorted({t.label for t in testset})
    produced = {}
    for label in labels:
        if mode == "visual":
            produced[label] = pipe.visual_prediction(label)
        elif mode == "motor_controlled":
            produced[label] = pipe.controlled_trace(label).o_m
        elif mode == "motor_natural":
            produced[label] = pipe.uncontrolled_trace(label).o_m
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return float(np.mean([_error_vs_tests(produced[t.label], testset, t.label)
                          for t in testset]))


# --- Experiment reports ----------------------------------------------------------

@dataclass
class ExperimentReport:
    """Tabular per-condition results plus retained traces for plotting."""

    name: str
    columns: list[str]
    rows: list[list]
    traces: dict[str, ControlTrace] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt_cell(v) for v in row])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def _fmt_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size <= 1:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def _noise_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x4015E, *tags]))


# --- Experiments -------------------------------------------------------------

PERTURBATION_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
SCALE_GRID = tuple(round(0.2 * k, 1) for k in range(1, 11))
ROTATION_GRID = (-np.pi / 4, -np.pi / 6, -np.pi / 12, 0.0, np.pi / 12, np.pi / 6, np.pi / 4)
IMPAIRMENT_GRID = (0.0, 0.02, 0.04, 0.06, 0.08, 0.1)
THRESHOLD_GRID = (3e-4, 1e-3, 3e-3, 1e-2, 3e-2)
PERTURBATION_ONSET = 10  # noise applies at steps t > this (0-based)


def perturbation_noise(sigma2: float, T: int, seed: int, label: int) -> np.ndarray:
    """Zero-mean joint-angle noise, variance sigma2 per axis, for steps t > onset."""
    rng = _noise_rng(seed, int(round(sigma2 * 1000)), label)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=(T, 3)) if sigma2 > 0 else np.zeros((T, 3))
    noise[:PERTURBATION_ONSET + 1] = 0.0
    return noise


def run_perturbation_experiment(pipe: Pipeline, dataset: Dataset,
                                grid: tuple = PERTURBATION_GRID,
                                seeds: tuple = (1, 2, 3)) -> ExperimentReport:
    """Motor-output noise sweep: controlled vs uncontrolled tracking error."""
    T = data_mod.TRAJECTORY_LENGTH
    report = ExperimentReport(
        name="perturbation",
        columns=["sigma_p2", "controlled_mean", "controlled_se",
                 "uncontrolled_mean", "uncontrolled_se", "n_seeds"],
        rows=[])
    for sigma2 in grid:
        per_seed_c, per_seed_u = [], []
        for seed in seeds:
            errs_c, errs_u = [], []
            for label in range(dataset.p):
                noise = perturbation_noise(sigma2, T, seed, label)
                tc = pipe.controlled_trace(label, perturb=noise)
                tu = pipe.uncontrolled_trace(label, perturb=noise)
                errs_c.append(_error_vs_tests(tc.o_m, dataset.test, label))
                errs_u.append(_error_vs_tests(tu.o_m, dataset.test, label))
                if seed == seeds[0] and label < 2:
                    report.traces[f"sigma{sigma2}_label{label}_controlled"] = tc
                    report.traces[f"sigma{sigma2}_label{label}_uncontrolled"] = tu
            per_seed_c.append(float(np.mean(errs_c)))
            per_seed_u.append(float(np.mean(errs_u)))
        cm, cs = _mean_se(per_seed_c)
        um, us = _mean_se(per_seed_u)
        report.rows.append([sigma2, cm, cs, um, us, len(seeds)])
    return report


def _transform_sweep(pipe: Pipeline, dataset: Dataset, conditions: list[tuple],
                     name: str, column: str, seeds: tuple) -> ExperimentReport:
    report = ExperimentReport(
        name=name,
        columns=[column, "controlled_mean", "controlled_se",
                 "uncontrolled_mean", "uncontrolled_se", "n_seeds"],
        rows=[])
    for value, scale, angle in conditions:
        errs_c, errs_u = [], []
        for label in range(dataset.p):
            target = transform_points(pipe.visual_prediction(label), scale, angle)
            refs = [Trajectory(transform_points(t.points, scale, angle), t.label)
                    for t in dataset.test if t.label == label]
            tc = pipe.controlled_trace(label, target=target)
            tu = pipe.uncontrolled_trace(label, target=target)
            errs_c.append(float(np.mean([path_error(tc.o_m, r.points) for r in refs])))
            errs_u.append(float(np.mean([path_error(tu.o_m, r.points) for r in refs])))
            if label < 2:
                report.traces[f"{column}{round(value, 4)}_label{label}_controlled"] = tc
                report.traces[f"{column}{round(value, 4)}_label{label}_uncontrolled"] = tu
        cm, cs = _mean_se(errs_c)
        um, us = _mean_se(errs_u)
        # rollouts here are noise-free, so the spread is over classes, not seeds
        report.rows.append([value, cm, cs, um, us, len(seeds)])
    return report


def run_scaling_experiment(pipe: Pipeline, dataset: Dataset,
                           grid: tuple = SCALE_GRID,
                           seeds: tuple = (1, 2, 3)) -> ExperimentReport:
    """Rescaled visual predictions: can control stretch the motor repertoire?"""
    conditions = [(s, s, 0.0) for s in grid]
    return _transform_sweep(pipe, dataset, conditions, "scaling", "scale", seeds)


def run_rotation_experiment(pipe: Pipeline, dataset: Dataset,
                            grid: tuple = ROTATION_GRID,
                            seeds: tuple = (1, 2, 3)) -> ExperimentReport:
    """Rotated visual predictions, same protocol as the scaling sweep."""
    conditions = [(a, 1.0, a) for a in grid]
    return _transform_sweep(pipe, dataset, conditions, "rotation", "angle", seeds)


def impair_params(params: PcrnnParams, sigma_i2: float, seed: int) -> PcrnnParams:
    """Multiplicative N(1, sigma_i2) noise on every weight entry."""
    rng = _noise_rng(seed, 0x13A1, int(round(sigma_i2 * 10000)))
    out = params.copy()
    sd = np.sqrt(sigma_i2)
    for name in ("W_out", "W_p", "W_f", "W_c"):
        w = getattr(out, name)
        w *= 1.0 + sd * rng.standard_normal(w.shape)
    return out


def run_impairment_experiment(pipe: Pipeline, dataset: Dataset,
                              grid: tuple = IMPAIRMENT_GRID,
                              seeds: tuple = (1, 2, 3)) -> ExperimentReport:
    """Impaired visual network corrected by the motor pathway.

    The motor network rolls out naturally; its end-effector observations
    become the impaired visual network's inference targets (motor_to_visual
    feedback). Corrected vs uncorrected visual predictions are scored against
    the test trajectories.
    """
    report = ExperimentReport(
        name="impairment",
        columns=["sigma_i2", "corrected_mean", "corrected_se",
                 "uncorrected_mean", "uncorrected_se", "n_seeds"],
        rows=[])
    p = pipe.visual.p
    o_m = {label: pipe.uncontrolled_trace(label).o_m for label in range(p)}
    rates = replace(pipe.cfg.rates_v, alpha_c=0.0)
    opts = replace(pipe.cfg.aif, direction=MOTOR_TO_VISUAL, gate_threshold=None)
    for sigma2 in grid:
        per_seed_c, per_seed_u = [], []
        for seed in seeds:
            impaired = impair_params(pipe.visual, sigma2, seed)
            errs_c, errs_u = [], []
            for label in range(p):
                corrected = controlled_rollout(
                    impaired, o_m[label], pipe.cfg.arm, opts, rates,
                    pipe.h0_visual, one_hot(p, label))
                uncorrected, _ = rollout(impaired, pipe.h0_visual,
                                         one_hot(p, label), len(o_m[label]))
                errs_c.append(_error_vs_tests(corrected.o_m, dataset.test, label))
                errs_u.append(_error_vs_tests(uncorrected, dataset.test, label))
                if seed == seeds[0] and label < 2:
                    report.traces[f"sigma{sigma2}_label{label}_corrected"] = corrected
            per_seed_c.append(float(np.mean(errs_c)))
            per_seed_u.append(float(np.mean(errs_u)))
        cm, cs = _mean_se(per_seed_c)
        um, us = _mean_se(per_seed_u)
        report.rows.append([sigma2, cm, cs, um, us, len(seeds)])
    return report


def run_intermittent_experiment(pipe: Pipeline, dataset: Dataset,
                                grid: tuple = THRESHOLD_GRID,
                                seeds: tuple = (1,)) -> ExperimentReport:
    """Gate-threshold sweep; rollouts are noise-free so seeds do not matter."""
    report = ExperimentReport(
        name="intermittent",
        columns=["threshold", "activation_mean", "activation_rate",
                 "controlled_mean", "controlled_se"],
        rows=[])
    T = data_mod.TRAJECTORY_LENGTH
    for threshold in grid:
        acts, errs = [], []
        for label in range(dataset.p):
            trace = pipe.controlled_trace(label, gate_threshold=threshold)
            acts.append(trace.activations())
            errs.append(_error_vs_tests(trace.o_m, dataset.test, label))
            report.traces[f"thr{threshold}_label{label}"] = trace
        em, es = _mean_se(errs)
        report.rows.append([threshold, float(np.mean(acts)),
                            float(np.mean(acts)) / T, em, es])
    return report


# --- Sandbox: 2-D output space, constant target, no forward model ---------------

SANDBOX_TARGET = (0.9, 0.9)
SANDBOX_ALPHAS = (0.0, 0.025, 0.1, 0.2)


def _sandbox_controlled(params: PcrnnParams, h0: np.ndarray, target: np.ndarray,
                        T: int, alpha_h: float, rates: LearningRates,
                        learn: bool = False,
                        state_kick: tuple[int, np.ndarray] | None = None) -> np.ndarray:
    """Rollout with the constant target as per-step inference target.

    state_kick = (step, vector) adds the vector to the posterior state after
    that step's inference, mimicking an external hit on the dynamics.
    """
    run_rates = replace(rates, alpha_h=alpha_h, alpha_c=0.0)
    state = PcrnnState.initial(h0, np.ones(1), params.out_dim)
    outputs = np.zeros((T, params.out_dim))
    for t in range(T):
        h, x = predict_step(params, state)
        prev_post, c_prev = state.h_post, state.c
        state = infer_step(params, h, x, target, prev_post, c_prev, run_rates)
        if learn:
            local_update(params, prev_post, c_prev, h, state.eps, state.eps_h, run_rates)
        if state_kick is not None and t == state_kick[0]:
            state.h_post = state.h_post + state_kick[1]
        outputs[t] = x
    return outputs


def run_sandbox_experiment(cfg: TrainConfig,
                           alphas: tuple = SANDBOX_ALPHAS,
                           target: tuple = SANDBOX_TARGET,
                           train_alpha_h: float = 0.025,
                           train_iterations: int = 2000,
                           perturb_step: int = 20,
                           perturb_scale: float = 2.0,
                           T: int = data_mod.TRAJECTORY_LENGTH) -> ExperimentReport:
    """Simplified 2-D motor control: online adaptation, learning, perturbation.

    Phase A sweeps the state-inference gain on the untrained network. Phase B
    trains against the constant target and tracks how the natural trajectory
    migrates. Phase C kicks the hidden state mid-trajectory after training.
    """
    report = ExperimentReport(
        name="sandbox",
        columns=["phase", "alpha_h", "iterations", "final_distance"],
        rows=[])
    tgt = np.asarray(target, dtype=float)
    params0 = init_params(cfg.n, 1, out_dim=2, tau=cfg.tau,
                          d=cfg.factor_dim, seed=cfg.seed, stream=2)
    h0 = initial_state(cfg.n, cfg.seed, stream=2)
    rates = cfg.rates_m

    for alpha in alphas:
        outputs = _sandbox_controlled(params0.copy(), h0, tgt, T, alpha, rates)
        report.rows.append(["control_sweep", alpha, 0,
                            float(np.linalg.norm(outputs[-1] - tgt))])
        report.traces[f"sweep_alpha{alpha}"] = _outputs_trace(outputs, tgt)

    params = params0.copy()
    checkpoints = sorted({train_iterations // 4, train_iterations // 2,
                          3 * train_iterations // 4, train_iterations})
    done = 0
    for stop in checkpoints:
        for _ in range(done, stop):
            _sandbox_controlled(params, h0, tgt, T, train_alpha_h, rates, learn=True)
        done = stop
        natural = _sandbox_controlled(params.copy(), h0, tgt, T, 0.0, rates)
        report.rows.append(["learning", train_alpha_h, stop,
                            float(np.linalg.norm(natural[-1] - tgt))])
        report.traces[f"learning_iter{stop}"] = _outputs_trace(natural, tgt)

    kick = perturb_scale * _noise_rng(cfg.seed, 0x5B0).standard_normal(cfg.n)
    clean = _sandbox_controlled(params.copy(), h0, tgt, T, alphas[-1], rates)
    kicked = _sandbox_controlled(params.copy(), h0, tgt, T, alphas[-1], rates,
                                 state_kick=(perturb_step, kick))
    kicked_nat = _sandbox_controlled(params.copy(), h0, tgt, T, 0.0, rates,
                                     state_kick=(perturb_step, kick))
    report.rows.append(["perturbation_clean", alphas[-1], train_iterations,
                        float(np.linalg.norm(clean[-1] - tgt))])
    report.rows.append(["perturbation_kicked", alphas[-1], train_iterations,
                        float(np.linalg.norm(kicked[-1] - tgt))])
    report.rows.append(["perturbation_kicked_uncontrolled", 0.0, train_iterations,
                        float(np.linalg.norm(kicked_nat[-1] - tgt))])
    report.traces["perturb_clean"] = _outputs_trace(clean, tgt)
    report.traces["perturb_kicked"] = _outputs_trace(kicked, tgt)
    report.traces["perturb_kicked_uncontrolled"] = _outputs_trace(kicked_nat, tgt)
    return report


def _outputs_trace(outputs: np.ndarray, target: np.ndarray) -> ControlTrace:
    """Wrap a plain 2-D output sequence in a ControlTrace for uniform plotting."""
    T = len(outputs)
    o_v = np.tile(target, (T, 1))
    err2 = np.sum((outputs - o_v) ** 2, axis=1)
    return ControlTrace(m=outputs.copy(), m_star=outputs.copy(),
                        o_m=outputs.copy(), o_v=o_v, err2=err2,
                        gate=np.ones(T, dtype=bool))
