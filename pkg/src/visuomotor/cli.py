"""Command-line harness: data generation, the two training stages, evaluation,
experiments and figure emission.

Every run writes a manifest.json (config snapshot, seed, content hashes of the
inputs) next to its artifacts so it can be reproduced bit-exactly. Exit codes:
0 success, 2 usage, 3 data/config/checkpoint problem, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, baselines, data, pipeline, plots
from .data import DataError
from .pcrnn import LearningRates, infer_causes, rollout
from .pipeline import (CheckpointError, ConfigError, DivergenceError,
                       ExperimentReport, Pipeline, TrainConfig,
                       apply_overrides, config_to_dict, eval_reconstruction,
                       load_checkpoint, one_hot, parse_config, save_checkpoint)

OUT_ENV = "VISUOMOTOR_OUT"


def _default_out(verb: str) -> Path:
    root = os.environ.get(OUT_ENV, "out")
    return Path(root) / verb


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _hash_inputs(paths: list[Path]) -> dict:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            mf = p / "manifest.json"
            if mf.exists():
                hashes[str(mf)] = _sha256(mf)
        elif p.exists():
            hashes[str(p)] = _sha256(p)
    return hashes


def _write_manifest(outdir: Path, verb: str, cfg: TrainConfig | None,
                    inputs: list[Path], extra: dict | None = None) -> None:
    manifest = {
        "tool": "visuomotor", "version": __version__, "verb": verb,
        "config": config_to_dict(cfg) if cfg else None,
        "seed": cfg.seed if cfg else None,
        "inputs": _hash_inputs(inputs),
    }
    if extra:
        manifest.update(extra)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _load_cfg(args) -> TrainConfig:
    cfg = parse_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _outdir(args, verb: str) -> Path:
    out = Path(args.out) if args.out else _default_out(verb)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_pipeline(args, cfg: TrainConfig, need_motor: bool) -> tuple[Pipeline, list[Path]]:
    inputs = [Path(args.visual)]
    visual = load_checkpoint(args.visual)
    motor = None
    if need_motor:
        if not args.motor:
            raise ConfigError("this command needs --motor CKPT")
        motor = load_checkpoint(args.motor)
        inputs.append(Path(args.motor))
        if motor.p != visual.p:
            raise CheckpointError(
                f"motor checkpoint has p={motor.p} but visual has p={visual.p}")
    cfg = replace(cfg, n=visual.n, p=visual.p,
                  d=visual.d if visual.d != visual.n // 2 else cfg.d,
                  tau=visual.tau)
    return Pipeline(cfg=cfg, visual=visual, motor=motor), inputs


def _check_dataset_p(ds: data.Dataset, params_p: int) -> None:
    if ds.p != params_p:
        raise CheckpointError(
            f"dataset has {ds.p} classes but checkpoint expects p={params_p}")


# --- verb implementations -----------------------------------------------------

def cmd_synth(args) -> int:
    out = _outdir(args, "synth")
    ds = data.synth_letters(args.classes, args.per_class, seed=args.seed or 1,
                            jitter=args.jitter)
    data.write_dataset(ds, out)
    cfg = replace(TrainConfig(), p=ds.p, seed=args.seed or 1)
    _write_manifest(out, "synth", cfg, [], extra={
        "classes": ds.class_names, "per_class": args.per_class,
        "jitter": args.jitter, "scale": ds.scale})
    n = len(ds.train) + len(ds.test)
    print(f"synth: wrote {n} trajectories ({ds.p} classes) to {out}")
    return 0


def cmd_ingest(args) -> int:
    out = _outdir(args, "ingest")
    raw = data.load_csv_dir(args.raw)
    ds = data.split(raw, per_class_train=args.per_class_train,
                    per_class_test=args.per_class_test, seed=args.seed or 1)
    data.write_dataset(ds, out)
    cfg = replace(TrainConfig(), p=ds.p, seed=args.seed or 1)
    _write_manifest(out, "ingest", cfg, [Path(args.raw)],
                    extra={"classes": ds.class_names, "scale": ds.scale})
    print(f"ingest: {len(ds.train)} train / {len(ds.test)} test trajectories "
          f"({ds.p} classes) -> {out}")
    return 0


def cmd_train_visual(args) -> int:
    out = _outdir(args, "train-visual")
    ds = data.read_dataset(args.dataset)
    cfg = replace(_load_cfg(args), p=ds.p)
    params, loss = pipeline.train_visual(ds, cfg)
    ckpt = out / "visual.ckpt"
    save_checkpoint(params, ckpt)
    np.savetxt(out / "visual_loss.csv", np.column_stack([np.arange(len(loss)), loss]),
               delimiter=",", header="iteration,mean_error", comments="")
    _write_manifest(out, "train-visual", cfg, [Path(args.dataset)],
                    extra={"final_loss": float(loss[-1])})
    print(f"train-visual: final mean error {loss[-1]:.4f} after {cfg.iterations} "
          f"iterations -> {ckpt}")
    return 0


def cmd_train_motor(args) -> int:
    out = _outdir(args, "train-motor")
    visual = load_checkpoint(args.visual)
    cfg = replace(_load_cfg(args), n=visual.n, p=visual.p, tau=visual.tau)
    params, loss = pipeline.train_motor(visual, cfg)
    ckpt = out / "motor.ckpt"
    save_checkpoint(params, ckpt)
    np.savetxt(out / "motor_loss.csv", np.column_stack([np.arange(len(loss)), loss]),
               delimiter=",", header="iteration,mean_error", comments="")
    _write_manifest(out, "train-motor", cfg, [Path(args.visual)],
                    extra={"final_loss": float(loss[-1])})
    print(f"train-motor: final tracking error {loss[-1]:.4f} after "
          f"{cfg.iterations} iterations -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    out = _outdir(args, "eval")
    ds = data.read_dataset(args.dataset)
    pipe, inputs = _build_pipeline(args, _load_cfg(args),
                                   need_motor=args.mode.startswith("motor"))
    _check_dataset_p(ds, pipe.visual.p)
    err = eval_reconstruction(pipe, ds.test, args.mode)
    with open(out / "eval.csv", "w") as fh:
        fh.write("mode,mean_error\n")
        fh.write(f"{args.mode},{err!r}\n")
    _write_manifest(out, "eval", pipe.cfg, inputs + [Path(args.dataset)],
                    extra={"mode": args.mode, "mean_error": err})
    print(f"eval[{args.mode}]: mean reconstruction error {err:.4f} -> {out}")
    return 0


def cmd_plot(args) -> int:
    out = _outdir(args, "plot")
    ds = data.read_dataset(args.dataset)
    pipe, inputs = _build_pipeline(args, _load_cfg(args),
                                   need_motor=args.what == "motor")
    _check_dataset_p(ds, pipe.visual.p)
    written = []
    if args.what == "heatmap":
        for label, name in enumerate(ds.class_names):
            pred = pipe.visual_prediction(label)
            f = out / f"heatmap_{name}.svg"
            plots.plot_heatmap([pred], path=f, title=f"class {name}")
            written.append(f)
    elif args.what == "trajectories":
        for label, name in enumerate(ds.class_names):
            refs = ds.by_label("test", label)[:3]
            series = [plots.Series(r.points, "", "#bbbbbb") for r in refs]
            series.append(plots.Series(pipe.visual_prediction(label),
                                       f"predicted {name}", "#d62728"))
            f = out / f"trajectories_{name}.svg"
            plots.plot_trajectories(series, path=f, title=f"class {name}")
            written.append(f)
    else:  # motor: executed end-effector path plus a few arm poses
        for label, name in enumerate(ds.class_names):
            trace = pipe.controlled_trace(label)
            poses = [trace.m_star[t] for t in range(0, len(trace.m_star), 12)]
            f = out / f"arm_{name}.svg"
            plots.plot_arm(pipe.cfg.arm, poses, trajectory=trace.o_m, path=f)
            written.append(f)
    _write_manifest(out, "plot", pipe.cfg, inputs + [Path(args.dataset)],
                    extra={"what": args.what, "files": [str(f) for f in written]})
    print(f"plot[{args.what}]: wrote {len(written)} SVGs -> {out}")
    return 0


def _experiment_svgs(name: str, report: ExperimentReport, out: Path) -> None:
    """A few figure-style panels per experiment from the retained traces."""
    def trace_series(key: str, label: str, color: str, dashed=False):
        tr = report.traces.get(key)
        if tr is None:
            return None
        return plots.Series(tr.o_m, label, color, dashed=dashed)

    if name in ("perturbation", "impairment"):
        cond = {"perturbation": "sigma0.6", "impairment": "sigma0.1"}[name]
        kinds = (("controlled", "#1f77b4"), ("uncontrolled", "#d62728"),
                 ("corrected", "#1f77b4"))
        for label in (0, 1):
            series = []
            target_done = False
            for kind, color in kinds:
                tr = report.traces.get(f"{cond}_label{label}_{kind}")
                if tr is None:
                    continue
                if not target_done:
                    series.append(plots.Series(tr.o_v, "target", "#555555", dashed=True))
                    target_done = True
                series.append(plots.Series(tr.o_m, kind, color))
            if series:
                plots.plot_trajectories(series, path=out / f"{name}_label{label}.svg",
                                        title=f"{name} (label {label})")
    elif name in ("scaling", "rotation"):
        col = "scale" if name == "scaling" else "angle"
        vals = sorted({row[0] for row in report.rows})
        pick = [vals[0], vals[-1]]
        for v in pick:
            series = []
            tr_c = report.traces.get(f"{col}{round(v, 4)}_label0_controlled")
            tr_u = report.traces.get(f"{col}{round(v, 4)}_label0_uncontrolled")
            if tr_c is not None:
                series.append(plots.Series(tr_c.o_v, "target", "#555555", dashed=True))
                series.append(plots.Series(tr_c.o_m, "controlled", "#1f77b4"))
            if tr_u is not None:
                series.append(plots.Series(tr_u.o_m, "uncontrolled", "#d62728"))
            if series:
                plots.plot_trajectories(
                    series, path=out / f"{name}_{col}{round(v, 3)}.svg",
                    title=f"{name} {col}={round(v, 3)}")
    elif name == "intermittent":
        for key, tr in report.traces.items():
            if not key.endswith("_label0"):
                continue
            series = [plots.Series(tr.o_v, "target", "#555555", dashed=True),
                      plots.Series(tr.o_m, "executed", "#1f77b4",
                                   markers=tr.gate, marker_color="#d62728")]
            thr = key.split("_")[0].removeprefix("thr")
            plots.plot_trajectories(series, path=out / f"intermittent_thr{thr}.svg",
                                    title=f"threshold {thr}")
    elif name == "sandbox":
        series = []
        for key, tr in sorted(report.traces.items()):
            if key.startswith("sweep_alpha"):
                alpha = key.removeprefix("sweep_alpha")
                series.append(plots.Series(tr.o_m, f"alpha_h={alpha}",
                                           dashed=(alpha == "0.0")))
        if series:
            series.append(plots.Series(series[0].points[-1:] * 0 + report.traces["sweep_alpha0.0"].o_v[-1:],
                                       "target", "#000000",
                                       markers=np.array([True]), marker_color="#000000"))
            plots.plot_trajectories(series, path=out / "sandbox_control_sweep.svg",
                                    title="control sweep")
        for group, keys in (("learning", [k for k in sorted(report.traces)
                                          if k.startswith("learning_iter")]),
                            ("perturbation", ["perturb_clean", "perturb_kicked",
                                              "perturb_kicked_uncontrolled"])):
            series = [plots.Series(report.traces[k].o_m, k) for k in keys
                      if k in report.traces]
            if series:
                plots.plot_trajectories(series, path=out / f"sandbox_{group}.svg",
                                        title=f"sandbox {group}")


def cmd_experiment(args) -> int:
    name = args.name
    out = _outdir(args, f"experiment-{name}")
    cfg = _load_cfg(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    inputs: list[Path] = []

    if name == "sandbox":
        report = pipeline.run_sandbox_experiment(cfg)
    elif name == "capacity":
        models = tuple(args.models.split(","))
        counts = tuple(int(c) for c in args.class_counts.split(","))
        budget = baselines.CapacityBudget(pcrnn_iterations=args.pcrnn_iterations)
        budget.mtrnn = replace(budget.mtrnn, I1=args.mtrnn_i1, I2=args.mtrnn_i2,
                               h0_steps=args.mtrnn_h0_steps)
        report = baselines.run_capacity_experiment(
            class_counts=counts, seeds=seeds, models=models, cfg=cfg,
            budget=budget, per_class=args.per_class)
    else:
        ds = data.read_dataset(args.dataset)
        pipe, inputs = _build_pipeline(args, cfg, need_motor=True)
        _check_dataset_p(ds, pipe.visual.p)
        runner = {
            "perturbation": pipeline.run_perturbation_experiment,
            "scaling": pipeline.run_scaling_experiment,
            "rotation": pipeline.run_rotation_experiment,
            "impairment": pipeline.run_impairment_experiment,
            "intermittent": pipeline.run_intermittent_experiment,
        }[name]
        report = runner(pipe, ds, seeds=seeds)
        inputs.append(Path(args.dataset))

    csv_path = out / f"{name}.csv"
    report.to_csv(csv_path)
    _experiment_svgs(name, report, out)
    _write_manifest(out, f"experiment-{name}", cfg, inputs,
                    extra={"seeds": list(seeds), "rows": len(report.rows)})
    print(f"experiment[{name}]: {len(report.rows)} conditions -> {csv_path}")
    return 0


def cmd_train_baseline(args) -> int:
    out = _outdir(args, "train-baseline")
    ds = data.read_dataset(args.dataset)
    cfg = _load_cfg(args)
    budget = baselines.BaselineBudget(I1=args.i1, I2=args.i2,
                                      h0_steps=args.h0_steps)
    targets = [ds.by_label("train", k)[0].points for k in range(ds.p)]
    if args.kind == "mtrnn":
        params = baselines.babbling_phase(cfg.arm, budget, cfg.seed, n=args.n)
        params, h0s = baselines.imitation_phase(params, targets, budget, cfg.arm)
        ckpt = out / "mtrnn.ckpt"
        baselines.save_mtrnn(params, ckpt)
        np.savetxt(out / "mtrnn_h0.csv", h0s, delimiter=",")
        motor = {k: baselines.mtrnn_rollout(params, h0s[k], len(targets[k]))[:, 2:]
                 for k in range(ds.p)}
    else:
        params = baselines.init_rnnfm(cfg.n, ds.p, tau=cfg.tau, seed=cfg.seed)
        baselines.rnnfm_train(params, cfg.arm, targets, args.i2, 2e-3)
        ckpt = None
        motor = {k: baselines.rnnfm_rollout(params, params.h0, k, len(targets[k]))[0]
                 for k in range(ds.p)}
    err = baselines._eval_executed(ds, cfg.arm, motor)
    with open(out / "baseline_eval.csv", "w") as fh:
        fh.write("model,n,p,seed,test_error\n")
        fh.write(f"{args.kind},{args.n},{ds.p},{cfg.seed},{err!r}\n")
    _write_manifest(out, "train-baseline", cfg, [Path(args.dataset)],
                    extra={"kind": args.kind, "test_error": err})
    print(f"train-baseline[{args.kind}]: test error {err:.4f} -> {out}")
    return 0


# --- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="visuomotor",
        description="Visuo-motor trajectory learning and control experiments")
    sub = top.add_subparsers(dest="verb", required=True)

    def common(p, dataset=False, visual=False, motor=False):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<verb>)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       help="override a config key")
        p.add_argument("--seed", type=int, help="override the config seed")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory")
        if visual:
            p.add_argument("--visual", required=True, help="visual checkpoint")
        if motor:
            p.add_argument("--motor", help="motor checkpoint")

    p = sub.add_parser("synth", help="generate the synthetic letter corpus")
    common(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--jitter", type=float, default=0.04)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="preprocess and split a raw CSV directory")
    common(p)
    p.add_argument("--raw", required=True, help="directory of trajectory CSVs")
    p.add_argument("--per-class-train", type=int, default=20)
    p.add_argument("--per-class-test", type=int, default=20)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-visual", help="stage one: visual trajectory learning")
    common(p, dataset=True)
    p.set_defaults(func=cmd_train_visual)

    p = sub.add_parser("train-motor", help="stage two: motor learning via control")
    common(p, visual=True)
    p.set_defaults(func=cmd_train_motor)

    p = sub.add_parser("eval", help="reconstruction error on the test split")
    common(p, dataset=True, visual=True, motor=True)
    p.add_argument("--mode", default="visual",
                   choices=["visual", "motor_controlled", "motor_natural"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="emit figure SVGs")
    common(p, dataset=True, visual=True, motor=True)
    p.add_argument("--what", default="heatmap",
                   choices=["heatmap", "trajectories", "motor"])
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("experiment", help="run one experiment sweep")
    p.add_argument("name", choices=["perturbation", "scaling", "rotation",
                                    "impairment", "intermittent", "sandbox",
                                    "capacity"])
    common(p, visual=False, motor=False)
    p.add_argument("--dataset", help="dataset directory (non-sandbox/capacity)")
    p.add_argument("--visual", help="visual checkpoint")
    p.add_argument("--motor", help="motor checkpoint")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--models", default="pcrnn,mtrnn50",
                   help="capacity: comma-separated model list")
    p.add_argument("--class-counts", default="1,2,4,8",
                   help="capacity: comma-separated class counts")
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--pcrnn-iterations", type=int, default=3000)
    p.add_argument("--mtrnn-i1", type=int, default=400)
    p.add_argument("--mtrnn-i2", type=int, default=40)
    p.add_argument("--mtrnn-h0-steps", type=int, default=50)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("train-baseline", help="train a comparison model")
    common(p, dataset=True)
    p.add_argument("--kind", default="mtrnn", choices=["mtrnn", "rnnfm"])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--i1", type=int, default=3000)
    p.add_argument("--i2", type=int, default=2000)
    p.add_argument("--h0-steps", type=int, default=200)
    p.set_defaults(func=cmd_train_baseline)

    return top


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
