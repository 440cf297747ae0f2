"""Handwriting-trajectory ingestion, preprocessing and synthetic letters.

Every trajectory that leaves this module has exactly ``TRAJECTORY_LENGTH``
points, starts at the origin, and is scaled by a dataset-wide factor chosen
so the training split has unit root-mean-square point magnitude. The factor
is computed once on the training split and reused verbatim for test data.

CSV files hold one trajectory each with header ``t,x,y`` (positions) or
``t,vx,vy`` (pen velocities, integrated to positions on load); the filename
prefix up to the first underscore is the class name.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRAJECTORY_LENGTH = 60


class DataError(Exception):
    """Malformed or insufficient input data."""


@dataclass
class Trajectory:
    points: np.ndarray  # (T, 2)
    label: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise DataError(f"trajectory points must be (T, 2), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise DataError("trajectory contains non-finite points")


@dataclass
class Dataset:
    train: list[Trajectory]
    test: list[Trajectory]
    class_names: list[str]
    scale: float
    seed: int

    @property
    def p(self) -> int:
        return len(self.class_names)

    def by_label(self, split: str, label: int) -> list[Trajectory]:
        pool = self.train if split == "train" else self.test
        return [t for t in pool if t.label == label]


def load_csv_dir(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Read every trajectory CSV in a directory.

    Returns (class_name, positions) pairs, velocities integrated on load.
    """
    path = Path(path)
    out = []
    for f in sorted(path.glob("*.csv")):
        cls = f.stem.split("_")[0]
        out.append((cls, _load_csv(f)))
    return out


def _load_csv(f: Path) -> np.ndarray:
    with open(f, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{f}: empty file")
        header = [h.strip() for h in header]
        if header == ["t", "x", "y"]:
            velocity = False
        elif header == ["t", "vx", "vy"]:
            velocity = True
        else:
            raise DataError(f"{f}: unknown header {header!r}, expected t,x,y or t,vx,vy")
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{f}: line {i}: expected 3 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{f}: line {i}: non-numeric value in {row!r}")
    if not rows:
        raise DataError(f"{f}: no data rows")
    arr = np.array(rows)
    t, coords = arr[:, 0], arr[:, 1:]
    if not velocity:
        return coords
    # Integrate velocities from the origin: pos_i = sum_{j<i} v_j * dt_j.
    dt = np.diff(t)
    pos = np.zeros_like(coords)
    pos[1:] = np.cumsum(coords[:-1] * dt[:, None], axis=0)
    return pos


def resample(points: np.ndarray, T: int = TRAJECTORY_LENGTH) -> np.ndarray:
    """Linear time-resampling to exactly T points, endpoints preserved."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        raise DataError(f"need at least 2 points to resample, got {len(points)}")
    src = np.linspace(0.0, 1.0, len(points))
    dst = np.linspace(0.0, 1.0, T)
    return np.column_stack([np.interp(dst, src, points[:, k]) for k in range(2)])


def preprocess(points: np.ndarray, T: int = TRAJECTORY_LENGTH,
               scale: float | None = None) -> np.ndarray:
    """Resample to T points and translate the first point to the origin.

    Divides by ``scale`` when given (the dataset-wide RMS factor).
    """
    pts = resample(points, T)
    pts = pts - pts[0]
    if scale is not None:
        pts = pts / scale
    return pts


def rms_magnitude(trajectories: list[np.ndarray]) -> float:
    """Root-mean-square point magnitude over all points of all trajectories."""
    sq = [np.sum(p ** 2, axis=1) for p in trajectories]
    return float(np.sqrt(np.mean(np.concatenate(sq))))


def split(raw: list[tuple[str, np.ndarray]], per_class_train: int = 20,
          per_class_test: int = 20, seed: int = 0,
          T: int = TRAJECTORY_LENGTH) -> Dataset:
    """Seeded per-class shuffle into disjoint train/test, then normalize.

    Resamples and origin-translates every trajectory, computes the RMS scale
    factor on the training split only, and applies it to both splits.
    """
    by_class: dict[str, list[np.ndarray]] = {}
    for name, pts in raw:
        by_class.setdefault(name, []).append(pts)
    class_names = sorted(by_class)
    if not class_names:
        raise DataError("no trajectories to split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    need = per_class_train + per_class_test
    train_pts: list[tuple[np.ndarray, int]] = []
    test_pts: list[tuple[np.ndarray, int]] = []
    for label, name in enumerate(class_names):
        pool = by_class[name]
        if len(pool) < need:
            raise DataError(f"class {name!r} has {len(pool)} trajectories, need {need}")
        order = rng.permutation(len(pool))
        for i in order[:per_class_train]:
            train_pts.append((preprocess(pool[i], T), label))
        for i in order[per_class_train:need]:
            test_pts.append((preprocess(pool[i], T), label))
    scale = rms_magnitude([p for p, _ in train_pts])
    train = [Trajectory(p / scale, lab) for p, lab in train_pts]
    test = [Trajectory(p / scale, lab) for p, lab in test_pts]
    return Dataset(train=train, test=test, class_names=class_names, scale=scale, seed=seed)


def transform(traj: Trajectory, scale: float = 1.0, angle: float = 0.0) -> Trajectory:
    """Rotate by ``angle`` then scale by ``scale`` about the first point."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    first = traj.points[0]
    pts = first + scale * ((traj.points - first) @ R.T)
    return Trajectory(pts, traj.label)


def transform_points(points: np.ndarray, scale: float = 1.0, angle: float = 0.0) -> np.ndarray:
    return transform(Trajectory(points, 0), scale, angle).points


# --- Synthetic letter corpus -------------------------------------------------
#
# Each class is a fixed control polygon traced by a Catmull-Rom spline; jitter
# perturbs the control points per sample. Shapes are loops, hooks, arcs and
# zigzags distinct enough that inter-class distances dominate intra-class ones.

_CP = {
    "a": [(1.0, 0.6), (0.5, 1.0), (0.0, 0.6), (0.0, 0.3), (0.5, 0.0),
          (1.0, 0.35), (1.0, 0.9), (1.1, 0.2), (1.4, 0.0)],
    "b": [(0.0, 1.6), (0.0, 0.8), (0.0, 0.0), (0.6, 0.0), (0.9, 0.4),
          (0.6, 0.8), (0.1, 0.75)],
    "c": [(1.0, 0.9), (0.5, 1.05), (0.0, 0.7), (0.0, 0.3), (0.5, -0.05),
          (1.0, 0.1)],
    "e": [(0.0, 0.5), (0.8, 0.55), (0.8, 0.9), (0.3, 1.0), (0.0, 0.55),
          (0.2, 0.05), (0.8, 0.0)],
    "g": [(1.0, 0.7), (0.5, 1.0), (0.0, 0.6), (0.3, 0.2), (0.9, 0.35),
          (1.0, 0.8), (1.0, -0.3), (0.6, -0.7), (0.1, -0.5)],
    "h": [(0.0, 1.6), (0.0, 0.8), (0.0, 0.05), (0.2, 0.6), (0.6, 0.75),
          (0.9, 0.45), (0.9, 0.0)],
    "l": [(0.0, 1.6), (0.05, 1.0), (0.0, 0.4), (0.1, 0.0), (0.5, 0.0)],
    "m": [(0.0, 0.0), (0.0, 0.8), (0.25, 0.9), (0.45, 0.45), (0.5, 0.0),
          (0.55, 0.8), (0.8, 0.9), (1.0, 0.45), (1.0, 0.0)],
    "n": [(0.0, 0.0), (0.0, 0.9), (0.3, 0.95), (0.6, 0.6), (0.65, 0.0)],
    "o": [(0.5, 1.0), (0.0, 0.65), (0.0, 0.3), (0.5, 0.0), (1.0, 0.3),
          (1.0, 0.65), (0.55, 1.0)],
    "r": [(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.2, 0.7), (0.55, 0.95),
          (0.8, 0.8)],
    "s": [(0.9, 0.9), (0.4, 1.0), (0.1, 0.75), (0.5, 0.5), (0.9, 0.25),
          (0.5, 0.0), (0.0, 0.1)],
    "u": [(0.0, 1.0), (0.0, 0.4), (0.3, 0.0), (0.7, 0.15), (0.8, 0.6),
          (0.85, 1.0), (0.9, 0.3), (1.1, 0.0)],
    "v": [(0.0, 1.0), (0.2, 0.5), (0.45, 0.0), (0.7, 0.5), (0.9, 1.0)],
    "w": [(0.0, 1.0), (0.15, 0.0), (0.4, 0.7), (0.5, 0.8), (0.65, 0.0),
          (0.9, 1.0)],
    "z": [(0.0, 1.0), (0.5, 1.0), (1.0, 1.0), (0.5, 0.55), (0.0, 0.0),
          (0.5, 0.0), (1.0, 0.0)],
}

SYNTH_CLASS_NAMES = sorted(_CP)


def _catmull_rom(cp: np.ndarray, samples: int) -> np.ndarray:
    """Centripetal-free Catmull-Rom spline through the control points."""
    padded = np.vstack([2 * cp[0] - cp[1], cp, 2 * cp[-1] - cp[-2]])
    segs = len(cp) - 1
    per = max(2, samples // segs)
    pts = []
    for i in range(segs):
        p0, p1, p2, p3 = padded[i], padded[i + 1], padded[i + 2], padded[i + 3]
        t = np.linspace(0.0, 1.0, per, endpoint=(i == segs - 1))[:, None]
        pts.append(
            0.5 * ((2 * p1) + (-p0 + p2) * t
                   + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2
                   + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3)
        )
    return np.vstack(pts)


def synth_letters(classes: int = 3, per_class: int = 40, seed: int = 0,
                  jitter: float = 0.04, T: int = TRAJECTORY_LENGTH) -> Dataset:
    """Offline letter corpus: jittered spline templates, split train/test.

    ``jitter`` is the per-control-point uniform perturbation as a fraction of
    the template bounding-box diagonal (kept <= 5%). per_class samples are
    generated per class and split half train / half test.
    """
    if not 1 <= classes <= len(SYNTH_CLASS_NAMES):
        raise ValueError(f"classes must be in [1, {len(SYNTH_CLASS_NAMES)}]")
    if jitter > 0.05:
        raise ValueError("jitter above 5% of scale defeats the class structure")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E7]))
    names = SYNTH_CLASS_NAMES[:classes]
    raw: list[tuple[str, np.ndarray]] = []
    for name in names:
        cp = np.asarray(_CP[name], dtype=float)
        diag = math.hypot(*(cp.max(axis=0) - cp.min(axis=0)))
        for _ in range(per_class):
            wobble = rng.uniform(-jitter * diag, jitter * diag, size=cp.shape)
            raw.append((name, _catmull_rom(cp + wobble, samples=120)))
    return split(raw, per_class_train=per_class // 2,
                 per_class_test=per_class - per_class // 2, seed=seed, T=T)


# --- Dataset directory layout -------------------------------------------------

def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write manifest.json plus one CSV per trajectory under train/ and test/."""
    path = Path(path)
    for sub, pool in (("train", ds.train), ("test", ds.test)):
        d = path / sub
        d.mkdir(parents=True, exist_ok=True)
        counters: dict[int, int] = {}
        for traj in pool:
            i = counters.get(traj.label, 0)
            counters[traj.label] = i + 1
            name = ds.class_names[traj.label]
            with open(d / f"{name}_{i:03d}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "x", "y"])
                for t, (x, y) in enumerate(traj.points):
                    w.writerow([t, repr(float(x)), repr(float(y))])
    manifest = {
        "class_names": ds.class_names,
        "per_class_train": len(ds.train) // max(ds.p, 1),
        "per_class_test": len(ds.test) // max(ds.p, 1),
        "scale": ds.scale,
        "seed": ds.seed,
        "trajectory_length": TRAJECTORY_LENGTH,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory written by write_dataset."""
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise DataError(f"{path}: missing manifest.json")
    with open(mf) as fh:
        manifest = json.load(fh)
    class_names = list(manifest["class_names"])
    label_of = {name: i for i, name in enumerate(class_names)}
    pools = {}
    for sub in ("train", "test"):
        pools[sub] = []
        for cls, pts in load_csv_dir(path / sub):
            if cls not in label_of:
                raise DataError(f"{path / sub}: class {cls!r} not in manifest")
            pools[sub].append(Trajectory(pts, label_of[cls]))
    return Dataset(train=pools["train"], test=pools["test"],
                   class_names=class_names, scale=float(manifest["scale"]),
                   seed=int(manifest["seed"]))
