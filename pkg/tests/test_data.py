import numpy as np
import numpy.testing as npt
import pytest

from visuomotor import data
from visuomotor.data import (DataError, Trajectory, load_csv_dir, preprocess,
                             read_dataset, resample, split, synth_letters,
                             transform, write_dataset)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


# --- loading -------------------------------------------------------------------

def test_empty_directory(tmp_path):
    assert load_csv_dir(tmp_path) == []


def test_position_file(tmp_path):
    write_csv(tmp_path / "a_001.csv", "t,x,y", [(0, 0.0, 0.0), (1, 1.0, 0.5), (2, 2.0, 1.0)])
    out = load_csv_dir(tmp_path)
    assert len(out) == 1
    cls, pts = out[0]
    assert cls == "a"
    assert pts.shape == (3, 2)
    npt.assert_array_equal(pts[2], [2.0, 1.0])


def test_velocity_integration():
    # constant (vx, vy) = (1, 0) over 5 rows with dt = 1 integrates to a line
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d)
        write_csv(p / "b_000.csv", "t,vx,vy", [(i, 1.0, 0.0) for i in range(5)])
        (_, pts), = load_csv_dir(p)
    expected = np.column_stack([np.arange(5.0), np.zeros(5)])
    npt.assert_allclose(pts, expected)


def test_malformed_row_names_file_and_line(tmp_path):
    write_csv(tmp_path / "a_0.csv", "t,x,y", [(0, 0.0, 0.0), (1, "oops", 0.0)])
    with pytest.raises(DataError, match=r"a_0\.csv: line 3"):
        load_csv_dir(tmp_path)


def test_unknown_header(tmp_path):
    write_csv(tmp_path / "a_0.csv", "time,x,y", [(0, 0.0, 0.0)])
    with pytest.raises(DataError, match="unknown header"):
        load_csv_dir(tmp_path)


def test_wrong_field_count(tmp_path):
    with open(tmp_path / "a_0.csv", "w") as fh:
        fh.write("t,x,y\n0,1.0\n")
    with pytest.raises(DataError, match="line 2"):
        load_csv_dir(tmp_path)


# --- preprocessing -------------------------------------------------------------

def test_resample_identity_on_matching_length():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((60, 2))
    npt.assert_allclose(resample(pts, 60), pts, atol=1e-12)


def test_resample_straight_segment():
    pts = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
    out = resample(pts, 60)
    assert out.shape == (60, 2)
    npt.assert_allclose(out[:, 1], 0.0, atol=1e-12)
    npt.assert_allclose(np.diff(out[:, 0]), np.full(59, 1 / 59), atol=1e-12)


def test_resample_preserves_endpoints():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((23, 2))
    out = resample(pts, 60)
    npt.assert_array_equal(out[0], pts[0])
    npt.assert_array_equal(out[-1], pts[-1])


def test_resample_needs_two_points():
    with pytest.raises(DataError):
        resample(np.zeros((1, 2)), 60)


def test_preprocess_idempotent_on_preprocessed_data():
    rng = np.random.default_rng(2)
    once = preprocess(rng.standard_normal((37, 2)), 60)
    again = preprocess(once, 60, scale=1.0)
    npt.assert_allclose(again, once, atol=1e-9)


# --- split ---------------------------------------------------------------------

def raw_corpus(classes=("a", "b"), per_class=40, seed=0):
    rng = np.random.default_rng(seed)
    raw = []
    for k, name in enumerate(classes):
        for _ in range(per_class):
            base = np.cumsum(rng.standard_normal((30, 2)) * 0.1, axis=0) + k
            raw.append((name, base))
    return raw


def test_split_counts_and_determinism():
    raw = raw_corpus()
    ds1 = split(raw, seed=5)
    ds2 = split(raw, seed=5)
    assert len(ds1.train) == 40 and len(ds1.test) == 40
    for a, b in zip(ds1.train + ds1.test, ds2.train + ds2.test):
        npt.assert_array_equal(a.points, b.points)
        assert a.label == b.label


def test_split_train_test_disjoint():
    raw = raw_corpus()
    ds = split(raw, seed=1)
    train_keys = {a.points.tobytes() for a in ds.train}
    test_keys = {a.points.tobytes() for a in ds.test}
    assert not train_keys & test_keys


def test_split_insufficient_class_named():
    raw = raw_corpus(per_class=39)
    with pytest.raises(DataError, match="'a'"):
        split(raw, seed=1)


def test_split_normalizes_training_rms_to_one():
    ds = split(raw_corpus(), seed=2)
    pts = np.vstack([t.points for t in ds.train])
    npt.assert_allclose(np.sqrt(np.mean(np.sum(pts ** 2, axis=1))), 1.0, atol=1e-9)
    for t in ds.train + ds.test:
        npt.assert_array_equal(t.points[0], [0.0, 0.0])
        assert t.points.shape == (60, 2)


# --- synthetic letters -----------------------------------------------------------

def test_synth_split_counts():
    ds = synth_letters(3, 40, seed=1)
    assert len(ds.train) == 60 and len(ds.test) == 60
    for label in range(3):
        assert len(ds.by_label("train", label)) == 20
        assert len(ds.by_label("test", label)) == 20


def test_synth_zero_jitter_collapses_classes():
    ds = synth_letters(2, 4, seed=3, jitter=0.0)
    for label in range(2):
        group = ds.by_label("train", label) + ds.by_label("test", label)
        for t in group[1:]:
            npt.assert_allclose(t.points, group[0].points, atol=1e-12)


def test_synth_interclass_exceeds_intraclass_distance():
    ds = synth_letters(8, 10, seed=4)
    trajs = ds.train + ds.test
    def mean_pairwise(pool_a, pool_b, same):
        dists = []
        for i, a in enumerate(pool_a):
            for j, b in enumerate(pool_b):
                if same and j <= i:
                    continue
                dists.append(np.mean(np.linalg.norm(a.points - b.points, axis=1)))
        return float(np.mean(dists))
    for la in range(8):
        pool_a = [t for t in trajs if t.label == la]
        intra = mean_pairwise(pool_a, pool_a, same=True)
        for lb in range(8):
            if lb == la:
                continue
            pool_b = [t for t in trajs if t.label == lb]
            inter = mean_pairwise(pool_a, pool_b, same=False)
            assert inter > intra, (la, lb, inter, intra)


def test_synth_rejects_oversized_jitter():
    with pytest.raises(ValueError):
        synth_letters(2, 4, jitter=0.2)


def test_synth_class_count_bounds():
    with pytest.raises(ValueError):
        synth_letters(17, 4)


# --- transform -------------------------------------------------------------------

def seg():
    return Trajectory(np.array([[0.0, 0.0], [1.0, 0.0]]), 0)


def test_transform_identity():
    out = transform(seg(), 1.0, 0.0)
    npt.assert_allclose(out.points, seg().points, atol=1e-15)


def test_transform_scale():
    out = transform(seg(), 2.0, 0.0)
    npt.assert_allclose(out.points, [[0, 0], [2, 0]], atol=1e-15)


def test_transform_rotation():
    out = transform(seg(), 1.0, np.pi / 2)
    npt.assert_allclose(out.points, [[0, 0], [0, 1]], atol=1e-12)


def test_transform_about_first_point():
    traj = Trajectory(np.array([[1.0, 1.0], [2.0, 1.0]]), 0)
    out = transform(traj, 2.0, 0.0)
    npt.assert_allclose(out.points, [[1, 1], [3, 1]], atol=1e-12)


def test_transform_inverse_roundtrip():
    rng = np.random.default_rng(9)
    for _ in range(50):
        traj = Trajectory(rng.standard_normal((20, 2)), 0)
        s = float(rng.uniform(0.3, 3.0))
        a = float(rng.uniform(-np.pi, np.pi))
        back = transform(transform(traj, s, a), 1 / s, -a)
        npt.assert_allclose(back.points, traj.points, atol=1e-9)


# --- dataset directory round trip -------------------------------------------------

def test_write_read_roundtrip(tmp_path):
    ds = synth_letters(3, 8, seed=7)
    write_dataset(ds, tmp_path)
    back = read_dataset(tmp_path)
    assert back.class_names == ds.class_names
    assert back.scale == ds.scale
    assert back.seed == ds.seed
    key = lambda pool: sorted(((t.label, t.points.tobytes()) for t in pool))
    assert key(back.train) == key(ds.train)
    assert key(back.test) == key(ds.test)


def test_read_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        read_dataset(tmp_path)


def test_all_outputs_are_fixed_length_finite():
    ds = synth_letters(16, 6, seed=8)
    for t in ds.train + ds.test:
        assert t.points.shape == (data.TRAJECTORY_LENGTH, 2)
        assert np.all(np.isfinite(t.points))
