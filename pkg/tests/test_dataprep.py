"""Folder layout checks, streaming statistics vs a two-pass oracle,
deterministic splits, and toy-2D generation."""

import json
import math
import struct

import pytest

from repro_harness.dataprep import (
    ChannelStats,
    Toy2DSpec,
    compute_mean_std,
    generate_2d,
    image_channel_stats,
    iter_image_rows,
    load_2d_csv,
    partition_train_val,
    points_to_csv,
    verify_folder_format,
)
from repro_harness.errors import (
    ChannelMismatchError,
    DegenerateRatioError,
    EmptyInputError,
    InvalidSpecError,
    NonFiniteSampleError,
)
from repro_harness.seeds import make_stream


def two_pass_stats(values):
    """Independent mean/std oracle (two-pass, fsum)."""
    n = len(values)
    mean = math.fsum(values) / n
    m2 = math.fsum((v - mean) ** 2 for v in values)
    std_sample = math.sqrt(m2 / (n - 1)) if n >= 2 else 0.0
    std_population = math.sqrt(m2 / n)
    return mean, std_sample, std_population


# --- folder format ------------------------------------------------------------

def _make_dataset(root, layout):
    for split, classes in layout.items():
        for cls, files in classes.items():
            d = root / split / cls
            d.mkdir(parents=True)
            for name in files:
                (d / name).write_text("img", encoding="utf-8")


def test_valid_layout(tmp_path):
    _make_dataset(tmp_path, {"train": {"a": ["1.png"], "b": ["2.png"]},
                             "val": {"a": ["3.png"], "b": ["4.png"]}})
    report = verify_folder_format(tmp_path)
    assert report.valid
    assert report.classes_per_split["train"] == ["a", "b"]
    assert report.file_counts[("train", "a")] == 1


def test_file_at_wrong_depth(tmp_path):
    _make_dataset(tmp_path, {"train": {"a": ["1.png"]}})
    (tmp_path / "train" / "stray.png").write_text("x", encoding="utf-8")
    report = verify_folder_format(tmp_path)
    assert not report.valid
    assert any("wrong depth" in rule for _, rule in report.violations)


def test_class_set_mismatch(tmp_path):
    _make_dataset(tmp_path, {"train": {"a": ["1.png"], "b": ["2.png"]},
                             "val": {"a": ["3.png"]}})
    report = verify_folder_format(tmp_path)
    assert any("class set differs" in rule for _, rule in report.violations)


def test_empty_class_dir(tmp_path):
    _make_dataset(tmp_path, {"train": {"a": ["1.png"]}})
    (tmp_path / "train" / "empty_class").mkdir()
    report = verify_folder_format(tmp_path)
    assert any("empty class" in rule for _, rule in report.violations)


def test_missing_train_split(tmp_path):
    _make_dataset(tmp_path, {"val": {"a": ["1.png"]}})
    report = verify_folder_format(tmp_path)
    assert any("missing required split" in rule for _, rule in report.violations)


def test_unrecognized_split(tmp_path):
    _make_dataset(tmp_path, {"train": {"a": ["1.png"]}, "holdout": {"a": ["2.png"]}})
    report = verify_folder_format(tmp_path)
    assert any("unrecognized" in rule for _, rule in report.violations)


def test_not_a_directory(tmp_path):
    with pytest.raises(NotADirectoryError):
        verify_folder_format(tmp_path / "absent")


# --- streaming statistics --------------------------------------------------------

def test_single_channel_hand_example():
    stats = compute_mean_std([[1.0], [2.0], [3.0]], channels=1)
    assert stats.mean() == 2.0
    assert stats.std_sample() == 1.0  # oracle: sqrt(((1)+(0)+(1))/2) = 1


def test_constant_stream_zero_std():
    stats = compute_mean_std([[4.2]] * 50, channels=1)
    assert stats.std_sample() == 0.0
    assert stats.std_population() == 0.0


def test_merge_equals_concatenation():
    a = compute_mean_std([[1.0], [2.0]], channels=1)
    b = compute_mean_std([[3.0]], channels=1)
    merged = a.merge(b)
    whole = compute_mean_std([[1.0], [2.0], [3.0]], channels=1)
    assert merged.count() == 3
    assert abs(merged.mean() - whole.mean()) <= 1e-12
    assert abs(merged.m2() - whole.m2()) <= 1e-12


def test_merge_associativity():
    stream = make_stream(8)
    chunks = [[[stream.next_unit_float() * 100] for _ in range(30)] for _ in range(3)]
    a, b, c = (compute_mean_std(chunk, 1) for chunk in chunks)
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert left.count() == right.count()
    assert abs(left.mean() - right.mean()) <= 1e-12
    assert abs(left.m2() - right.m2()) <= 1e-12


def test_welford_matches_two_pass_oracle():
    stream = make_stream(314)
    values = [stream.next_unit_float() * 2000 - 1000 for _ in range(100_000)]
    stats = ChannelStats(1)
    stats.update_chunk(values)
    mean, std_sample, _ = two_pass_stats(values)
    assert abs(stats.mean() - mean) <= 1e-10 * max(1.0, abs(mean))
    assert abs(stats.std_sample() - std_sample) <= 1e-10 * std_sample


def test_chunk_equals_per_sample_updates():
    stream = make_stream(9)
    rows = [[stream.next_unit_float(), stream.next_unit_float()] for _ in range(200)]
    a = ChannelStats(2)
    for row in rows:
        a.update(row)
    b = ChannelStats(2)
    b.update_chunk([v for row in rows for v in row])
    for c in range(2):
        assert a.count(c) == b.count(c)
        assert a.mean(c) == b.mean(c)
        assert a.m2(c) == b.m2(c)


def test_stats_stream_consumed_lazily():
    # constant-memory contract: samples seen once, state holds 3 numbers/channel
    consumed = []

    def gen():
        for i in range(1000):
            consumed.append(i)
            yield [float(i)]

    stats = compute_mean_std(gen(), channels=1)
    assert len(consumed) == 1000
    assert stats.count() == 1000
    assert set(vars(stats)) == {"channels", "_counts", "_means", "_m2s"}


def test_channel_and_finite_validation():
    stats = ChannelStats(2)
    with pytest.raises(ChannelMismatchError):
        stats.update([1.0])
    with pytest.raises(NonFiniteSampleError):
        stats.update([1.0, float("inf")])
    with pytest.raises(NonFiniteSampleError):
        stats.update_chunk([1.0, float("nan")])
    with pytest.raises(ChannelMismatchError):
        stats.update_chunk([1.0, 2.0, 3.0])
    with pytest.raises(ChannelMismatchError):
        stats.merge(ChannelStats(3))


# --- PPM/PGM adapter ----------------------------------------------------------------

def _write_pgm(path, rows):
    height, width = len(rows), len(rows[0])
    with open(path, "wb") as fh:
        fh.write(f"P5\n# comment\n{width} {height}\n255\n".encode())
        for row in rows:
            fh.write(bytes(row))


def _write_ppm(path, rows):
    height, width = len(rows), len(rows[0])
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode())
        for row in rows:
            fh.write(b"".join(struct.pack("BBB", *px) for px in row))


def test_pgm_stats_match_hand_computation(tmp_path):
    _write_pgm(tmp_path / "a.pgm", [[0, 255], [128, 64]])
    stats = image_channel_stats([tmp_path / "a.pgm"])
    values = [0 / 255, 255 / 255, 128 / 255, 64 / 255]
    mean, std_sample, std_population = two_pass_stats(values)
    assert abs(stats.mean() - mean) <= 1e-12
    assert abs(stats.std_sample(0) - std_sample) <= 1e-12
    assert abs(stats.std_population(0) - std_population) <= 1e-12


def test_ppm_three_channels(tmp_path):
    _write_ppm(tmp_path / "b.ppm", [[(255, 0, 0), (255, 0, 0)]])
    stats = image_channel_stats([tmp_path / "b.ppm"])
    assert stats.channels == 3
    assert stats.mean(0) == 1.0 and stats.mean(1) == 0.0 and stats.mean(2) == 0.0


def test_image_rows_stream_row_by_row(tmp_path):
    _write_pgm(tmp_path / "c.pgm", [[1, 2], [3, 4], [5, 6]])
    rows = list(iter_image_rows(tmp_path / "c.pgm"))
    assert len(rows) == 3
    assert list(rows[0][1]) == [1 / 255, 2 / 255]


def test_mixed_channel_images_rejected(tmp_path):
    _write_pgm(tmp_path / "a.pgm", [[1]])
    _write_ppm(tmp_path / "b.ppm", [[(1, 2, 3)]])
    with pytest.raises(ChannelMismatchError):
        image_channel_stats([tmp_path / "a.pgm", tmp_path / "b.ppm"])


def test_truncated_image_rejected(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(InvalidSpecError, match="truncated"):
        list(iter_image_rows(path))


def test_stats_json_shape():
    stats = compute_mean_std([[1.0, 10.0], [3.0, 10.0]], channels=2)
    doc = json.loads(json.dumps(stats.to_json_obj()))
    assert doc["0"]["n"] == 2 and doc["0"]["mean"] == 2.0
    assert doc["1"]["std_sample"] == 0.0


# --- splits ----------------------------------------------------------------------------

def test_stratified_hand_example():
    items = [(f"a{i}", "A") for i in range(6)] + [(f"b{i}", "B") for i in range(4)]
    train, val = partition_train_val(items, ratio=0.5, seed=1, stratified=True)
    train_a = [i for i in train if i.startswith("a")]
    train_b = [i for i in train if i.startswith("b")]
    assert len(train_a) == 3 and len(train_b) == 2  # round(0.5*6), round(0.5*4)
    assert sorted(train + val) == sorted(i for i, _ in items)
    assert not set(train) & set(val)


def test_unstratified_rounding():
    items = [(str(i), "x") for i in range(10)]
    train, val = partition_train_val(items, ratio=0.8, seed=3, stratified=False)
    assert len(train) == 8 and len(val) == 2


def test_split_deterministic():
    items = [(str(i), "AB"[i % 2]) for i in range(31)]
    first = partition_train_val(items, 0.7, seed=9)
    assert partition_train_val(items, 0.7, seed=9) == first
    assert partition_train_val(items, 0.7, seed=10) != first


def test_split_small_class_keeps_one_in_train():
    items = [("x1", "X"), ("x2", "X"), ("y1", "Y"), ("y2", "Y"), ("y3", "Y"),
             ("y4", "Y"), ("y5", "Y"), ("y6", "Y"), ("y7", "Y"), ("y8", "Y")]
    train, _ = partition_train_val(items, ratio=0.2, seed=2, stratified=True)
    assert sum(1 for i in train if i.startswith("x")) >= 1


def test_split_degenerate_ratio():
    items = [(str(i), "x") for i in range(10)]
    with pytest.raises(DegenerateRatioError):
        partition_train_val(items, ratio=0.01, seed=1, stratified=False)
    with pytest.raises(DegenerateRatioError):
        partition_train_val(items, ratio=0.999, seed=1, stratified=False)


def test_split_empty_input():
    with pytest.raises(EmptyInputError):
        partition_train_val([], 0.5, seed=0)


def test_split_ratio_bounds():
    with pytest.raises(ValueError):
        partition_train_val([("a", "x")], 0.0, seed=0)
    with pytest.raises(ValueError):
        partition_train_val([("a", "x")], 1.0, seed=0)


def test_split_randomized_properties():
    stream = make_stream(555)
    for _ in range(200):
        n = 2 + stream.next_below(40)
        n_labels = 1 + stream.next_below(4)
        items = [(f"id{i}", f"L{stream.next_below(n_labels)}") for i in range(n)]
        ratio = 0.2 + 0.6 * stream.next_unit_float()
        seed = stream.next_u64()
        try:
            train, val = partition_train_val(items, ratio, seed, stratified=True)
        except DegenerateRatioError:
            continue
        assert sorted(train + val) == sorted(i for i, _ in items)
        assert not set(train) & set(val)
        labels = {i: l for i, l in items}
        by_class = {}
        for item_id, label in items:
            by_class.setdefault(label, []).append(item_id)
        for label, members in by_class.items():
            k = sum(1 for t in train if labels[t] == label)
            assert abs(k - ratio * len(members)) < 1.0


# --- toy 2D ------------------------------------------------------------------------------

def test_xor_labels_are_their_own_oracle():
    points = generate_2d(Toy2DSpec(family="xor", n_points=500, seed=4))
    assert len(points) == 500
    for x, y, label in points:
        assert label == (1 if (x > 0.5) != (y > 0.5) else 0)
    assert {label for _, _, label in points} == {0, 1}


def test_xor_quadrant_rule():
    points = generate_2d(Toy2DSpec(family="xor", n_points=400, seed=12))
    hi_lo = [p for p in points if p[0] > 0.5 and p[1] < 0.5]
    hi_hi = [p for p in points if p[0] > 0.5 and p[1] > 0.5]
    assert hi_lo and all(label == 1 for _, _, label in hi_lo)
    assert hi_hi and all(label == 0 for _, _, label in hi_hi)


def test_blobs_tight_sigma_within_three_sigma():
    spec = Toy2DSpec(family="gaussian_blobs", n_points=100, seed=5,
                     centers=((0.0, 0.0), (10.0, 10.0)), sigma=0.01)
    for x, y, label in generate_2d(spec):
        cx, cy = spec.centers[label]
        assert abs(x - cx) <= 3 * spec.sigma
        assert abs(y - cy) <= 3 * spec.sigma
        # far-separated centers: every point closer to its own center
        other = spec.centers[1 - label]
        assert math.hypot(x - cx, y - cy) < math.hypot(x - other[0], y - other[1])


def test_generation_deterministic():
    spec = Toy2DSpec(family="spiral", n_points=64, seed=77, turns=2.0, noise_sigma=0.02)
    assert generate_2d(spec) == generate_2d(spec)


def test_donut_radii():
    spec = Toy2DSpec(family="donut", n_points=300, seed=6, r_inner=0.5, r_outer=1.0)
    for x, y, label in generate_2d(spec):
        r = math.hypot(x, y)
        if label == 0:
            assert r <= spec.r_inner + 1e-12
        else:
            assert spec.r_inner - 1e-12 <= r <= spec.r_outer + 1e-12


def test_invalid_specs():
    bad = [
        Toy2DSpec(family="moons", n_points=10, seed=0),
        Toy2DSpec(family="xor", n_points=0, seed=0),
        Toy2DSpec(family="gaussian_blobs", n_points=10, seed=0, centers=(), sigma=0.1),
        Toy2DSpec(family="gaussian_blobs", n_points=10, seed=0,
                  centers=((0.0, 0.0),), sigma=0.0),
        Toy2DSpec(family="spiral", n_points=10, seed=0, turns=0.0),
        Toy2DSpec(family="donut", n_points=10, seed=0, r_inner=1.0, r_outer=0.5),
    ]
    for spec in bad:
        with pytest.raises(InvalidSpecError):
            generate_2d(spec)


def test_csv_round_trip(tmp_path):
    points = generate_2d(Toy2DSpec(family="xor", n_points=25, seed=3))
    path = tmp_path / "toy.csv"
    path.write_text(points_to_csv(points), encoding="utf-8")
    loaded = load_2d_csv(path)
    assert loaded == points
    assert path.read_text(encoding="utf-8").splitlines()[0] == "x,y,label"
