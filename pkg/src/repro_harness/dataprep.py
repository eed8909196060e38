"""Dataset utilities: folder-format checks, constant-memory channel statistics,
deterministic train/val splitting, and 2D toy dataset generation.

Statistics stream per-channel value vectors so datasets larger than memory
work; the PPM/PGM adapter feeds pixels row by row. Splitting and generation
draw only from the deterministic seed streams, so results are bit-repeatable.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from pathlib import Path

from repro_harness.errors import (
    ChannelMismatchError,
    DegenerateRatioError,
    EmptyInputError,
    InvalidSpecError,
    NonFiniteSampleError,
)
from repro_harness.kernels import welford_chunk
from repro_harness.seeds import make_stream

RECOGNIZED_SPLITS = ("train", "val", "test")


# --- folder format ------------------------------------------------------------

@dataclass
class DatasetFolderReport:
    splits_found: list
    classes_per_split: dict
    file_counts: dict  # (split, class) -> count
    violations: list   # (path, rule)

    @property
    def valid(self):
        return not self.violations


def verify_folder_format(root) -> DatasetFolderReport:
    """Check the <root>/<split>/<class>/<files> layout.

    `train` is required; `val` and `test` are optional but must mirror the
    train class set. Stray files, empty class dirs, and nesting below the
    class level are violations.
    """
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"dataset root is not a directory: {root}")
    report = DatasetFolderReport([], {}, {}, [])
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            report.violations.append((str(entry), "file at wrong depth (expected split directories)"))
            continue
        if entry.name not in RECOGNIZED_SPLITS:
            report.violations.append((str(entry), "unrecognized split directory"))
            continue
        split = entry.name
        report.splits_found.append(split)
        classes = []
        for cls_entry in sorted(entry.iterdir()):
            if not cls_entry.is_dir():
                report.violations.append((str(cls_entry), "file at wrong depth (expected class directories)"))
                continue
            classes.append(cls_entry.name)
            count = 0
            for f in sorted(cls_entry.iterdir()):
                if f.is_dir():
                    report.violations.append((str(f), "nested directory below class level"))
                else:
                    count += 1
            if count == 0:
                report.violations.append((str(cls_entry), "empty class directory"))
            report.file_counts[(split, cls_entry.name)] = count
        report.classes_per_split[split] = classes
    if "train" not in report.splits_found:
        report.violations.append((str(root), "missing required split 'train'"))
    else:
        train_classes = set(report.classes_per_split["train"])
        for split in report.splits_found:
            if split != "train" and set(report.classes_per_split[split]) != train_classes:
                report.violations.append(
                    (str(root / split), "class set differs from train split"))
    return report


# --- streaming channel statistics ----------------------------------------------

class ChannelStats:
    """Per-channel streaming mean/std (Welford), mergeable across shards.

    State is three fixed-size buffers (count, mean, M2 per channel); memory is
    constant in the stream length. Chunk updates go through the compiled
    kernel when available.
    """

    def __init__(self, channels):
        if channels < 1:
            raise ChannelMismatchError(f"channels must be positive, got {channels}")
        self.channels = channels
        self._counts = array("q", [0] * channels)
        self._means = array("d", [0.0] * channels)
        self._m2s = array("d", [0.0] * channels)

    def update(self, sample):
        """Fold one sample (a length-`channels` vector) into the state."""
        if len(sample) != self.channels:
            raise ChannelMismatchError(
                f"sample has {len(sample)} values, expected {self.channels}")
        for v in sample:
            if not math.isfinite(v):
                raise NonFiniteSampleError(f"non-finite sample value: {v!r}")
        for c, v in enumerate(sample):
            cnt = self._counts[c] + 1
            self._counts[c] = cnt
            delta = v - self._means[c]
            mean = self._means[c] + delta / cnt
            self._means[c] = mean
            self._m2s[c] += delta * (v - mean)

    def update_chunk(self, flat_values):
        """Fold many channel-interleaved samples at once (hot path)."""
        if not isinstance(flat_values, array) or flat_values.typecode != "d":
            flat_values = array("d", flat_values)
        try:
            welford_chunk(self._counts, self._means, self._m2s,
                          flat_values, self.channels)
        except ValueError as exc:
            msg = str(exc)
            if "non-finite" in msg:
                raise NonFiniteSampleError(msg) from None
            raise ChannelMismatchError(msg) from None

    def merge(self, other: "ChannelStats") -> "ChannelStats":
        """Parallel-variance combination; equals accumulating the concatenation."""
        if other.channels != self.channels:
            raise ChannelMismatchError(
                f"cannot merge {other.channels}-channel stats into {self.channels}-channel stats")
        out = ChannelStats(self.channels)
        for c in range(self.channels):
            na, nb = self._counts[c], other._counts[c]
            n = na + nb
            if n == 0:
                continue
            delta = other._means[c] - self._means[c]
            out._counts[c] = n
            out._means[c] = self._means[c] + delta * nb / n
            out._m2s[c] = self._m2s[c] + other._m2s[c] + delta * delta * na * nb / n
        return out

    def count(self, channel=0):
        return self._counts[channel]

    def mean(self, channel=0):
        return self._means[channel]

    def m2(self, channel=0):
        return self._m2s[channel]

    def std_sample(self, channel=0):
        n = self._counts[channel]
        return math.sqrt(self._m2s[channel] / (n - 1)) if n >= 2 else 0.0

    def std_population(self, channel=0):
        n = self._counts[channel]
        return math.sqrt(self._m2s[channel] / n) if n >= 1 else 0.0

    def to_json_obj(self):
        return {
            str(c): {
                "n": self._counts[c],
                "mean": self._means[c],
                "std_sample": self.std_sample(c),
                "std_population": self.std_population(c),
            }
            for c in range(self.channels)
        }


def compute_mean_std(samples, channels) -> ChannelStats:
    """Single-pass statistics over an iterable of per-channel value vectors."""
    stats = ChannelStats(channels)
    for sample in samples:
        stats.update(sample)
    return stats


# --- PPM/PGM pixel stream adapter ----------------------------------------------

def _read_pnm_header(fh):
    # header tokens may be separated by whitespace and '#' comments
    tokens = []
    while len(tokens) < 4:
        line = fh.readline()
        if not line:
            raise InvalidSpecError("truncated PNM header")
        hash_pos = line.find(b"#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        tokens.extend(line.split())
    magic, width, height, maxval = tokens[:4]
    return magic.decode("ascii"), int(width), int(height), int(maxval)


def iter_image_rows(path):
    """Yield (channels, row_values) per image row, pixel values scaled to [0,1].

    Supports binary PGM (P5, 1 channel) and PPM (P6, 3 channels) with
    maxval <= 255. Rows stream one at a time so memory stays constant.
    """
    with open(path, "rb") as fh:
        magic, width, height, maxval = _read_pnm_header(fh)
        if magic == "P5":
            channels = 1
        elif magic == "P6":
            channels = 3
        else:
            raise InvalidSpecError(f"unsupported image format {magic!r} in {path}")
        if not 0 < maxval <= 255:
            raise InvalidSpecError(f"unsupported maxval {maxval} in {path}")
        row_bytes = width * channels
        scale = 1.0 / maxval
        for _ in range(height):
            raw = fh.read(row_bytes)
            if len(raw) != row_bytes:
                raise InvalidSpecError(f"truncated pixel data in {path}")
            yield channels, array("d", [b * scale for b in raw])


def image_channel_stats(paths) -> ChannelStats:
    """Stream every image's pixels through one accumulator (row-wise)."""
    stats = None
    for path in paths:
        for channels, row in iter_image_rows(path):
            if stats is None:
                stats = ChannelStats(channels)
            elif channels != stats.channels:
                raise ChannelMismatchError(
                    f"{path} has {channels} channels, expected {stats.channels}")
            stats.update_chunk(row)
    if stats is None:
        raise EmptyInputError("no images to accumulate")
    return stats


# --- train/val split ------------------------------------------------------------

def _round_half_up(x):
    return math.floor(x + 0.5)


def partition_train_val(items, ratio, seed, stratified=True):
    """Deterministic disjoint, exhaustive split of (id, label) pairs.

    Stratified mode shuffles within each class and gives train
    round-half-up(ratio * n_c) items (at least 1 when the class has >= 2);
    unstratified mode shuffles globally and splits at round(ratio * n).
    """
    items = list(items)
    if not items:
        raise EmptyInputError("cannot split an empty item list")
    for _, label in items:
        if not label:
            raise ValueError("every item label must be non-empty")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(items)
    stream = make_stream(seed)
    train_ids, val_ids = [], []
    if stratified:
        by_label = {}
        for idx, (_, label) in enumerate(items):
            by_label.setdefault(label, []).append(idx)
        for label, indices in by_label.items():
            stream.shuffle(indices)
            n_c = len(indices)
            k = _round_half_up(ratio * n_c)
            if n_c >= 2 and k == 0:
                k = 1
            train_ids.extend(items[i][0] for i in indices[:k])
            val_ids.extend(items[i][0] for i in indices[k:])
    else:
        indices = list(range(n))
        stream.shuffle(indices)
        k = _round_half_up(ratio * n)
        train_ids.extend(items[i][0] for i in indices[:k])
        val_ids.extend(items[i][0] for i in indices[k:])
    if n >= 2 and (not train_ids or not val_ids):
        raise DegenerateRatioError(
            f"ratio {ratio} leaves one side empty for {n} items")
    return train_ids, val_ids


# --- 2D toy datasets --------------------------------------------------------------

XOR = "xor"
GAUSSIAN_BLOBS = "gaussian_blobs"
SPIRAL = "spiral"
DONUT = "donut"
_FAMILIES = (XOR, GAUSSIAN_BLOBS, SPIRAL, DONUT)


@dataclass(frozen=True)
class Toy2DSpec:
    family: str
    n_points: int
    seed: int
    centers: tuple = ()       # gaussian_blobs: ((x, y), ...); label = center index
    sigma: float = 0.0        # gaussian_blobs point spread
    turns: float = 1.0        # spiral revolutions
    noise_sigma: float = 0.0  # spiral jitter
    r_inner: float = 0.5      # donut: hole/disk radius (label 0 inside)
    r_outer: float = 1.0      # donut: ring outer radius (label 1 = ring)

    def validate(self):
        if self.family not in _FAMILIES:
            raise InvalidSpecError(f"unknown 2D family {self.family!r}")
        if not isinstance(self.n_points, int) or self.n_points < 1:
            raise InvalidSpecError(f"n_points must be a positive integer, got {self.n_points}")
        if self.family == GAUSSIAN_BLOBS:
            if not self.centers or any(len(c) != 2 for c in self.centers):
                raise InvalidSpecError("gaussian_blobs requires non-empty (x, y) centers")
            if not self.sigma > 0:
                raise InvalidSpecError("gaussian_blobs requires sigma > 0")
        elif self.family == SPIRAL:
            if not self.turns > 0:
                raise InvalidSpecError("spiral requires turns > 0")
            if self.noise_sigma < 0:
                raise InvalidSpecError("spiral noise_sigma must be >= 0")
        elif self.family == DONUT:
            if not 0 < self.r_inner < self.r_outer:
                raise InvalidSpecError("donut requires 0 < r_inner < r_outer")


def _gauss_pair(stream):
    # Box-Muller; 1 - u keeps the log argument in (0, 1]
    u1 = 1.0 - stream.next_unit_float()
    u2 = stream.next_unit_float()
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)


def generate_2d(spec: Toy2DSpec):
    """Deterministic toy dataset: list of (x, y, label) in generation order."""
    spec.validate()
    stream = make_stream(spec.seed)
    points = []
    if spec.family == XOR:
        for _ in range(spec.n_points):
            x = stream.next_unit_float()
            y = stream.next_unit_float()
            label = 1 if (x > 0.5) != (y > 0.5) else 0
            points.append((x, y, label))
    elif spec.family == GAUSSIAN_BLOBS:
        for _ in range(spec.n_points):
            c = stream.next_below(len(spec.centers))
            gx, gy = _gauss_pair(stream)
            cx, cy = spec.centers[c]
            points.append((cx + spec.sigma * gx, cy + spec.sigma * gy, c))
    elif spec.family == SPIRAL:
        for _ in range(spec.n_points):
            arm = stream.next_below(2)
            t = stream.next_unit_float()
            theta = 2.0 * math.pi * spec.turns * t + arm * math.pi
            nx, ny = _gauss_pair(stream)
            points.append((t * math.cos(theta) + spec.noise_sigma * nx,
                           t * math.sin(theta) + spec.noise_sigma * ny,
                           arm))
    else:  # DONUT
        for _ in range(spec.n_points):
            cls = stream.next_below(2)
            u = stream.next_unit_float()
            theta = 2.0 * math.pi * stream.next_unit_float()
            if cls == 0:
                r = spec.r_inner * math.sqrt(u)
            else:
                r = math.sqrt(spec.r_inner ** 2 + u * (spec.r_outer ** 2 - spec.r_inner ** 2))
            points.append((r * math.cos(theta), r * math.sin(theta), cls))
    return points


def points_to_csv(points) -> str:
    lines = ["x,y,label"]
    for x, y, label in points:
        lines.append(f"{x!r},{y!r},{label}")
    return "\n".join(lines) + "\n"


def load_2d_csv(path):
    """Read an x,y,label CSV produced by points_to_csv."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "x,y,label":
        raise InvalidSpecError(f"{path} is not an x,y,label CSV")
    points = []
    for ln in lines[1:]:
        x, y, label = ln.split(",")
        points.append((float(x), float(y), int(label)))
    return points
