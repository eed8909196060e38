"""Bundled deterministic experiment: full-batch gradient-descent logistic
regression on 2D toy data.

Serves as the end-to-end reproducibility fixture: convex, hand-checkable
gradients, and it emits every event kind the report renders (scalar series,
weight histograms, a confusion matrix, and a decision-confidence grid).
Summation follows dataset order, so results are bit-stable on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from repro_harness.errors import BadLabelError
from repro_harness.events import EventLog
from repro_harness.seeds import make_stream

HISTOGRAM_EVERY = 10
HISTOGRAM_BINS = 8


@dataclass
class LogisticModel:
    w: tuple  # (w0, w1)
    b: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int
    dataset: str            # x,y,label CSV path
    grid_resolution: int = 24

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.grid_resolution < 1:
            raise ValueError(f"grid_resolution must be >= 1, got {self.grid_resolution}")


def sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def loss_and_grad(model: LogisticModel, dataset):
    """Mean cross-entropy and its gradient over (x, y, label) rows.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the log.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    w0, w1 = model.w
    loss = 0.0
    gw0 = gw1 = gb = 0.0
    for x, y, label in dataset:
        if label not in (0, 1):
            raise BadLabelError(f"labels must be 0 or 1, got {label!r}")
        p = sigmoid(w0 * x + w1 * y + model.b)
        p = min(max(p, 1e-12), 1.0 - 1e-12)
        loss += -(label * math.log(p) + (1 - label) * math.log(1.0 - p))
        err = p - label
        gw0 += err * x
        gw1 += err * y
        gb += err
    n = len(dataset)
    return loss / n, (gw0 / n, gw1 / n), gb / n


def accuracy(model: LogisticModel, dataset):
    w0, w1 = model.w
    correct = 0
    for x, y, label in dataset:
        p = sigmoid(w0 * x + w1 * y + model.b)
        correct += (1 if p > 0.5 else 0) == label
    return correct / len(dataset)


def _weight_histogram(values):
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = [lo + i * (hi - lo) / HISTOGRAM_BINS for i in range(HISTOGRAM_BINS + 1)]
    counts = [0] * HISTOGRAM_BINS
    for v in values:
        idx = min(int((v - lo) / (hi - lo) * HISTOGRAM_BINS), HISTOGRAM_BINS - 1)
        counts[idx] += 1
    return edges, counts


def _confusion_counts(model, dataset):
    counts = [[0, 0], [0, 0]]
    w0, w1 = model.w
    for x, y, label in dataset:
        pred = 1 if sigmoid(w0 * x + w1 * y + model.b) > 0.5 else 0
        counts[label][pred] += 1
    return counts


def _confidence_grid(model, dataset, resolution):
    xs = [p[0] for p in dataset]
    ys = [p[1] for p in dataset]
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    w0, w1 = model.w
    values = []
    for r in range(resolution):
        ty = 0.5 if resolution == 1 else r / (resolution - 1)
        y = y_min + ty * (y_max - y_min)
        row = []
        for c in range(resolution):
            tx = 0.5 if resolution == 1 else c / (resolution - 1)
            x = x_min + tx * (x_max - x_min)
            row.append(sigmoid(w0 * x + w1 * y + model.b))
        values.append(row)
    return x_min, x_max, y_min, y_max, values


def train(config: TrainConfig, seed: int, log: EventLog, dataset=None) -> LogisticModel:
    """Train and emit per-epoch loss/accuracy, periodic weight histograms, and
    final confusion + decision-grid events.

    Weights initialize uniformly in [-0.5, 0.5) from the seed stream (draw
    order w0, w1, b). Each epoch evaluates, emits, then applies the full-batch
    step, so the step-e metrics describe the model entering epoch e.
    """
    if dataset is None:
        from repro_harness.dataprep import load_2d_csv
        dataset = load_2d_csv(config.dataset)
    stream = make_stream(seed)
    model = LogisticModel(
        w=(stream.next_unit_float() - 0.5, stream.next_unit_float() - 0.5),
        b=stream.next_unit_float() - 0.5,
    )
    for epoch in range(1, config.epochs + 1):
        loss, (gw0, gw1), gb = loss_and_grad(model, dataset)
        log.scalar("loss", loss, step=epoch)
        log.scalar("accuracy", accuracy(model, dataset), step=epoch)
        if epoch % HISTOGRAM_EVERY == 0:
            edges, counts = _weight_histogram([model.w[0], model.w[1], model.b])
            log.histogram("weights", edges, counts, step=epoch)
        model = LogisticModel(
            w=(model.w[0] - config.lr * gw0, model.w[1] - config.lr * gw1),
            b=model.b - config.lr * gb,
        )
    log.confusion("confusion", ["0", "1"], _confusion_counts(model, dataset),
                  step=config.epochs)
    x_min, x_max, y_min, y_max, values = _confidence_grid(
        model, dataset, config.grid_resolution)
    log.grid("decision_grid", x_min, x_max, y_min, y_max, values,
             step=config.epochs)
    return model
