"""Suggest/observe hyper-parameter optimization.

Random and grid baselines plus a Gaussian-process surrogate with expected
improvement. Parameters are encoded into the unit cube (log scaling and
one-hot categoricals); GP hyperparameters come from an exhaustive grid search
over the log marginal likelihood, so fits are deterministic and portable.
Acquisition is maximized over stream-sampled candidates: same study state and
stream state always yield the same suggestion.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from repro_harness.errors import (
    DegenerateDataError,
    IndexOutOfRangeError,
    NonFiniteObjectiveError,
    NumericalFailureError,
    OutOfBoundsError,
)

logger = logging.getLogger("repro_harness.hpo")

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"

MAXIMIZE = "maximize"
MINIMIZE = "minimize"

# hyperparameter search grid, frozen: lengthscale factors scale with sqrt(d)
LENGTHSCALE_FACTORS = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
NOISE_VARIANCES = (1e-6, 1e-4, 1e-2)
SIGNAL_VARIANCE = 1.0
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --- parameter space ----------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    values: tuple = ()
    scale: str = "linear"

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.kind in (CONTINUOUS, INTEGER):
            if not self.lo < self.hi:
                raise ValueError(f"{self.name}: lo must be < hi")
            if self.scale not in ("linear", "log"):
                raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
            if self.scale == "log" and not self.lo > 0:
                raise ValueError(f"{self.name}: log scale requires lo > 0")
        elif self.kind == CATEGORICAL:
            if not self.values or len(set(self.values)) != len(self.values):
                raise ValueError(f"{self.name}: categorical values must be non-empty and unique")
        else:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def width(self):
        """Encoded dimensions this spec occupies."""
        return len(self.values) if self.kind == CATEGORICAL else 1


def continuous(name, lo, hi, scale="linear"):
    return ParamSpec(name=name, kind=CONTINUOUS, lo=float(lo), hi=float(hi), scale=scale)


def integer(name, lo, hi, scale="linear"):
    return ParamSpec(name=name, kind=INTEGER, lo=int(lo), hi=int(hi), scale=scale)


def categorical(name, values):
    return ParamSpec(name=name, kind=CATEGORICAL, values=tuple(values))


@dataclass(frozen=True)
class ParamSpace:
    specs: tuple

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        if not self.specs:
            raise ValueError("parameter space must have at least one spec")

    @property
    def dim(self):
        return sum(s.width for s in self.specs)

    def names(self):
        return [s.name for s in self.specs]


def _scaled_unit(spec, value):
    if spec.scale == "log":
        return (math.log(value) - math.log(spec.lo)) / (math.log(spec.hi) - math.log(spec.lo))
    return (value - spec.lo) / (spec.hi - spec.lo)


def _unit_to_value(spec, t):
    if spec.scale == "log":
        v = math.exp(math.log(spec.lo) + t * (math.log(spec.hi) - math.log(spec.lo)))
    else:
        v = spec.lo + t * (spec.hi - spec.lo)
    if spec.kind == INTEGER:
        v = int(math.floor(v + 0.5))
        v = min(max(v, int(spec.lo)), int(spec.hi))
    return v


def encode(space: ParamSpace, assignment) -> np.ndarray:
    """Map an assignment into [0,1]^d (one-hot for categoricals)."""
    _check_assignment(space, assignment)
    out = []
    for spec in space.specs:
        value = assignment[spec.name]
        if spec.kind == CATEGORICAL:
            one_hot = [0.0] * len(spec.values)
            one_hot[spec.values.index(value)] = 1.0
            out.extend(one_hot)
        else:
            out.append(_scaled_unit(spec, value))
    return np.asarray(out, dtype=float)


def decode(space: ParamSpace, vector) -> dict:
    """Inverse of encode up to integer rounding; categoricals pick the argmax."""
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (space.dim,):
        raise ValueError(f"expected vector of dim {space.dim}, got shape {vector.shape}")
    assignment = {}
    pos = 0
    for spec in space.specs:
        if spec.kind == CATEGORICAL:
            block = vector[pos:pos + len(spec.values)]
            assignment[spec.name] = spec.values[int(np.argmax(block))]
            pos += len(spec.values)
        else:
            assignment[spec.name] = _unit_to_value(spec, float(vector[pos]))
            pos += 1
    return assignment


def _check_assignment(space, assignment):
    if set(assignment) != set(space.names()):
        raise OutOfBoundsError(
            ",".join(sorted(set(assignment) ^ set(space.names()))),
            "assignment must cover every parameter exactly")
    for spec in space.specs:
        value = assignment[spec.name]
        if spec.kind == CATEGORICAL:
            if value not in spec.values:
                raise OutOfBoundsError(spec.name, f"{value!r} not in {spec.values}")
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise OutOfBoundsError(spec.name, f"non-numeric value {value!r}")
            if not spec.lo <= value <= spec.hi:
                raise OutOfBoundsError(spec.name, f"{value} outside [{spec.lo}, {spec.hi}]")


# --- baseline suggesters --------------------------------------------------------

def suggest_random(space: ParamSpace, stream) -> dict:
    """One uniform draw per parameter, in scaled space for numerics."""
    assignment = {}
    for spec in space.specs:
        if spec.kind == CATEGORICAL:
            assignment[spec.name] = spec.values[stream.next_below(len(spec.values))]
        else:
            assignment[spec.name] = _unit_to_value(spec, stream.next_unit_float())
    return assignment


def grid_size(space: ParamSpace, resolution: int) -> int:
    total = 1
    for spec in space.specs:
        total *= len(spec.values) if spec.kind == CATEGORICAL else resolution
    return total


def suggest_grid(space: ParamSpace, resolution: int, index: int) -> dict:
    """Row-major grid point (first spec slowest); numeric axes get `resolution`
    evenly spaced points in scaled space, endpoints included."""
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    total = grid_size(space, resolution)
    if not 0 <= index < total:
        raise IndexOutOfRangeError(f"grid index {index} outside [0, {total})")
    assignment = {}
    remaining = index
    stride = total
    for spec in space.specs:
        size = len(spec.values) if spec.kind == CATEGORICAL else resolution
        stride //= size
        axis_index = (remaining // stride) % size
        if spec.kind == CATEGORICAL:
            assignment[spec.name] = spec.values[axis_index]
        else:
            # a single-point axis sits at the scaled midpoint
            t = 0.5 if size == 1 else axis_index / (size - 1)
            assignment[spec.name] = _unit_to_value(spec, t)
    return assignment


# --- study state ----------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    assignment: dict
    objective: float
    trial_index: int


@dataclass
class StudyConfig:
    init_random: int
    candidates: int = 512
    xi: float = 0.01
    noise_floor: float = 0.0

    def __post_init__(self):
        if self.init_random < 1:
            raise ValueError("init_random must be >= 1")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")


@dataclass
class Study:
    space: ParamSpace
    goal: str
    config: StudyConfig
    seed: int
    observations: list = field(default_factory=list)

    def __post_init__(self):
        if self.goal not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f"goal must be maximize or minimize, got {self.goal!r}")

    def best_observed(self):
        """Best trial under the goal; earliest trial wins ties. None when empty."""
        if not self.observations:
            return None
        key = (lambda o: o.objective) if self.goal == MAXIMIZE else (lambda o: -o.objective)
        best = self.observations[0]
        for obs in self.observations[1:]:
            if key(obs) > key(best):
                best = obs
        return best


def make_study(space, goal, seed, init_random=None, candidates=512, xi=0.01,
               noise_floor=0.0) -> Study:
    if init_random is None:
        init_random = max(5, 2 * space.dim)
    return Study(space=space, goal=goal, seed=seed,
                 config=StudyConfig(init_random=init_random, candidates=candidates,
                                    xi=xi, noise_floor=noise_floor))


def observe(study: Study, assignment, objective) -> Study:
    """Append one completed trial (validates bounds and finiteness)."""
    _check_assignment(study.space, assignment)
    objective = float(objective)
    if not math.isfinite(objective):
        raise NonFiniteObjectiveError(f"objective must be finite, got {objective}")
    study.observations.append(Observation(
        assignment=dict(assignment), objective=objective,
        trial_index=len(study.observations)))
    return study


# --- Gaussian process surrogate ---------------------------------------------------

@dataclass
class GPModel:
    X: np.ndarray            # n x d, unit cube
    y_mean: float            # raw-objective standardization
    y_std: float
    alpha: np.ndarray | None  # (K + noise I)^-1 y_standardized
    L: np.ndarray | None      # Cholesky factor
    lengthscale: float
    signal_variance: float
    noise_variance: float
    log_marginal_likelihood: float
    degenerate: bool = False  # constant targets: predicts the mean with zero std


def _kernel_matrix(X, Z, lengthscale, signal_variance):
    d2 = ((X[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    return signal_variance * np.exp(-d2 / (2.0 * lengthscale ** 2))


def _cholesky_with_jitter(A):
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(A + jitter * np.eye(A.shape[0])) if jitter else np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            continue
    return None


def fit_gp(X, y, config: StudyConfig, lengthscale=None, noise_variance=None) -> GPModel:
    """Fit by exhaustive likelihood grid search (lengthscale x noise variance).

    Targets are standardized; constant targets yield a degenerate
    constant-mean model. Pass lengthscale/noise_variance to pin either axis of
    the grid (used by diagnostics and tests).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise DegenerateDataError(f"need at least 2 observations to fit, got {n}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteObjectiveError("objectives must be finite")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        return GPModel(X=X, y_mean=y_mean, y_std=0.0, alpha=None, L=None,
                       lengthscale=1.0, signal_variance=SIGNAL_VARIANCE,
                       noise_variance=max(config.noise_floor, NOISE_VARIANCES[0]),
                       log_marginal_likelihood=float("nan"), degenerate=True)
    ys = (y - y_mean) / y_std

    scale = math.sqrt(d)
    lengthscales = ([lengthscale] if lengthscale is not None
                    else [f * scale for f in LENGTHSCALE_FACTORS])
    noises = ([noise_variance] if noise_variance is not None
              else [max(v, config.noise_floor) for v in NOISE_VARIANCES])

    best = None
    for ls in lengthscales:
        K = _kernel_matrix(X, X, ls, SIGNAL_VARIANCE)
        for nv in noises:
            L = _cholesky_with_jitter(K + nv * np.eye(n))
            if L is None:
                continue
            alpha = np.linalg.solve(L.T, np.linalg.solve(L, ys))
            lml = (-0.5 * float(ys @ alpha)
                   - float(np.log(np.diag(L)).sum())
                   - 0.5 * n * math.log(2.0 * math.pi))
            if best is None or lml > best[0]:
                best = (lml, ls, nv, L, alpha)
    if best is None:
        raise NumericalFailureError("Cholesky failed for every hyperparameter combination")
    lml, ls, nv, L, alpha = best
    return GPModel(X=X, y_mean=y_mean, y_std=y_std, alpha=alpha, L=L,
                   lengthscale=ls, signal_variance=SIGNAL_VARIANCE,
                   noise_variance=nv, log_marginal_likelihood=lml)


def posterior(gp: GPModel, x) -> tuple:
    """Posterior (mu, sigma) at one point, de-standardized to raw units."""
    mu, sigma = posterior_batch(gp, np.asarray(x, dtype=float)[None, :])
    return float(mu[0]), float(sigma[0])


def posterior_batch(gp: GPModel, Xq) -> tuple:
    Xq = np.asarray(Xq, dtype=float)
    if gp.degenerate:
        return (np.full(len(Xq), gp.y_mean), np.zeros(len(Xq)))
    Ks = _kernel_matrix(gp.X, Xq, gp.lengthscale, gp.signal_variance)  # n x q
    mu_std = Ks.T @ gp.alpha
    V = np.linalg.solve(gp.L, Ks)  # n x q
    var_std = gp.signal_variance - (V * V).sum(axis=0)
    var_std = np.maximum(var_std, 0.0)
    return gp.y_mean + gp.y_std * mu_std, gp.y_std * np.sqrt(var_std)


# --- expected improvement ----------------------------------------------------------

def _phi(z):
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _Phi(z):
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def expected_improvement(mu, sigma, best, xi, goal) -> float:
    """EI of a candidate against the incumbent best raw objective.

    sigma == 0 contributes no expected improvement by convention.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    imp = (mu - best - xi) if goal == MAXIMIZE else (best - mu - xi)
    if sigma == 0.0:
        return 0.0
    z = imp / sigma
    return max(imp * _Phi(z) + sigma * _phi(z), 0.0)


# --- adaptive suggestion -------------------------------------------------------------

def suggest_bayes(study: Study, stream) -> dict:
    """Random during warmup, then EI-argmax over stream-sampled candidates.

    Deterministic given (study state, stream state). GP fit failures fall
    back to a random suggestion with a logged warning.
    """
    space = study.space
    if len(study.observations) < study.config.init_random:
        return suggest_random(space, stream)
    X = np.array([encode(space, o.assignment) for o in study.observations])
    y = np.array([o.objective for o in study.observations])
    try:
        gp = fit_gp(X, y, study.config)
    except (DegenerateDataError, NumericalFailureError) as exc:
        logger.warning("GP fit failed (%s); falling back to a random suggestion", exc)
        return suggest_random(space, stream)
    best = float(y.max() if study.goal == MAXIMIZE else y.min())
    d = space.dim
    cands = np.array([[stream.next_unit_float() for _ in range(d)]
                      for _ in range(study.config.candidates)])
    mu, sigma = posterior_batch(gp, cands)
    ei = np.array([expected_improvement(float(mu[i]), float(sigma[i]), best,
                                        study.config.xi, study.goal)
                   for i in range(len(cands))])
    return decode(space, cands[int(np.argmax(ei))])


# --- persistence ----------------------------------------------------------------------

STUDY_FILENAME = "study.json"


def _spec_to_obj(spec: ParamSpec):
    if spec.kind == CATEGORICAL:
        return {"name": spec.name, "kind": spec.kind, "values": list(spec.values)}
    return {"name": spec.name, "kind": spec.kind, "lo": spec.lo, "hi": spec.hi,
            "scale": spec.scale}


def _spec_from_obj(obj):
    if obj["kind"] == CATEGORICAL:
        return categorical(obj["name"], obj["values"])
    if obj["kind"] == INTEGER:
        return integer(obj["name"], obj["lo"], obj["hi"], obj["scale"])
    return continuous(obj["name"], obj["lo"], obj["hi"], obj["scale"])


def save_study(study: Study, path):
    doc = {
        "space": [_spec_to_obj(s) for s in study.space.specs],
        "goal": study.goal,
        "config": {
            "init_random": study.config.init_random,
            "candidates": study.config.candidates,
            "xi": study.config.xi,
            "noise_floor": study.config.noise_floor,
        },
        "seed": study.seed,
        "observations": [
            {"trial_index": o.trial_index, "assignment": o.assignment,
             "objective": o.objective}
            for o in study.observations
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n",
                          encoding="utf-8")


def load_study(path) -> Study:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    space = ParamSpace(tuple(_spec_from_obj(o) for o in doc["space"]))
    cfg = doc["config"]
    study = Study(space=space, goal=doc["goal"], seed=doc["seed"],
                  config=StudyConfig(**cfg))
    for o in doc["observations"]:
        study.observations.append(Observation(
            assignment=o["assignment"], objective=o["objective"],
            trial_index=o["trial_index"]))
    return study
