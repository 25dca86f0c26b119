"""Comparison strategies: factorized on-axis regression, sequential random
sampling, and one-shot uniform grid sampling."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from itertools import product

import numpy as np

from .bed import DUPLICATE_TOL, ExperimentHistory, HistoryRecord
from .errors import ExtrapolationError
from .gp import GpModel, TrainingSet, augment, condition, predict_mean, predict_var_diag

__all__ = [
    "AxisSamplePlan",
    "on_axis_regress",
    "random_sampling_run",
    "grid_sampling_run",
    "uniform_grid",
]

log = logging.getLogger(__name__)

_RANDOM_STREAM = 774403


@dataclass(frozen=True)
class AxisSamplePlan:
    """Axis-aligned sample positions around a central point.

    ``positions[d]`` holds the sampled coordinates along axis d (every other
    coordinate at the central value); each list contains the central
    coordinate exactly once, so the shared central point is sampled once.
    """

    positions: tuple
    center: np.ndarray
    box: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        box = np.asarray(self.box, dtype=float)
        positions = tuple(np.sort(np.asarray(p, dtype=float).reshape(-1))
                          for p in self.positions)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "box", box)
        if len(positions) != center.size or box.shape != (center.size, 2):
            raise ValueError("positions, center, and box disagree in dimension")
        for d, pos in enumerate(positions):
            if np.count_nonzero(pos == center[d]) != 1:
                raise ValueError(
                    f"axis {d} positions must contain the central value exactly once"
                )
            if pos[0] < box[d, 0] or pos[-1] > box[d, 1]:
                raise ValueError(f"axis {d} positions fall outside the box")

    @classmethod
    def uniform(cls, box, n_per_axis: int, center=None) -> "AxisSamplePlan":
        """Evenly spaced positions per axis (box endpoints included), with the
        position nearest the center snapped onto it exactly."""
        box = np.asarray(box, dtype=float)
        if center is None:
            center = np.ones(box.shape[0])
        center = np.asarray(center, dtype=float).reshape(-1)
        positions = []
        for d in range(box.shape[0]):
            pos = np.linspace(box[d, 0], box[d, 1], n_per_axis)
            j = int(np.argmin(np.abs(pos - center[d])))
            if abs(pos[j] - center[d]) > 1e-9:
                raise ValueError(
                    f"center coordinate {center[d]} is not on the axis-{d} grid"
                )
            pos[j] = center[d]
            positions.append(pos)
        return cls(tuple(positions), center, box)

    @property
    def n_samples(self) -> int:
        return sum(p.size - 1 for p in self.positions) + 1


def on_axis_regress(oracle, plan: AxisSamplePlan, test_points) -> np.ndarray:
    """Factorized prediction: product over axes of 1-D interpolants fit to
    axis-aligned oracle samples.

    ``oracle(x)`` returns (value, optional gradient); values are expected to
    be normalized so the central sample is 1.  Interpolation is piecewise
    linear; test coordinates outside the sampled range raise.
    """
    test = np.atleast_2d(np.asarray(test_points, dtype=float))
    d = plan.center.size
    if test.shape[1] != d:
        raise ValueError(f"test points must have dimension {d}")
    central_value = float(oracle(plan.center)[0])
    tables = []
    for axis, pos in enumerate(plan.positions):
        values = np.empty(pos.size)
        for i, t in enumerate(pos):
            if t == plan.center[axis]:
                values[i] = central_value
            else:
                point = plan.center.copy()
                point[axis] = t
                values[i] = float(oracle(point)[0])
        tables.append(values)
    out = np.ones(test.shape[0])
    for axis, (pos, values) in enumerate(zip(plan.positions, tables)):
        coords = test[:, axis]
        if np.any(coords < pos[0] - 1e-12) or np.any(coords > pos[-1] + 1e-12):
            raise ExtrapolationError(
                f"test coordinate outside the sampled range on axis {axis}"
            )
        out *= np.interp(coords, pos, values)
    return out


def _record_state(
    model: GpModel, test_set: np.ndarray, truth: np.ndarray
) -> tuple[float, float]:
    mse = float(np.mean((predict_mean(model, test_set) - truth) ** 2))
    trace = float(np.sum(predict_var_diag(model, test_set)))
    return mse, trace


def random_sampling_run(
    model: GpModel, oracle, n_iterations: int, box, seed: int, test_set, truth
) -> tuple[GpModel, ExperimentHistory]:
    """Sequentially add uniform in-box samples; history matches the BED schema."""
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    box = np.asarray(box, dtype=float)
    test_set = np.atleast_2d(np.asarray(test_set, dtype=float))
    truth = np.asarray(truth, dtype=float).reshape(-1)
    rng = np.random.default_rng((seed, _RANDOM_STREAM))
    history = ExperimentHistory()
    for it in range(1, n_iterations + 1):
        start = time.perf_counter()
        x = box[:, 0] + rng.random(box.shape[0]) * (box[:, 1] - box[:, 0])
        try:
            y, w = oracle(x)
            model = augment(model, x, y, w)
        except Exception as exc:
            exc.partial_history = history
            raise
        mse, trace = _record_state(model, test_set, truth)
        history.append(
            HistoryRecord(it, x, float(y), mse, trace, np.nan,
                          time.perf_counter() - start)
        )
    return model, history


def uniform_grid(box, n_per_axis: int) -> np.ndarray:
    """Full n^D grid over the box, endpoints included, axes equally spaced."""
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in box]
    return np.array(list(product(*axes)))


def grid_sampling_run(
    model: GpModel, oracle, grid_sizes, box, test_set, truth
) -> ExperimentHistory:
    """Condition a fresh model per grid size on the base training set plus the
    n^D grid; grid points colliding with existing inputs are dropped (logged),
    not an error.  Sizes are independent, not sequential; each record's
    iteration index is the number of grid points actually added."""
    test_set = np.atleast_2d(np.asarray(test_set, dtype=float))
    truth = np.asarray(truth, dtype=float).reshape(-1)
    history = ExperimentHistory()
    base = model.train
    for n in grid_sizes:
        if n < 2:
            raise ValueError("grid sizes must be >= 2")
        start = time.perf_counter()
        grid = uniform_grid(box, n)
        dist = np.max(
            np.abs(grid[:, None, :] - base.inputs[None, :, :]), axis=2
        ).min(axis=1)
        keep = dist > DUPLICATE_TOL
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            log.info(
                "grid n=%d: dropped %d point(s) colliding with training inputs",
                n, dropped,
            )
        train = base
        for x in grid[keep]:
            y, w = oracle(x)
            train = train.extended(x, y, w)
        fresh = condition(train, model.hyper)
        mse, trace = _record_state(fresh, test_set, truth)
        history.append(
            HistoryRecord(
                int(np.count_nonzero(keep)), None, np.nan, mse, trace, np.nan,
                time.perf_counter() - start,
            )
        )
    return history
