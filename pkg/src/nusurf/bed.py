"""Sequential design driven by predictive-variance reduction.

Each iteration scores candidate inputs by the relative drop in the summed
posterior variance over a set of evaluation points (the utility input) that
augmenting the model with a fictitious observation at the candidate would
produce, then samples the best candidate for real and reconditions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateUtilityError, ExhaustedCandidatesError
from .gp import (
    GpModel,
    augment,
    predict_cov,
    predict_grad_mean,
    predict_mean,
    predict_var_diag,
)
from .kernel import cross_cov, function_axes

__all__ = [
    "UtilityInput",
    "BedConfig",
    "HistoryRecord",
    "ExperimentHistory",
    "UNCERTAINTY_SUMMARIES",
    "utility",
    "perturb",
    "select_next",
    "run_bed",
]

# Stream tags keeping the perturbation and candidate draws decoupled even
# when both derive from the same run seed.
_PERTURB_STREAM = 774401
_CANDIDATE_STREAM = 774402

# Candidates closer than this (max-norm) to a training input are filtered.
DUPLICATE_TOL = 1e-9

_CANDIDATE_SOURCES = ("utility+uniform", "utility", "uniform")


def _as_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("input box must have shape (D, 2)")
    if not np.all(box[:, 0] < box[:, 1]):
        raise ValueError("input box must satisfy lo < hi per dimension")
    return box


@dataclass(frozen=True)
class UtilityInput:
    """Evaluation points for the variance-reduction utility.

    ``base_points`` must lie inside ``box``; perturbed copies are clipped
    back into it.  ``regularization_var`` is the per-coordinate variance of
    the Gaussian perturbation (0 reproduces the base grid exactly).
    """

    base_points: np.ndarray
    box: np.ndarray
    regularization_var: float = 0.0
    perturb_seed: int = 0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.base_points, dtype=float))
        box = _as_box(self.box)
        object.__setattr__(self, "base_points", pts)
        object.__setattr__(self, "box", box)
        if pts.shape[1] != box.shape[0]:
            raise ValueError("utility points and box disagree in dimension")
        if np.any(pts < box[:, 0]) or np.any(pts > box[:, 1]):
            raise ValueError("utility base points must lie inside the box")
        if self.regularization_var < 0.0:
            raise ValueError("regularization variance must be >= 0")


def perturb(u: UtilityInput, iteration: int) -> np.ndarray:
    """Base points plus seeded Gaussian noise, clipped to the box.

    Deterministic given (perturb_seed, iteration); the identity when the
    regularization variance is zero.
    """
    if u.regularization_var == 0.0:
        return u.base_points.copy()
    rng = np.random.default_rng((u.perturb_seed, iteration, _PERTURB_STREAM))
    noise = rng.standard_normal(u.base_points.shape) * np.sqrt(u.regularization_var)
    return np.clip(u.base_points + noise, u.box[:, 0], u.box[:, 1])


@dataclass(frozen=True)
class BedConfig:
    """Knobs of one sequential-design run."""

    n_iterations: int
    utility_input: UtilityInput
    input_box: np.ndarray
    rng_seed: int = 0
    candidate_source: str = "utility+uniform"
    n_fresh_candidates: int = 256
    summary: str = "trace"

    def __post_init__(self):
        object.__setattr__(self, "input_box", _as_box(self.input_box))
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.candidate_source not in _CANDIDATE_SOURCES:
            raise ValueError(
                f"candidate_source must be one of {_CANDIDATE_SOURCES}"
            )
        if self.summary not in UNCERTAINTY_SUMMARIES:
            raise ValueError(
                f"summary must be one of {tuple(UNCERTAINTY_SUMMARIES)}"
            )
        if not np.array_equal(self.input_box, self.utility_input.box):
            raise ValueError("utility input box must match the config box")


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    x: np.ndarray | None
    y: float
    mse: float
    trace: float
    utility: float
    seconds: float


@dataclass
class ExperimentHistory:
    """Per-iteration record of a sampling run; shared across all strategies."""

    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, record: HistoryRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("iteration indices must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records], dtype=int)

    @property
    def mses(self) -> np.ndarray:
        return np.array([r.mse for r in self.records])

    @property
    def traces(self) -> np.ndarray:
        return np.array([r.trace for r in self.records])

    @property
    def final(self) -> HistoryRecord:
        if not self.records:
            raise ValueError("history is empty")
        return self.records[-1]


class _TraceReducer:
    """Exact trace reduction for augmenting with a fictitious observation.

    Augmenting a GP with one observation block conditions the posterior
    sequentially, so the post-augmentation variance at any point u is
    var(u) - q_u^T (P + noise)^-1 q_u with P the current posterior covariance
    of the block and q_u the current posterior cross-covariance.  Summing
    over the utility points gives the same trace the literal
    augment-and-recompute path would, in O(M^2) per candidate.
    """

    def __init__(self, model: GpModel, points: np.ndarray):
        self.model = model
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.points.shape[0]
        fa = function_axes(n)
        k_u = cross_cov(self.points, fa, model.joint_x, model.joint_axes, model.hyper)
        self.v_u = solve_triangular(model.chol, k_u.T, lower=True)
        var = model.hyper.amplitude**2 - np.sum(self.v_u**2, axis=0)
        self.trace = float(np.sum(np.clip(var, 0.0, None)))

    def reductions(self, candidates: np.ndarray) -> np.ndarray:
        """Trace drop for every candidate row, evaluated in one batch."""
        model = self.model
        cands = np.atleast_2d(np.asarray(candidates, dtype=float))
        n_c = cands.shape[0]
        d = model.ndim
        if model.train.has_gradients:
            k = 1 + d
            pts = np.repeat(cands, k, axis=0)
            axes = np.tile(np.concatenate([[-1], np.arange(d)]), n_c)
        else:
            k = 1
            pts = cands
            axes = function_axes(n_c)
        # Prior self-covariance of a block at zero separation is candidate
        # independent: diag(a^2, a^2/l_d^2, ...) plus the noise terms.
        ls2 = model.hyper.length_scales**2
        amp2 = model.hyper.amplitude**2
        block_diag = np.full(k, amp2)
        if k > 1:
            block_diag[1:] = amp2 / ls2
        noise = np.where(
            axes[:k] == -1,
            model.train.function_noise_var,
            model.train.gradient_noise_var,
        )
        t0 = np.diag(block_diag + noise)

        B = cross_cov(pts, axes, model.joint_x, model.joint_axes, model.hyper)
        W = solve_triangular(model.chol, B.T, lower=True)  # (M, n_c * k)
        W = W.reshape(model.n_joint, n_c, k)
        T = t0[None, :, :] - np.einsum("mci,mcj->cij", W, W)

        n_u = self.points.shape[0]
        k_prior = cross_cov(
            pts, axes, self.points, function_axes(n_u), model.hyper
        ).reshape(n_c, k, n_u)
        q = k_prior - np.einsum("mci,mu->ciu", W, self.v_u)

        lam, Q = np.linalg.eigh(0.5 * (T + np.swapaxes(T, 1, 2)))
        scale = np.maximum(lam[:, -1], float(np.trace(t0)) / k)
        inv = np.where(lam > 1e-12 * scale[:, None], 1.0, 0.0) / np.where(
            lam > 0.0, lam, 1.0
        )
        y = np.einsum("ckj,cku->cju", Q, q)
        return np.einsum("cju,cju,cj->c", y, y, inv)


def _summary_trace(model: GpModel, points) -> float:
    return float(np.sum(predict_var_diag(model, points)))


def _summary_determinant(model: GpModel, points) -> float:
    return float(np.linalg.det(predict_cov(model, points)))


def _summary_max_variance(model: GpModel, points) -> float:
    return float(np.max(predict_var_diag(model, points)))


UNCERTAINTY_SUMMARIES = {
    "trace": _summary_trace,
    "determinant": _summary_determinant,
    "max_variance": _summary_max_variance,
}


def _utility_points(u) -> np.ndarray:
    if isinstance(u, UtilityInput):
        return u.base_points
    return np.atleast_2d(np.asarray(u, dtype=float))


def utility(model: GpModel, x, u, summary: str = "trace") -> float:
    """1 - summary(augmented posterior) / summary(current posterior) over u.

    ``u`` is a UtilityInput (its base points are used as-is; pass a perturbed
    copy for regularized runs) or a plain array of points.  The augmentation
    uses the fictitious pair (x, posterior mean at x), with the gradient slot
    of a derivative GP filled by the posterior-mean gradient; neither value
    influences the posterior covariance, so the trace path never needs them.
    """
    points = _utility_points(u)
    if summary == "trace":
        reducer = _TraceReducer(model, points)
        if reducer.trace <= 0.0:
            raise DegenerateUtilityError(
                "Tr(Sigma_u) is zero: every utility point is fully determined"
            )
        red = float(reducer.reductions(np.asarray(x, dtype=float).reshape(1, -1))[0])
        return min(red / reducer.trace, 1.0)
    fn = UNCERTAINTY_SUMMARIES[summary]
    before = fn(model, points)
    if before <= 0.0:
        raise DegenerateUtilityError(
            f"{summary} summary is zero before augmentation"
        )
    mu = float(predict_mean(model, np.asarray(x, dtype=float).reshape(1, -1))[0])
    w = None
    if model.train.has_gradients:
        w = predict_grad_mean(model, np.asarray(x, dtype=float).reshape(1, -1))[0]
    after = fn(augment(model, x, mu, w), points)
    return min(1.0 - after / before, 1.0)


def _candidates(model: GpModel, cfg: BedConfig, iteration: int) -> tuple[
    np.ndarray, np.ndarray
]:
    """Candidate set and the perturbed utility points for one iteration."""
    pts = perturb(cfg.utility_input, iteration)
    blocks = []
    if cfg.candidate_source in ("utility+uniform", "utility"):
        blocks.append(pts)
    if cfg.candidate_source in ("utility+uniform", "uniform"):
        rng = np.random.default_rng((cfg.rng_seed, iteration, _CANDIDATE_STREAM))
        lo, hi = cfg.input_box[:, 0], cfg.input_box[:, 1]
        blocks.append(lo + rng.random((cfg.n_fresh_candidates, lo.size)) * (hi - lo))
    cands = np.vstack(blocks)
    train_x = model.train.inputs
    dist = np.max(np.abs(cands[:, None, :] - train_x[None, :, :]), axis=2)
    keep = np.min(dist, axis=1) > DUPLICATE_TOL
    return cands[keep], pts


def select_next(
    model: GpModel, cfg: BedConfig, iteration: int, with_value: bool = False
):
    """Argmax of the utility over the iteration's candidate set.

    Candidates coinciding with training inputs (within 1e-9) are filtered
    first; ties break toward the lowest surviving candidate index.
    """
    cands, pts = _candidates(model, cfg, iteration)
    if cands.shape[0] == 0:
        raise ExhaustedCandidatesError(
            "all candidates coincide with existing training inputs"
        )
    if cfg.summary == "trace":
        reducer = _TraceReducer(model, pts)
        if reducer.trace <= 0.0:
            raise DegenerateUtilityError(
                "Tr(Sigma_u) is zero: every utility point is fully determined"
            )
        values = np.minimum(reducer.reductions(cands) / reducer.trace, 1.0)
    else:
        values = np.array([utility(model, c, pts, cfg.summary) for c in cands])
    best = int(np.argmax(values))
    if with_value:
        return cands[best], float(values[best])
    return cands[best]


def run_bed(
    model: GpModel, oracle, cfg: BedConfig, test_set, truth
) -> tuple[GpModel, ExperimentHistory]:
    """Run ``cfg.n_iterations`` select/sample/recondition steps.

    ``oracle(x)`` must return (y, gradient-or-None) for any in-box point.
    Each record stores the chosen input, its observed output, the utility at
    the chosen input, and the test-set MSE and summed posterior variance.
    Oracle or conditioning errors propagate with the partial history attached
    as ``exc.partial_history``.
    """
    test_set = np.atleast_2d(np.asarray(test_set, dtype=float))
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size != test_set.shape[0]:
        raise ValueError("truth vector must align with the test set")
    history = ExperimentHistory()
    for it in range(1, cfg.n_iterations + 1):
        start = time.perf_counter()
        try:
            x_next, u_val = select_next(model, cfg, it, with_value=True)
            y, w = oracle(x_next)
            model = augment(model, x_next, y, w)
        except Exception as exc:
            exc.partial_history = history
            raise
        mse = float(np.mean((predict_mean(model, test_set) - truth) ** 2))
        trace = float(np.sum(predict_var_diag(model, test_set)))
        history.append(
            HistoryRecord(
                iteration=it,
                x=x_next,
                y=float(y),
                mse=mse,
                trace=trace,
                utility=u_val,
                seconds=time.perf_counter() - start,
            )
        )
    return model, history
