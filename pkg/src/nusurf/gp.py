"""Gaussian-process conditioning with optional derivative observations.

Conditioning builds the joint covariance over function values and, when
gradients are supplied, all first partial derivatives of the latent
function at the training inputs.  The prior mean is zero.  Models are
immutable; adding an observation produces a new model by extending the
Cholesky factor with one block row rather than refactorizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf

from .errors import ConditioningError
from .kernel import FUNCTION_AXIS, KernelHyper, cross_cov, function_axes

__all__ = [
    "TrainingSet",
    "GpModel",
    "condition",
    "predict_mean",
    "predict_cov",
    "predict_var_diag",
    "predict_grad_mean",
    "augment",
    "sample_posterior",
    "grid_search_hyper",
]

# Chunk size for pointwise prediction loops; keeps cross-covariance blocks
# small enough that a 25^4 test grid never materializes an N*xM matrix.
_PREDICT_CHUNK = 2048

# A Schur block whose eigenvalues sit below this fraction of its own scale
# carries no usable information (duplicate of a fully determined point).
_SCHUR_FLOOR = 1e-14
_SCHUR_INDEFINITE = -1e-10

_VAR_CLAMP = 1e-10


@dataclass(frozen=True)
class TrainingSet:
    """Observations a GP conditions on.

    ``inputs`` is (N, D), ``outputs`` is (N,).  ``gradients`` is either None
    (regular GP) or an (N, D) array of all first partial derivatives
    (derivative GP); mixed sets are rejected.  Noise terms are variances
    added to the matching covariance diagonal entries.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    gradients: np.ndarray | None = None
    function_noise_var: float = 0.0
    gradient_noise_var: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        if X.shape[0] != y.size:
            raise ValueError(
                f"inputs ({X.shape[0]}) and outputs ({y.size}) disagree in length"
            )
        if self.gradients is not None:
            W = np.atleast_2d(np.asarray(self.gradients, dtype=float))
            object.__setattr__(self, "gradients", W)
            if W.shape != X.shape:
                raise ValueError(
                    f"gradients shape {W.shape} must match inputs shape {X.shape}"
                )
            if not np.isfinite(W).all():
                raise ValueError("gradients must be finite (all-or-none per set)")
        if self.function_noise_var < 0.0 or self.gradient_noise_var < 0.0:
            raise ValueError("noise variances must be >= 0")

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def ndim(self) -> int:
        return self.inputs.shape[1]

    @property
    def has_gradients(self) -> bool:
        return self.gradients is not None

    def extended(self, x, y: float, w=None) -> "TrainingSet":
        """New set with one observation appended (gradient presence must match)."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if self.has_gradients != (w is not None):
            raise ValueError(
                "gradient presence of the new observation must match the set"
            )
        grads = self.gradients
        if w is not None:
            grads = np.vstack([grads, np.asarray(w, dtype=float).reshape(1, -1)])
        return TrainingSet(
            np.vstack([self.inputs, x]),
            np.append(self.outputs, float(y)),
            grads,
            self.function_noise_var,
            self.gradient_noise_var,
        )


@dataclass(frozen=True)
class GpModel:
    """Immutable conditioned state.

    ``joint_x``/``joint_axes`` describe each row of the expanded system (the
    point and FUNCTION_AXIS or the differentiated axis), ``chol`` is the lower
    Cholesky factor of the joint covariance plus noise, ``yhat`` the expanded
    output vector and ``alpha_vec`` the stored solve (K + noise)^-1 yhat.
    """

    hyper: KernelHyper
    train: TrainingSet
    joint_x: np.ndarray
    joint_axes: np.ndarray
    chol: np.ndarray
    yhat: np.ndarray
    alpha_vec: np.ndarray

    @property
    def n_joint(self) -> int:
        return self.joint_x.shape[0]

    @property
    def ndim(self) -> int:
        return self.train.ndim

    def joint_noise(self) -> np.ndarray:
        """Noise variance attached to each joint row."""
        return np.where(
            self.joint_axes == FUNCTION_AXIS,
            self.train.function_noise_var,
            self.train.gradient_noise_var,
        )


def _expand(train: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    """Joint rows: all function observations first, then gradient rows grouped
    by observation (obs-major) and by axis."""
    X = train.inputs
    n, d = X.shape
    axes = function_axes(n)
    joint_x = X
    if train.has_gradients:
        joint_x = np.vstack([X, np.repeat(X, d, axis=0)])
        axes = np.concatenate([axes, np.tile(np.arange(d), n)])
    return joint_x, axes


def _factorize(K: np.ndarray, context: str) -> np.ndarray:
    L, info = dpotrf(K, lower=1, clean=1)
    if info != 0:
        lam_min = float(np.linalg.eigvalsh(K).min())
        raise ConditioningError(
            f"{context}: joint covariance plus noise is not positive definite "
            f"(leading minor {info} failed, smallest pivot/eigenvalue "
            f"{lam_min:.6e}); raise the noise variance or drop duplicate inputs"
        )
    return L


def condition(train: TrainingSet, hyper: KernelHyper) -> GpModel:
    """Condition a zero-mean GP on ``train``, factorizing the joint covariance.

    Function/function entries use the kernel, function/derivative entries its
    first derivative and derivative/derivative entries the mixed second
    derivative.  No jitter is added: a non-positive-definite system raises
    ConditioningError.
    """
    if train.n_points < 1:
        raise ValueError("training set must contain at least one observation")
    if hyper.ndim != train.ndim:
        raise ValueError(
            f"kernel dimension {hyper.ndim} != training dimension {train.ndim}"
        )
    joint_x, axes = _expand(train)
    K = cross_cov(joint_x, axes, joint_x, axes, hyper)
    noise = np.where(
        axes == FUNCTION_AXIS, train.function_noise_var, train.gradient_noise_var
    )
    K[np.diag_indices_from(K)] += noise
    L = _factorize(K, "condition")
    yhat = train.outputs
    if train.has_gradients:
        yhat = np.concatenate([train.outputs, train.gradients.ravel()])
    alpha = cho_solve((L, True), yhat)
    return GpModel(hyper, train, joint_x, axes, L, yhat, alpha)


def _check_test_points(model: GpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, model.ndim) if X.size else X.reshape(0, model.ndim)
    if X.ndim != 2 or (X.size and X.shape[1] != model.ndim):
        raise ValueError(
            f"test points must be (n, {model.ndim}), got shape {X.shape}"
        )
    return X


def predict_mean(model: GpModel, test_points) -> np.ndarray:
    """Posterior mean at the test points (zero prior mean)."""
    X = _check_test_points(model, test_points)
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], _PREDICT_CHUNK):
        chunk = X[lo : lo + _PREDICT_CHUNK]
        k = cross_cov(
            chunk, function_axes(chunk.shape[0]), model.joint_x, model.joint_axes,
            model.hyper,
        )
        out[lo : lo + chunk.shape[0]] = k @ model.alpha_vec
    return out


def predict_cov(model: GpModel, test_points) -> np.ndarray:
    """Full posterior covariance matrix over the test points."""
    X = _check_test_points(model, test_points)
    n = X.shape[0]
    fa = function_axes(n)
    prior = cross_cov(X, fa, X, fa, model.hyper)
    k = cross_cov(X, fa, model.joint_x, model.joint_axes, model.hyper)
    v = solve_triangular(model.chol, k.T, lower=True)
    cov = prior - v.T @ v
    cov = 0.5 * (cov + cov.T)
    diag = np.diag_indices_from(cov)
    clamp = (cov[diag] < 0.0) & (cov[diag] >= -_VAR_CLAMP)
    cov[diag] = np.where(clamp, 0.0, cov[diag])
    return cov


def predict_var_diag(model: GpModel, test_points) -> np.ndarray:
    """Pointwise posterior variance; never builds the full test covariance."""
    X = _check_test_points(model, test_points)
    prior = model.hyper.amplitude**2
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], _PREDICT_CHUNK):
        chunk = X[lo : lo + _PREDICT_CHUNK]
        k = cross_cov(
            chunk, function_axes(chunk.shape[0]), model.joint_x, model.joint_axes,
            model.hyper,
        )
        v = solve_triangular(model.chol, k.T, lower=True)
        out[lo : lo + chunk.shape[0]] = prior - np.sum(v**2, axis=0)
    np.copyto(out, 0.0, where=(out < 0.0) & (out >= -_VAR_CLAMP))
    return out


def predict_grad_mean(model: GpModel, test_points) -> np.ndarray:
    """Posterior mean of the gradient of the latent function, shape (n, D)."""
    X = _check_test_points(model, test_points)
    d = model.ndim
    out = np.empty((X.shape[0], d))
    for lo in range(0, X.shape[0], _PREDICT_CHUNK):
        chunk = X[lo : lo + _PREDICT_CHUNK]
        pts = np.repeat(chunk, d, axis=0)
        axes = np.tile(np.arange(d), chunk.shape[0])
        k = cross_cov(pts, axes, model.joint_x, model.joint_axes, model.hyper)
        out[lo : lo + chunk.shape[0]] = (k @ model.alpha_vec).reshape(-1, d)
    return out


def _new_block_descriptors(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != model.ndim:
        raise ValueError(f"point must have dimension {model.ndim}")
    if model.train.has_gradients:
        d = model.ndim
        pts = np.repeat(x, 1 + d, axis=0)
        axes = np.concatenate([[FUNCTION_AXIS], np.arange(d)])
        return pts, axes
    return x, function_axes(1)


def _block_noise(model: GpModel, axes: np.ndarray) -> np.ndarray:
    return np.where(
        axes == FUNCTION_AXIS,
        model.train.function_noise_var,
        model.train.gradient_noise_var,
    )


def _extend_cholesky(
    model: GpModel, pts: np.ndarray, axes: np.ndarray, context: str
) -> tuple[np.ndarray, np.ndarray]:
    """Append one observation block to the factor: L' = [[L, 0], [W^T, Ls]].

    A Schur complement that is semidefinite within rounding (a duplicate of a
    fully determined point) is floored at a negligible eigenvalue so the
    consistent no-op augmentation succeeds; an indefinite block still raises.
    """
    B = cross_cov(pts, axes, model.joint_x, model.joint_axes, model.hyper)
    C = cross_cov(pts, axes, pts, axes, model.hyper)
    C[np.diag_indices_from(C)] += _block_noise(model, axes)
    W = solve_triangular(model.chol, B.T, lower=True)
    S = C - W.T @ W
    S = 0.5 * (S + S.T)
    scale = max(float(np.trace(C)) / C.shape[0], np.finfo(float).tiny)
    lam, Q = np.linalg.eigh(S)
    if lam[0] < _SCHUR_INDEFINITE * scale:
        raise ConditioningError(
            f"{context}: extended covariance is not positive definite "
            f"(smallest pivot/eigenvalue {lam[0]:.6e}); raise the noise "
            "variance or drop duplicate inputs"
        )
    floor = _SCHUR_FLOOR * scale
    if lam[0] < floor:
        S = (Q * np.maximum(lam, floor)) @ Q.T
        S = 0.5 * (S + S.T)
    Ls = _factorize(S, context)
    m, k = model.n_joint, pts.shape[0]
    L_new = np.zeros((m + k, m + k))
    L_new[:m, :m] = model.chol
    L_new[m:, :m] = W.T
    L_new[m:, m:] = Ls
    return L_new, W


def augment(model: GpModel, x, y: float, w=None) -> GpModel:
    """New model conditioned on the training set plus one observation.

    Equivalent to reconditioning from scratch, but reuses the existing factor
    (one block-row extension).  Gradient presence must match the model.
    """
    if model.train.has_gradients != (w is not None):
        raise ValueError("gradient presence of the new observation must match the model")
    pts, axes = _new_block_descriptors(model, x)
    L_new, _ = _extend_cholesky(model, pts, axes, "augment")
    new_vals = np.atleast_1d(np.asarray(y, dtype=float).reshape(-1))
    if w is not None:
        new_vals = np.concatenate([new_vals, np.asarray(w, dtype=float).reshape(-1)])
    yhat = np.concatenate([model.yhat, new_vals])
    alpha = cho_solve((L_new, True), yhat)
    return GpModel(
        model.hyper,
        model.train.extended(x, y, w),
        np.vstack([model.joint_x, pts]),
        np.concatenate([model.joint_axes, axes]),
        L_new,
        yhat,
        alpha,
    )


def sample_posterior(
    model: GpModel, test_points, n_samples: int, seed: int
) -> np.ndarray:
    """Draw ``n_samples`` functions from the posterior at the test points.

    The covariance is factorized by eigendecomposition with negative
    eigenvalues clipped to zero (stabilization well below 1e-9 * amplitude^2).
    Deterministic given ``seed``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    X = _check_test_points(model, test_points)
    mu = predict_mean(model, X)
    cov = predict_cov(model, X)
    lam, U = np.linalg.eigh(cov)
    root = U * np.sqrt(np.clip(lam, 0.0, None))
    z = np.random.default_rng(seed).standard_normal((n_samples, X.shape[0]))
    return mu + z @ root.T


def grid_search_hyper(
    train: TrainingSet, candidates, val_inputs, val_targets
) -> tuple[KernelHyper, float]:
    """Pick the candidate hyperparameters with the lowest held-out MSE.

    Candidates that fail to condition are skipped.  Ties keep the first
    candidate, so the search is deterministic for a fixed candidate order.
    """
    val_targets = np.asarray(val_targets, dtype=float).reshape(-1)
    best: tuple[KernelHyper, float] | None = None
    for hyper in candidates:
        try:
            model = condition(train, hyper)
        except ConditioningError:
            continue
        mse = float(np.mean((predict_mean(model, val_inputs) - val_targets) ** 2))
        if best is None or mse < best[1]:
            best = (hyper, mse)
    if best is None:
        raise ConditioningError("no hyperparameter candidate produced a valid model")
    return best
