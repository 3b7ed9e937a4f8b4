"""scikit-learn style wrappers around the functional solvers.

Inputs are grids, not sample matrices: ``X`` is a single image or a stack of
cost maps along axis 0. Fitted attributes end in ``_``. Parameters are plain
constructor arguments, so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_field
from .alm import SolverConfig
from .denoise import denoise
from .exceptions import InvalidArgumentError
from .grid import warp
from .maxflow import BinarySegProblem, solve, threshold
from .potts import PottsProblem, argmax_label
from .potts import solve as solve_potts
from .priors import (
    OrderChain,
    decode_partial_order,
    solve_coseg,
    solve_linear_order,
    solve_partial_order,
    solve_star_prior,
    solve_volume_prior,
    star_vector_field,
)
from .registration import RegParams, register_pair, register_volume_preserving

__all__ = [
    "TVDenoiser",
    "BinarySegmenter",
    "PottsSegmenter",
    "RegionOrderSegmenter",
    "PartialOrderSegmenter",
    "CoSegmenter",
    "DeformableRegistration",
]


class _SolverMixin:
    def _cfg(self):
        return SolverConfig(c=self.c, max_iters=self.max_iters, tol=self.tol, tv_norm=self.tv_norm)

    def _check_fitted(self, attr="u_"):
        if not hasattr(self, attr):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")


def _stack(X, n=None, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2:
        raise InvalidArgumentError(f"{name} must stack cost maps along axis 0, got shape {X.shape}")
    if n is not None and X.shape[0] != n:
        raise InvalidArgumentError(f"{name} must hold {n} cost maps, got {X.shape[0]}")
    return X


class TVDenoiser(_SolverMixin, TransformerMixin, BaseEstimator):
    """Total-variation denoising; ``transform`` returns the denoised image."""

    def __init__(self, alpha=0.1, fidelity="l2", c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alpha = alpha
        self.fidelity = fidelity
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = denoise(X, self.alpha, self.fidelity, self._cfg())
        return self

    def transform(self, X):
        u, _ = denoise(X, self.alpha, self.fidelity, self._cfg())
        return u

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).u_


class BinarySegmenter(_SolverMixin, BaseEstimator):
    """Binary segmentation from ``X = [C_s, C_t]``.

    Set `volume` (with `gamma`) for the volume prior or `star_center` for the
    star-shape prior. ``predict`` returns the mask ``u > threshold``.
    """

    def __init__(self, alpha=0.3, volume=None, gamma=1.0, star_center=None, threshold=0.5,
                 c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alpha = alpha
        self.volume = volume
        self.gamma = gamma
        self.star_center = star_center
        self.threshold = threshold
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def _solve(self, X):
        X = _stack(X, 2)
        prob = BinarySegProblem(X[0], X[1], self.alpha)
        cfg = self._cfg()
        if self.volume is not None and self.star_center is not None:
            raise InvalidArgumentError("volume and star_center cannot both be set")
        if self.star_center is not None:
            return solve_star_prior(prob, star_vector_field(self.star_center, prob.shape), cfg)
        if self.volume is not None:
            return solve_volume_prior(prob, self.gamma, self.volume, cfg)
        u, _, diag = solve(prob, cfg)
        return u, diag

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = self._solve(X)
        self.labels_ = threshold(self.u_, self.threshold)
        return self

    def predict(self, X):
        return threshold(self._solve(X)[0], self.threshold)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class PottsSegmenter(_SolverMixin, BaseEstimator):
    """Multiphase segmentation from ``X = [rho_1, ..., rho_n]``; labels are 1..n."""

    def __init__(self, alpha=0.3, c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alpha = alpha
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = solve_potts(PottsProblem(_stack(X), self.alpha), self._cfg())
        self.labels_ = argmax_label(self.u_)
        return self

    def predict(self, X):
        u, _ = solve_potts(PottsProblem(_stack(X), self.alpha), self._cfg())
        return argmax_label(u)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class RegionOrderSegmenter(_SolverMixin, BaseEstimator):
    """Nested regions from level costs ``X = [D_1, ..., D_n]``.

    ``predict`` returns the level index 1..n of each voxel. `alphas` is one
    weight per surface or a scalar shared by all.
    """

    def __init__(self, alphas=0.3, c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alphas = alphas
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def _solve(self, X):
        X = _stack(X)
        alphas = np.broadcast_to(np.asarray(self.alphas, dtype=np.float64), (max(X.shape[0] - 1, 0),))
        return solve_linear_order(OrderChain(X, alphas), self._cfg())

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = self._solve(X)
        self.labels_ = 1 + np.sum(self.u_ > 0.5, axis=0)
        return self

    def predict(self, X):
        return 1 + np.sum(self._solve(X)[0] > 0.5, axis=0)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class PartialOrderSegmenter(_SolverMixin, BaseEstimator):
    """Partial-order segmentation from ``X = [rho_m, rho_b, rho_s, rho_B]``; labels 0..3."""

    def __init__(self, alpha=0.3, c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alpha = alpha
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = solve_partial_order(_stack(X, 4), self.alpha, self._cfg())
        self.labels_ = decode_partial_order(self.u_)[0]
        return self

    def predict(self, X):
        u, _ = solve_partial_order(_stack(X, 4), self.alpha, self._cfg())
        return decode_partial_order(u)[0]

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class CoSegmenter(_SolverMixin, BaseEstimator):
    """Joint segmentation of two images; ``X[k] = [C_s^k, C_t^k]``, shape ``(2, 2, *grid)``."""

    def __init__(self, alpha=0.3, beta=0.5, c=0.3, max_iters=1000, tol=1e-4, tv_norm="isotropic"):
        self.alpha = alpha
        self.beta = beta
        self.c = c
        self.max_iters = max_iters
        self.tol = tol
        self.tv_norm = tv_norm

    def _solve(self, X):
        X = _stack(X, 2)
        if X.ndim < 3 or X.shape[1] != 2:
            raise InvalidArgumentError(f"X must have shape (2, 2, *grid), got {X.shape}")
        p1 = BinarySegProblem(X[0, 0], X[0, 1], self.alpha)
        p2 = BinarySegProblem(X[1, 0], X[1, 1], self.alpha)
        u1, u2, diag = solve_coseg(p1, p2, self.beta, self._cfg())
        return np.stack([u1, u2]), diag

    def fit(self, X, y=None):
        self.u_, self.diagnostics_ = self._solve(X)
        self.labels_ = threshold(self.u_)
        return self

    def predict(self, X):
        return threshold(self._solve(X)[0])

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class DeformableRegistration(TransformerMixin, BaseEstimator):
    """Pairwise registration: ``fit(moving, fixed)``, then ``transform`` warps by ``displacement_``.

    With `mask` set, the volume change inside it is penalized with weight `gamma`.
    """

    def __init__(self, levels=3, warps_per_level=10, alpha=0.2, gamma=0.0, mask=None,
                 c=0.3, max_iters=300, tol=1e-4):
        self.levels = levels
        self.warps_per_level = warps_per_level
        self.alpha = alpha
        self.gamma = gamma
        self.mask = mask
        self.c = c
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        cfg = SolverConfig(c=self.c, max_iters=self.max_iters, tol=self.tol, record_energies=False)
        params = RegParams(self.levels, self.warps_per_level, self.alpha, self.gamma, cfg)
        if self.mask is None:
            u, diag = register_pair(X, y, params)
        else:
            u, diag = register_volume_preserving(X, y, self.mask, params)
        self.displacement_, self.diagnostics_ = u, diag
        return self

    def transform(self, X):
        if not hasattr(self, "displacement_"):
            raise NotFittedError("DeformableRegistration is not fitted yet; call fit first")
        return warp(check_field(X, "X"), self.displacement_)
