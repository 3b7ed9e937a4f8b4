"""TV-L2 / TV-L1 denoising through the dual model ``max -<q,f> - D*(q)`` subject to
``q + Div p = 0``, ``|p| <= alpha``; the denoised image is the multiplier."""

import numpy as np

from ._validation import check_field, check_nonnegative, check_same_grid
from .alm import DualProblem, SolverConfig, project_ball, run_alm
from .exceptions import InvalidArgumentError
from .grid import divergence, gradient, pointwise_norm

__all__ = ["denoise", "tv_energy", "TVDenoiseProblem"]

FIDELITIES = ("l2", "l1")


def _check_fidelity(fidelity):
    fidelity = str(fidelity).lower()
    if fidelity not in FIDELITIES:
        raise InvalidArgumentError(f"fidelity must be one of {FIDELITIES}, got {fidelity!r}")
    return fidelity


def tv_energy(u, f, alpha, fidelity="l2", tv_norm="isotropic"):
    """``D(u - f) + alpha * TV(u)`` with ``D = ||.||^2 / 2`` (l2) or ``||.||_1`` (l1)."""
    u = check_field(u, "u")
    f = check_field(f, "f")
    check_same_grid(u, f, names=["u", "f"])
    fidelity = _check_fidelity(fidelity)
    diff = u - f
    data = 0.5 * np.sum(diff * diff) if fidelity == "l2" else np.sum(np.abs(diff))
    return float(data + alpha * np.sum(pointwise_norm(gradient(u), tv_norm)))


class TVDenoiseProblem(DualProblem):
    """Dual variables: scalar flow ``q`` and spatial flow ``p`` (updated in that order)."""

    def __init__(self, f, alpha, fidelity="l2"):
        self.f = f
        self.alpha = alpha
        self.fidelity = fidelity
        self.q = np.zeros_like(f)
        self.p = np.zeros((f.ndim,) + f.shape)
        self._div_p = np.zeros_like(f)

    def initial_multiplier(self):
        return self.f.copy()

    def sweep(self, u, cfg):
        c = cfg.c
        if self.fidelity == "l2":
            # pointwise maximizer of -q f - q^2/2 + u q - c/2 (q + Div p)^2
            self.q = (u - self.f - c * self._div_p) / (1.0 + c)
        else:
            # ascent step of length 1/c, then projection onto |q| <= 1
            self.q = np.clip((u - self.f) / c - self._div_p, -1.0, 1.0)
        step = cfg.step_for(self.f.ndim)
        grad = gradient(self._div_p + self.q - u / c)
        self.p = project_ball(self.p + step * c * grad, self.alpha, cfg.tv_norm)
        self._div_p = divergence(self.p)

    def residual(self):
        return self.q + self._div_p

    def primal_energy(self, u, cfg):
        return tv_energy(u, self.f, self.alpha, self.fidelity, cfg.tv_norm)

    def dual_energy(self, cfg):
        """Dual objective at the feasible point ``q = -Div p``."""
        q = -self._div_p
        if self.fidelity == "l2":
            return float(-np.sum(q * self.f) - 0.5 * np.sum(q * q))
        peak = np.max(np.abs(q)) if q.size else 0.0
        if peak > 1.0:
            q = q / peak
        return float(-np.sum(q * self.f))

    def duals(self):
        return {"q": self.q.copy(), "p": self.p.copy()}


def denoise(f, alpha, fidelity="l2", cfg=None, return_duals=False):
    """Total-variation denoising by the ALM dual iteration.

    Parameters
    ----------
    f : ndarray
        Noisy image (1 to 3 axes).
    alpha : float
        TV weight, ``>= 0``.
    fidelity : {"l2", "l1"}
    cfg : SolverConfig, optional
    return_duals : bool
        Also return the final ``{"q", "p"}`` flows.

    Returns
    -------
    u : ndarray
    diagnostics : Diagnostics
    """
    f = check_field(f, "f")
    alpha = check_nonnegative(alpha, "alpha")
    fidelity = _check_fidelity(fidelity)
    cfg = cfg or SolverConfig()
    problem = TVDenoiseProblem(f, alpha, fidelity)
    u, duals, diag = run_alm(problem, cfg)
    if return_duals:
        return u, diag, duals
    return u, diag
