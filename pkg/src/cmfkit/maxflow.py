"""Binary segmentation by continuous max-flow.

Energy convention (relaxed min-cut)::

    E(u) = sum (1 - u) C_s + u C_t + alpha TV(u),   u in [0, 1]

so ``C_s`` is the cost of background (``u = 0``) and ``C_t`` the cost of
foreground (``u = 1``). Its dual maximizes ``sum p_s`` subject to
``p_s <= C_s``, ``p_t <= C_t``, ``|p| <= alpha`` and the flow balance
``Div p - p_s + p_t = 0``, whose multiplier is ``u``. Thresholding the relaxed
minimizer at any level in (0, 1) gives a global binary minimizer.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_field, check_nonnegative, check_same_grid
from .alm import DualProblem, SolverConfig, project_ball, run_alm
from .exceptions import InvalidArgumentError
from .grid import divergence, gradient, pointwise_norm

__all__ = [
    "BinarySegProblem",
    "FlowState",
    "BinaryFlowProblem",
    "solve",
    "threshold",
    "primal_energy",
    "dual_energy",
]


@dataclass
class BinarySegProblem:
    """Source/sink cost maps and TV weight."""

    C_s: np.ndarray
    C_t: np.ndarray
    alpha: float

    def __post_init__(self):
        self.C_s = check_field(self.C_s, "C_s")
        self.C_t = check_field(self.C_t, "C_t")
        check_same_grid(self.C_s, self.C_t, names=["C_s", "C_t"])
        self.alpha = check_nonnegative(self.alpha, "alpha")

    @property
    def shape(self):
        return self.C_s.shape


@dataclass
class FlowState:
    p_s: np.ndarray
    p_t: np.ndarray
    p: np.ndarray


def threshold(u, beta=0.5):
    """Binary mask ``u > beta`` (ties go to background)."""
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise InvalidArgumentError(f"beta must lie in (0, 1), got {beta}")
    return (np.asarray(u, dtype=np.float64) > beta).astype(np.float64)


def primal_energy(u, prob, tv_norm="isotropic"):
    """``sum (1 - u) C_s + u C_t + alpha TV(u)``."""
    u = check_field(u, "u")
    check_same_grid(u, prob.C_s, names=["u", "costs"])
    data = np.sum((1.0 - u) * prob.C_s + u * prob.C_t)
    return float(data + prob.alpha * np.sum(pointwise_norm(gradient(u), tv_norm)))


def dual_energy(p, prob):
    """Certified lower bound from a spatial flow ``|p| <= alpha``.

    The sink flow is kept and the source flow re-chosen as
    ``min(C_s, C_t + Div p)`` so that the balance holds exactly.
    """
    return float(np.sum(np.minimum(prob.C_s, prob.C_t + divergence(p))))


class BinaryFlowProblem(DualProblem):
    """Flows updated in the order ``p``, ``p_s``, ``p_t``."""

    def __init__(self, prob):
        self.prob = prob
        shape = prob.shape
        self.p_s = np.minimum(prob.C_s, prob.C_t)
        self.p_t = self.p_s.copy()
        self.p = np.zeros((len(shape),) + shape)
        self._div = np.zeros(shape)

    def initial_multiplier(self):
        return (self.prob.C_s > self.prob.C_t).astype(np.float64)

    def _ascend_p(self, u, cfg, target):
        c = cfg.c
        step = cfg.step_for(self.p.shape[0])
        self.p = project_ball(
            self.p + step * c * gradient(target - u / c), self.prob.alpha, cfg.tv_norm
        )

    def sweep(self, u, cfg):
        c = cfg.c
        self._ascend_p(u, cfg, self._div - self.p_s + self.p_t)
        self._div = divergence(self.p)
        # pointwise maximizers of L_c, clamped to the capacities
        self.p_s = np.minimum(self._div + self.p_t + (1.0 - u) / c, self.prob.C_s)
        self.p_t = np.minimum(self.p_s - self._div + u / c, self.prob.C_t)

    def residual(self):
        return self._div - self.p_s + self.p_t

    def primal_energy(self, u, cfg):
        return primal_energy(u, self.prob, cfg.tv_norm)

    def dual_energy(self, cfg):
        return dual_energy(self.p, self.prob)

    def duals(self):
        return {"p_s": self.p_s.copy(), "p_t": self.p_t.copy(), "p": self.p.copy()}

    def flow_state(self):
        return FlowState(self.p_s.copy(), self.p_t.copy(), self.p.copy())


def solve(prob, cfg=None, clip=False):
    """Continuous max-flow for a :class:`BinarySegProblem`.

    Returns ``(u, FlowState, Diagnostics)``. `u` is the raw multiplier unless
    `clip` is set, in which case it is clamped to ``[0, 1]``.
    """
    cfg = cfg or SolverConfig()
    problem = BinaryFlowProblem(prob)
    u, _, diag = run_alm(problem, cfg)
    if clip:
        u = np.clip(u, 0.0, 1.0)
    return u, problem.flow_state(), diag
