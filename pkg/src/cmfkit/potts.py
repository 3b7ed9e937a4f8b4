"""Multiphase segmentation with the convex-relaxed Potts model.

Relaxed energy ``sum_i <u_i, rho_i> + alpha sum_i TV(u_i)`` over the per-voxel
simplex. The dual is a continuous max-flow with one source flow ``p_s``, sink
flows ``p_i <= rho_i`` and spatial flows ``|q_i| <= alpha``, balanced by
``Div q_i - p_s + p_i = 0``; ``u_i`` are the multipliers.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_field, check_nonnegative, check_same_grid
from .alm import DualProblem, SolverConfig, project_ball, run_alm
from .exceptions import InvalidArgumentError
from .grid import divergence, gradient, pointwise_norm

__all__ = ["PottsProblem", "PottsFlowProblem", "solve", "argmax_label", "potts_energy", "relaxed_energy"]


@dataclass
class PottsProblem:
    """Per-region cost maps ``rho_1 .. rho_n`` and the boundary weight."""

    costs: np.ndarray
    alpha: float

    def __post_init__(self):
        costs = [check_field(r, f"rho_{i + 1}") for i, r in enumerate(self.costs)]
        if not costs:
            raise InvalidArgumentError("need at least one region cost map")
        check_same_grid(*costs, names=[f"rho_{i + 1}" for i in range(len(costs))])
        self.costs = np.stack(costs)
        self.alpha = check_nonnegative(self.alpha, "alpha")

    @property
    def n(self):
        return self.costs.shape[0]

    @property
    def shape(self):
        return self.costs.shape[1:]


def argmax_label(labeling):
    """Index (1-based) of the largest ``u_i`` per voxel; ties go to the smaller index."""
    return np.argmax(np.asarray(labeling), axis=0) + 1


def potts_energy(labels, prob, tv_norm="isotropic"):
    """Potts energy of an integer labeling with values in ``1..n``."""
    labels = np.asarray(labels)
    if labels.shape != prob.shape:
        raise InvalidArgumentError(f"grid mismatch: labels={labels.shape}, costs={prob.shape}")
    if labels.size and (labels.min() < 1 or labels.max() > prob.n or np.any(labels != np.round(labels))):
        raise InvalidArgumentError(f"labels must be integers in 1..{prob.n}")
    onehot = np.stack([(labels == i + 1).astype(np.float64) for i in range(prob.n)])
    return relaxed_energy(onehot, prob, tv_norm)


def relaxed_energy(u, prob, tv_norm="isotropic"):
    """``sum_i <u_i, rho_i> + alpha sum_i TV(u_i)`` for a (relaxed) labeling."""
    u = np.asarray(u, dtype=np.float64)
    data = np.sum(u * prob.costs)
    tv = sum(np.sum(pointwise_norm(gradient(ui), tv_norm)) for ui in u)
    return float(data + prob.alpha * tv)


class PottsFlowProblem(DualProblem):
    """Flows updated as: all ``q_i``, all ``p_i``, then ``p_s``."""

    def __init__(self, prob):
        self.prob = prob
        n, shape = prob.n, prob.shape
        self.p_s = np.min(prob.costs, axis=0)
        self.p = np.repeat(self.p_s[None], n, axis=0)
        self.q = np.zeros((n, len(shape)) + shape)
        self._div = np.zeros((n,) + shape)

    def initial_multiplier(self):
        return np.full((self.prob.n,) + self.prob.shape, 1.0 / self.prob.n)

    def sweep(self, u, cfg):
        c = cfg.c
        n = self.prob.n
        step = cfg.step_for(len(self.prob.shape))
        for i in range(n):
            target = self._div[i] - self.p_s + self.p[i] - u[i] / c
            self.q[i] = project_ball(
                self.q[i] + step * c * gradient(target), self.prob.alpha, cfg.tv_norm
            )
            self._div[i] = divergence(self.q[i])
        self.p = np.minimum(self.p_s - self._div + u / c, self.prob.costs)
        # maximizer of p_s (1 - sum u_i) - c/2 sum_i (Div q_i + p_i - p_s)^2
        self.p_s = np.sum(self._div + self.p - u / c, axis=0) / n + 1.0 / (c * n)

    def residual(self):
        return self._div - self.p_s + self.p

    def primal_energy(self, u, cfg):
        return relaxed_energy(u, self.prob, cfg.tv_norm)

    def dual_energy(self, cfg):
        # feasible source flow for the current spatial flows
        return float(np.sum(np.min(self.prob.costs + self._div, axis=0)))

    def duals(self):
        return {"p_s": self.p_s.copy(), "p": self.p.copy(), "q": self.q.copy()}


def solve(prob, cfg=None):
    """Continuous max-flow for a :class:`PottsProblem`.

    Returns ``(u, Diagnostics)`` with `u` of shape ``(n, *grid)``.
    """
    cfg = cfg or SolverConfig()
    u, _, diag = run_alm(PottsFlowProblem(prob), cfg)
    return u, diag
