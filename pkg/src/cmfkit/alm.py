"""Augmented Lagrangian machinery shared by every solver.

A dual problem exposes its dual variables as attributes and implements
:class:`DualProblem`. :func:`run_alm` alternates the two ALM steps:

1. a Gauss-Seidel sweep over the dual variables, each one updated by a single
   projected ascent step (or its closed-form pointwise maximizer) on the
   augmented Lagrangian ``L_c``;
2. the multiplier update ``u <- u - c * residual``.

The multiplier ``u`` at exit approximates the primal minimizer.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np

from .exceptions import InvalidArgumentError, NumericalFailureError
from .grid import TV_NORMS

__all__ = [
    "SolverConfig",
    "Diagnostics",
    "DualProblem",
    "project_interval",
    "project_ball",
    "run_alm",
    "QuadraticSumProblem",
]

CSV_COLUMNS = ("iter", "primal", "dual", "residual_l2", "mean_update")


@dataclass
class SolverConfig:
    """Parameters of the ALM iteration.

    Parameters
    ----------
    c : float
        Augmentation weight of the quadratic penalty.
    inner_step : float or None
        Ascent step for the spatial flows. ``None`` picks ``0.3 / (2 d c)`` for a
        ``d``-dimensional grid, below the stability bound ``1 / (2 d c)``.
    max_iters : int
    tol : float
        Stop once the mean absolute multiplier update per voxel, and the mean
        absolute change of each dual variable, drop below it.
    tv_norm : {"isotropic", "anisotropic"}
    record_energies : bool
        Evaluate primal and dual energies every iteration (NaN otherwise).
    """

    c: float = 0.3
    inner_step: float = None
    max_iters: int = 1000
    tol: float = 1e-4
    tv_norm: str = "isotropic"
    record_energies: bool = True

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgumentError(f"c must be > 0, got {self.c}")
        if self.inner_step is not None and not self.inner_step > 0:
            raise InvalidArgumentError(f"inner_step must be > 0, got {self.inner_step}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise InvalidArgumentError(f"tol must be >= 0, got {self.tol}")
        if self.tv_norm not in TV_NORMS:
            raise InvalidArgumentError(f"tv_norm must be one of {TV_NORMS}, got {self.tv_norm!r}")

    def step_for(self, ndim):
        """Spatial-flow ascent step for a grid with `ndim` axes."""
        if self.inner_step is not None:
            return self.inner_step
        return 0.3 / (2 * max(ndim, 1) * self.c)


@dataclass
class Diagnostics:
    """Per-iteration record of an ALM run."""

    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    residual_l2: list = field(default_factory=list)
    mean_update: list = field(default_factory=list)
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.mean_update)

    @property
    def gap(self):
        """Final primal minus dual energy."""
        return self.primal[-1] - self.dual[-1]

    def append(self, primal, dual, residual_l2, mean_update):
        self.primal.append(float(primal))
        self.dual.append(float(dual))
        self.residual_l2.append(float(residual_l2))
        self.mean_update.append(float(mean_update))

    def rows(self):
        return [
            (k + 1, self.primal[k], self.dual[k], self.residual_l2[k], self.mean_update[k])
            for k in range(self.iterations)
        ]

    def to_csv(self, path_or_buffer=None):
        """Write the records as CSV; returns the text when no target is given."""
        buffer = io.StringIO() if path_or_buffer is None else None
        if path_or_buffer is None:
            self._write(buffer)
            return buffer.getvalue()
        if hasattr(path_or_buffer, "write"):
            self._write(path_or_buffer)
        else:
            with open(path_or_buffer, "w", newline="") as fh:
                self._write(fh)
        return None

    def _write(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows():
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])

    @classmethod
    def concatenate(cls, runs):
        """Chain several runs (e.g. per pyramid level) into one record."""
        out = cls()
        for run in runs:
            out.primal += run.primal
            out.dual += run.dual
            out.residual_l2 += run.residual_l2
            out.mean_update += run.mean_update
        out.converged = bool(runs) and all(r.converged for r in runs)
        return out


def project_interval(v, lo, hi):
    """Clamp `v` (scalar or array) to ``[lo, hi]``."""
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise InvalidArgumentError(f"empty interval: lo={lo} > hi={hi}")
    out = np.clip(v, lo, hi)
    return float(out) if np.ndim(out) == 0 else out


def project_ball(v, radius, norm="isotropic"):
    """Project vectors onto the centered ball of `radius`.

    `v` holds components along axis 0 (a single vector or a vector field).
    Isotropic: radial rescaling into the Euclidean ball. Anisotropic:
    componentwise clamp into ``[-radius, radius]``.
    """
    radius = np.asarray(radius, dtype=np.float64)
    if np.any(radius < 0):
        raise InvalidArgumentError(f"radius must be >= 0, got {radius}")
    v = np.asarray(v, dtype=np.float64)
    if norm == "anisotropic":
        return np.clip(v, -radius, radius)
    if norm != "isotropic":
        raise InvalidArgumentError(f"norm must be one of {TV_NORMS}, got {norm!r}")
    mag = np.sqrt(np.sum(v * v, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > radius, radius / mag, 1.0)
    return v * scale


class DualProblem:
    """Interface consumed by :func:`run_alm`.

    Subclasses keep their dual variables as attributes and update them in place.
    """

    def initial_multiplier(self):
        raise NotImplementedError

    def sweep(self, u, cfg):
        """Update every dual variable once, sequentially, for fixed multiplier `u`."""
        raise NotImplementedError

    def residual(self):
        """Linear constraint residual (same shape as the multiplier)."""
        raise NotImplementedError

    def primal_energy(self, u, cfg):
        return math.nan

    def dual_energy(self, cfg):
        return math.nan

    def duals(self):
        """Mapping of dual-variable name to its current value."""
        return {}


def _mean_change(new, old):
    """Largest mean absolute change over the dual variables."""
    change = 0.0
    for key, value in new.items():
        diff = np.abs(np.asarray(value, dtype=np.float64) - np.asarray(old[key], dtype=np.float64))
        if diff.size:
            change = max(change, float(np.mean(diff)))
    return change


def run_alm(problem, cfg=None):
    """Run the ALM iteration on `problem`.

    Stops once both the mean absolute multiplier update and the mean absolute
    change of every dual variable drop below ``cfg.tol``. Checking the duals
    too matters: capacity clamps can absorb the residual exactly while the
    spatial flows are still moving, which leaves ``u`` briefly unchanged.

    Returns
    -------
    u : ndarray
        Final multiplier.
    duals : dict
        Final dual variables.
    diagnostics : Diagnostics
    """
    cfg = cfg or SolverConfig()
    u = np.array(problem.initial_multiplier(), dtype=np.float64)
    diag = Diagnostics()
    duals = problem.duals()
    for k in range(int(cfg.max_iters)):
        problem.sweep(u, cfg)
        res = problem.residual()
        update = cfg.c * res
        u -= update
        mean_update = float(np.mean(np.abs(update)))
        res_l2 = float(np.sqrt(np.sum(res * res)))
        if cfg.record_energies:
            primal = problem.primal_energy(u, cfg)
            dual = problem.dual_energy(cfg)
        else:
            primal = dual = math.nan
        if not (math.isfinite(mean_update) and math.isfinite(res_l2)) or (
            cfg.record_energies and not (math.isfinite(primal) and math.isfinite(dual))
        ):
            raise NumericalFailureError("non-finite value in ALM iteration", k)
        diag.append(primal, dual, res_l2, mean_update)
        previous, duals = duals, problem.duals()
        if mean_update < cfg.tol and _mean_change(duals, previous) < cfg.tol:
            diag.converged = True
            break
    return u, duals, diag


class QuadraticSumProblem(DualProblem):
    """Dual of ``min_u sum_i (u - a_i)^2 / 2`` for scalar `u`.

    Each term has conjugate ``f_i*(p) = p^2 / 2 + a_i p``; the dual constraint is
    ``sum_i p_i = 0`` and its multiplier converges to ``mean(a)``.
    Used as an engine sanity check.
    """

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.float64).ravel()
        if self.targets.size < 1:
            raise InvalidArgumentError("need at least one quadratic term")
        self.p = np.zeros_like(self.targets)

    def initial_multiplier(self):
        return np.zeros(1)

    def sweep(self, u, cfg):
        c = cfg.c
        for i, a in enumerate(self.targets):
            others = self.p.sum() - self.p[i]
            # argmax of -p^2/2 - a p + u p - c/2 (p + others)^2
            self.p[i] = (u[0] - a - c * others) / (1.0 + c)

    def residual(self):
        return np.array([self.p.sum()])

    def primal_energy(self, u, cfg):
        return float(0.5 * np.sum((u[0] - self.targets) ** 2))

    def dual_energy(self, cfg):
        # shift the flows onto the constraint set before evaluating
        p = self.p - self.p.mean()
        return float(-np.sum(0.5 * p * p + self.targets * p))

    def duals(self):
        return {"p": self.p.copy()}
