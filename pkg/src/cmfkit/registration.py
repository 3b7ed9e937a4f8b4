"""Coarse-to-fine non-rigid registration with a TV-regularized SAD energy.

The deformation ``u`` maps the moving image onto the fixed one: ``I_f(x + u(x))
~ I_r(x)``. At each pyramid level the warped moving image is linearized around
the current ``u`` and the convex problem

    min_h  sum |I0 + grad I . h| + alpha sum_i TV(u_i + h_i)

is solved for the increment ``h`` by the dual ALM iteration; ``h`` is the
multiplier of ``F_i = w d_i I + Div q_i (+ prior flows) = 0``.

Variants add one flow to ``F_i``:

* volume preservation, ``gamma |dV|`` with ``dV = sum mask * Div u``:
  a scalar ``pi * d_i mask`` with ``|pi| <= gamma``
* temporal coupling of a sequence, ``gamma sum_k |u_k - u_{k+1}|``:
  ``r_k - r_{k-1}`` with ``|r_k| <= gamma`` per voxel and component
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_binary_mask, check_field, check_nonnegative, check_same_grid
from ._validation import check_vector_field
from .alm import Diagnostics, DualProblem, SolverConfig, project_ball, run_alm
from .exceptions import InvalidArgumentError
from .grid import (
    build_pyramid,
    divergence,
    gradient,
    image_gradient,
    pointwise_norm,
    upsample_deformation,
    warp,
)

__all__ = [
    "RegParams",
    "linearize",
    "solve_level",
    "register_pair",
    "register_volume_preserving",
    "register_sequence",
    "volume_change",
    "sad",
    "temporal_variation",
]

_TINY = 1e-12


def _default_cfg():
    return SolverConfig(max_iters=300, tol=1e-4, record_energies=False)


@dataclass
class RegParams:
    """Pyramid depth, outer warps per level, TV weight, prior weight, inner solver."""

    levels: int = 3
    warps_per_level: int = 10
    alpha: float = 0.2
    gamma: float = 0.0
    cfg: SolverConfig = field(default_factory=_default_cfg)

    def __post_init__(self):
        for name in ("levels", "warps_per_level"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidArgumentError(f"{name} must be an integer >= 1, got {value!r}")
            setattr(self, name, int(value))
        self.alpha = check_nonnegative(self.alpha, "alpha")
        self.gamma = check_nonnegative(self.gamma, "gamma")


def sad(moving, fixed, u=None):
    """Sum of absolute differences ``sum |I_f(x + u) - I_r|``."""
    warped = moving if u is None else warp(moving, u)
    return float(np.sum(np.abs(warped - fixed)))


def linearize(warped, fixed):
    """Residual ``I0 = warped - fixed`` and the gradient of the warped image."""
    warped = check_field(warped, "warped")
    fixed = check_field(fixed, "fixed")
    check_same_grid(warped, fixed, names=["warped", "fixed"])
    return warped - fixed, image_gradient(warped)


def volume_change(u, mask):
    """Signed volume change ``sum mask * Div u`` (positive under expansion)."""
    mask = check_binary_mask(mask, "mask")
    u = check_vector_field(u, name="deformation")
    if u.shape[1:] != mask.shape:
        raise InvalidArgumentError(f"grid mismatch: deformation={u.shape[1:]}, mask={mask.shape}")
    return float(np.sum(mask * divergence(u)))


def temporal_variation(fields):
    """``sum_k sum |u_k - u_{k+1}|`` over a list of deformation fields."""
    return float(sum(np.sum(np.abs(a - b)) for a, b in zip(fields[:-1], fields[1:])))


class _LevelProblem(DualProblem):
    """Linearized TV-L1 problem for ``K`` frame pairs at one pyramid level.

    Multiplier ``h`` has shape ``(K, d, *grid)``. Per sweep: ``w_k``, ``q_k``
    for every pair, then the prior flow (``pi`` or ``r``).
    """

    def __init__(self, I0, grads, u_prev, alpha, mask_grad=None, gamma_vol=0.0, gamma_time=0.0):
        self.I0 = I0                # (K, *grid)
        self.g = grads              # (K, d, *grid)
        self.g2 = np.sum(grads * grads, axis=1)
        self.u_prev = u_prev        # (K, d, *grid)
        self.alpha = alpha
        K, d = grads.shape[:2]
        shape = grads.shape[2:]
        self.shape = shape
        self.w = np.zeros((K,) + shape)
        self.q = np.zeros((K, d, d) + shape)
        self._div = np.zeros((K, d) + shape)
        self.ell = mask_grad        # (d, *grid) or None
        self.gamma_vol = gamma_vol
        self.pi = 0.0
        self.gamma_time = gamma_time
        self.coupled = K > 1 and gamma_time > 0
        self.r = np.zeros((max(K - 1, 0), d) + shape)

    def initial_multiplier(self):
        return np.zeros_like(self.u_prev)

    def _prior(self):
        """Prior-flow contribution to ``F``, shape ``(K, d, *grid)``."""
        extra = np.zeros_like(self._div)
        if self.ell is not None:
            extra += self.pi * self.ell
        if self.coupled:
            extra[:-1] += self.r
            extra[1:] -= self.r
        return extra

    def _constraint(self, prior=None):
        prior = self._prior() if prior is None else prior
        return self.w[:, None] * self.g + self._div + prior

    def sweep(self, h, cfg):
        c = cfg.c
        step = cfg.step_for(len(self.shape))
        prior = self._prior()
        # w maximizes w (I0 + g.h) - c/2 sum_i (w g_i + A_i)^2 on [-1, 1]
        gA = np.sum(self.g * (self._div + prior), axis=1)
        num = self.I0 + np.sum(self.g * h, axis=1) - c * gA
        self.w = np.clip(num / np.maximum(c * self.g2, _TINY), -1.0, 1.0)
        target = self.u_prev + h
        for k in range(self.w.shape[0]):
            for i in range(self.g.shape[1]):
                F = self.w[k] * self.g[k, i] + self._div[k, i] + prior[k, i]
                self.q[k, i] = project_ball(
                    self.q[k, i] + step * c * gradient(F - target[k, i] / c),
                    self.alpha,
                    cfg.tv_norm,
                )
                self._div[k, i] = divergence(self.q[k, i])
        if self.ell is not None:
            self._update_pi(h, c)
        if self.coupled:
            self._update_r(h, c)

    def _update_pi(self, h, c):
        ell = self.ell
        denom = c * self.w.shape[0] * np.sum(ell * ell)
        if denom <= 0.0:
            self.pi = 0.0
            return
        base = self.w[:, None] * self.g + self._div
        num = np.sum(ell * (self.u_prev + h)) - c * np.sum(ell * base)
        self.pi = float(np.clip(num / denom, -self.gamma_vol, self.gamma_vol))

    def _update_r(self, h, c):
        # sequential over k: neighbouring r_k share the constraint F_{k+1}
        U = self.u_prev + h
        F = self._constraint()
        for k in range(self.r.shape[0]):
            cur = F[k] - self.r[k]          # F_k without its +r_k term
            nxt = F[k + 1] + self.r[k]      # F_{k+1} without its -r_k term
            r = (U[k] - U[k + 1]) / (2.0 * c) + 0.5 * (nxt - cur)
            r = np.clip(r, -self.gamma_time, self.gamma_time)
            F[k] = cur + r
            F[k + 1] = nxt - r
            self.r[k] = r

    def residual(self):
        return self._constraint()

    def primal_energy(self, h, cfg):
        U = self.u_prev + h
        data = np.sum(np.abs(self.I0 + np.sum(self.g * h, axis=1)))
        tv = sum(np.sum(pointwise_norm(gradient(U[k, i]), cfg.tv_norm))
                 for k in range(U.shape[0]) for i in range(U.shape[1]))
        energy = data + self.alpha * tv
        if self.ell is not None:
            energy += self.gamma_vol * abs(float(np.sum(self.ell * U)))
        if self.coupled:
            energy += self.gamma_time * float(np.sum(np.abs(U[:-1] - U[1:])))
        return float(energy)

    def dual_energy(self, cfg):
        # dual objective, not a certified bound: F = 0 holds only at convergence
        value = np.sum(self.w * self.I0) + np.sum(self.u_prev * (self._div + self._prior()))
        return float(value)

    def duals(self):
        return {"w": self.w.copy(), "q": self.q.copy(), "pi": self.pi, "r": self.r.copy()}


def _stack_pairs(I0, gradI, u_prev):
    I0 = check_field(I0, "I0")
    gradI = check_vector_field(gradI, name="gradI")
    u_prev = check_vector_field(u_prev, name="u_prev")
    if gradI.shape[1:] != I0.shape or u_prev.shape != gradI.shape:
        raise InvalidArgumentError(
            f"grid mismatch: I0={I0.shape}, gradI={gradI.shape[1:]}, u_prev={u_prev.shape[1:]}"
        )
    return I0[None], gradI[None], u_prev[None]


def solve_level(I0, gradI, u_prev, alpha, cfg=None, mask=None, gamma=0.0):
    """Increment ``h`` minimizing the linearized energy around `u_prev`.

    With `mask` given, ``gamma |dV(u_prev + h)|`` is added. Returns
    ``(h, Diagnostics)``; ``Diagnostics.extra`` holds the final ``pi``.
    """
    I0, gradI, u_prev = _stack_pairs(I0, gradI, u_prev)
    alpha = check_nonnegative(alpha, "alpha")
    gamma = check_nonnegative(gamma, "gamma")
    cfg = cfg or _default_cfg()
    ell = None
    if mask is not None:
        mask = check_binary_mask(mask, "mask")
        check_same_grid(mask, I0[0], names=["mask", "I0"])
        ell = gradient(mask)
    problem = _LevelProblem(I0, gradI, u_prev, alpha, ell, gamma_vol=gamma)
    h, duals, diag = run_alm(problem, cfg)
    diag.extra = {"pi": duals["pi"]}
    return h[0], diag


def _normalize(images):
    lo = min(float(np.min(im)) for im in images)
    hi = max(float(np.max(im)) for im in images)
    scale = hi - lo if hi > lo else 1.0
    return [(im - lo) / scale for im in images]


def _register(images, params, mask=None, coupled=False):
    """Shared multi-scale loop. Pair ``k`` warps ``images[k]`` onto ``images[k + 1]``.

    Each pair is rescaled on its own, so a sequence with ``gamma = 0`` is
    exactly a set of independent pair registrations.
    """
    pairs = [_normalize(images[k:k + 2]) for k in range(len(images) - 1)]
    moving_pyr = [build_pyramid(m, params.levels) for m, _ in pairs]
    fixed_pyr = [build_pyramid(f, params.levels) for _, f in pairs]
    mask_pyr = None
    if mask is not None:
        mask_pyr = [(lv > 0.5).astype(np.float64) for lv in build_pyramid(mask, params.levels)]
    n_pairs = len(pairs)
    shapes = [lv.shape for lv in moving_pyr[0]]
    d = len(shapes[0])
    u = np.zeros((n_pairs, d) + shapes[0])
    runs = []
    for level, shape in enumerate(shapes):
        if level > 0:
            u = np.stack([upsample_deformation(uk, shape) for uk in u])
        moving = [pyr[level] for pyr in moving_pyr]
        fixed = [pyr[level] for pyr in fixed_pyr]
        ell = None if mask_pyr is None else gradient(mask_pyr[level])
        for _ in range(params.warps_per_level):
            I0 = np.empty((n_pairs,) + shape)
            grads = np.empty((n_pairs, d) + shape)
            for k in range(n_pairs):
                I0[k], grads[k] = linearize(warp(moving[k], u[k]), fixed[k])
            if coupled and params.gamma > 0 and n_pairs > 1:
                groups = [slice(0, n_pairs)]
            else:
                # uncoupled pairs are solved (and stopped) independently
                groups = [slice(k, k + 1) for k in range(n_pairs)]
            h = np.empty_like(u)
            for sl in groups:
                problem = _LevelProblem(
                    I0[sl],
                    grads[sl],
                    u[sl],
                    params.alpha,
                    ell,
                    gamma_vol=params.gamma if mask is not None else 0.0,
                    gamma_time=params.gamma if coupled else 0.0,
                )
                h[sl], _, diag = run_alm(problem, params.cfg)
                runs.append(diag)
            u = u + h
    out = Diagnostics.concatenate(runs)
    sad_before = [sad(m, f) for m, f in pairs]
    sad_after = [sad(m, f, uk) for (m, f), uk in zip(pairs, u)]
    out.extra = {"sad_before": sad_before, "sad_after": sad_after, "level_shapes": shapes}
    return u, out


def _check_pair(moving, fixed):
    moving = check_field(moving, "moving", min_extent=2)
    fixed = check_field(fixed, "fixed", min_extent=2)
    check_same_grid(moving, fixed, names=["moving", "fixed"])
    return moving, fixed


def register_pair(moving, fixed, params=None):
    """Deformation ``u`` with ``moving(x + u) ~ fixed``.

    Intensities are jointly rescaled to [0, 1]. Returns ``(u, Diagnostics)``;
    ``Diagnostics.extra`` records SAD before and after registration (on the
    rescaled images).
    """
    moving, fixed = _check_pair(moving, fixed)
    params = params or RegParams()
    u, diag = _register([moving, fixed], params)
    diag.extra["sad_before"] = diag.extra["sad_before"][0]
    diag.extra["sad_after"] = diag.extra["sad_after"][0]
    return u[0], diag


def register_volume_preserving(moving, fixed, mask, params=None):
    """:func:`register_pair` with the penalty ``params.gamma * |dV|`` on the masked region.

    `mask` is a binary indicator in the fixed image's frame. The final volume
    change is ``Diagnostics.extra["delta_v"]``.
    """
    moving, fixed = _check_pair(moving, fixed)
    mask = check_binary_mask(mask, "mask")
    check_same_grid(mask, fixed, names=["mask", "fixed"])
    params = params or RegParams()
    u, diag = _register([moving, fixed], params, mask=mask)
    diag.extra["sad_before"] = diag.extra["sad_before"][0]
    diag.extra["sad_after"] = diag.extra["sad_after"][0]
    diag.extra["delta_v"] = volume_change(u[0], mask)
    return u[0], diag


def register_sequence(images, params=None):
    """Joint registration of consecutive frames with temporal smoothing.

    ``u_k`` maps ``images[k]`` onto ``images[k + 1]``; ``params.gamma``
    weights ``sum_k |u_k - u_{k+1}|``. Returns ``(list of u_k, Diagnostics)``.
    """
    images = list(images)
    if len(images) < 2:
        raise InvalidArgumentError(f"need at least 2 images, got {len(images)}")
    images = [check_field(im, f"images[{k}]", min_extent=2) for k, im in enumerate(images)]
    check_same_grid(*images, names=[f"images[{k}]" for k in range(len(images))])
    params = params or RegParams()
    u, diag = _register(images, params, coupled=True)
    return list(u), diag
