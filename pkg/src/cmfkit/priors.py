"""Continuous max-flow with segmentation priors.

* volume prior: ``gamma |V - sum u|`` via one global slack flow ``r in [-gamma, gamma]``
* star-shape prior: ``e . grad u <= 0`` for the radial field ``e`` about a centre
* linear region order: nested regions ``u_{n-1} <= ... <= u_1``
* partial region order: background ``B`` and a union ``C = m + b + s``
* co-segmentation: two labelings coupled by ``beta sum |u_1 - u_2|``

Every solver reuses the binary/Potts flow updates and adds the prior's own
flow variable to the balance constraints.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_field, check_nonnegative, check_same_grid
from .alm import Diagnostics, DualProblem, SolverConfig, project_ball, run_alm
from .exceptions import InvalidArgumentError
from .grid import divergence, gradient, pointwise_norm
from .maxflow import BinaryFlowProblem, BinarySegProblem, primal_energy, solve

__all__ = [
    "StarField",
    "OrderChain",
    "PARTIAL_ORDER_REGIONS",
    "star_vector_field",
    "solve_volume_prior",
    "solve_star_prior",
    "solve_linear_order",
    "solve_partial_order",
    "solve_coseg",
    "linear_order_energy",
    "partial_order_energy",
    "decode_partial_order",
    "ray_monotone",
]

PARTIAL_ORDER_REGIONS = ("m", "b", "s", "B", "C")


def _tv(u, norm):
    return np.sum(pointwise_norm(gradient(u), norm))


# -- volume prior -------------------------------------------------------------


class VolumeFlowProblem(BinaryFlowProblem):
    """Binary max-flow with the balance relaxed by a scalar slack ``r``."""

    def __init__(self, prob, gamma, volume):
        super().__init__(prob)
        self.gamma = gamma
        self.volume = volume
        self.r = 0.0

    def sweep(self, u, cfg):
        c = cfg.c
        self._ascend_p(u, cfg, self._div - self.p_s + self.p_t - self.r)
        self._div = divergence(self.p)
        self.p_s = np.minimum(self._div + self.p_t - self.r + (1.0 - u) / c, self.prob.C_s)
        self.p_t = np.minimum(self.p_s - self._div + self.r + u / c, self.prob.C_t)
        # r maximizes r (V - sum u) - c/2 ||Div p - p_s + p_t - r||^2 over [-gamma, gamma]
        balance = self._div - self.p_s + self.p_t
        r = (self.volume - np.sum(u) + c * np.sum(balance)) / (c * u.size)
        self.r = float(np.clip(r, -self.gamma, self.gamma))

    def residual(self):
        return self._div - self.p_s + self.p_t - self.r

    def primal_energy(self, u, cfg):
        return primal_energy(u, self.prob, cfg.tv_norm) + self.gamma * abs(self.volume - np.sum(u))

    def dual_energy(self, cfg):
        flow = np.minimum(self.prob.C_s, self.prob.C_t + self._div - self.r)
        return float(np.sum(flow) + self.r * self.volume)

    def duals(self):
        out = super().duals()
        out["r"] = self.r
        return out


def solve_volume_prior(prob, gamma, volume, cfg=None):
    """Binary segmentation penalizing ``gamma * |volume - sum u|`` (volume in voxels).

    Returns ``(u, Diagnostics)``; the final slack is ``Diagnostics.extra["r"]``.
    """
    gamma = check_nonnegative(gamma, "gamma")
    volume = check_nonnegative(volume, "volume")
    cfg = cfg or SolverConfig()
    problem = VolumeFlowProblem(prob, gamma, volume)
    u, duals, diag = run_alm(problem, cfg)
    diag.extra = {"r": duals["r"]}
    return u, diag


# -- star-shape prior ----------------------------------------------------------


@dataclass
class StarField:
    """Centre (voxel coordinates, array-axis order) and unit radial field ``e``."""

    center: tuple
    e: np.ndarray


def star_vector_field(center, shape):
    """Radial unit field ``(x - O) / |x - O|``, zero in the voxel containing ``O``."""
    shape = tuple(int(n) for n in shape)
    center = tuple(float(c) for c in np.atleast_1d(center))
    if len(center) != len(shape):
        raise InvalidArgumentError(f"center {center} does not match a {len(shape)}-axis grid")
    if any(not 0 <= c <= n - 1 for c, n in zip(center, shape)):
        raise InvalidArgumentError(f"center {center} lies outside grid {shape}")
    coords = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))
    offset = coords - np.reshape(center, (-1,) + (1,) * len(shape))
    dist = np.sqrt(np.sum(offset * offset, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(dist > 0, offset / dist, 0.0)
    e[(slice(None),) + tuple(int(np.floor(c + 0.5)) for c in center)] = 0.0
    return StarField(center, e)


class StarFlowProblem(BinaryFlowProblem):
    """Binary max-flow with the extra flow ``lambda * e``, ``lambda <= 0``."""

    def __init__(self, prob, e):
        super().__init__(prob)
        self.e = e
        self.lam = np.zeros(prob.shape)

    def initial_multiplier(self):
        # keep the binary argmin start only when it is already star-shaped;
        # otherwise start from the neutral (and feasible) u = 1/2
        u = super().initial_multiplier()
        if np.all(np.sum(self.e * gradient(u), axis=0) <= 0.0):
            return u
        return np.full(self.prob.shape, 0.5)

    def _total_div(self):
        return divergence(self.p + self.lam * self.e)

    def sweep(self, u, cfg):
        c = cfg.c
        step = cfg.step_for(self.p.shape[0])
        self._ascend_p(u, cfg, self._div - self.p_s + self.p_t)
        self._div = self._total_div()
        # d L_c / d lambda = c e . grad(residual - u/c)
        grad = gradient(self._div - self.p_s + self.p_t - u / c)
        self.lam = np.minimum(self.lam + step * c * np.sum(self.e * grad, axis=0), 0.0)
        self._div = self._total_div()
        self.p_s = np.minimum(self._div + self.p_t + (1.0 - u) / c, self.prob.C_s)
        self.p_t = np.minimum(self.p_s - self._div + u / c, self.prob.C_t)

    def dual_energy(self, cfg):
        return float(np.sum(np.minimum(self.prob.C_s, self.prob.C_t + self._div)))

    def duals(self):
        out = super().duals()
        out["lambda"] = self.lam.copy()
        return out


def solve_star_prior(prob, star, cfg=None):
    """Binary segmentation whose foreground is star-shaped about ``star.center``.

    Returns ``(u, Diagnostics)``; the final ``lambda`` is ``Diagnostics.extra["lambda"]``.
    """
    e = np.asarray(star.e, dtype=np.float64)
    if e.shape != (len(prob.shape),) + prob.shape:
        raise InvalidArgumentError(f"grid mismatch: star field {e.shape[1:]}, costs {prob.shape}")
    cfg = cfg or SolverConfig()
    problem = StarFlowProblem(prob, e)
    u, duals, diag = run_alm(problem, cfg)
    diag.extra = {"lambda": duals["lambda"]}
    return u, diag


def ray_monotone(mask, center, n_rays=64, step=0.25):
    """True when every ray from `center` leaves the mask at most once (2D masks).

    Rays are sampled every `step` voxels with nearest-voxel lookup up to the
    grid boundary; a ray fails if a foreground sample follows a background one.
    """
    mask = np.asarray(mask) > 0.5
    if mask.ndim != 2:
        raise InvalidArgumentError("ray audit expects a 2D mask")
    cy, cx = (float(c) for c in center)
    for angle in np.linspace(0.0, 2 * np.pi, n_rays, endpoint=False):
        dy, dx = np.sin(angle), np.cos(angle)
        t, left = 0.0, False
        while True:
            iy, ix = int(np.floor(cy + t * dy + 0.5)), int(np.floor(cx + t * dx + 0.5))
            if not (0 <= iy < mask.shape[0] and 0 <= ix < mask.shape[1]):
                break
            if mask[iy, ix]:
                if left:
                    return False
            else:
                left = True
            t += step
    return True


# -- linear region order -------------------------------------------------------


@dataclass
class OrderChain:
    """Level costs ``D_1 .. D_n`` and per-surface weights ``alpha_1 .. alpha_{n-1}``.

    ``D_i`` is the cost of a voxel in ``Omega_{i-1} \\ Omega_i`` (``Omega_0`` is the
    whole grid and ``Omega_n`` empty).
    """

    costs: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        costs = [check_field(d, f"D_{i + 1}") for i, d in enumerate(self.costs)]
        if len(costs) < 2:
            raise InvalidArgumentError(f"a region order needs n >= 2 levels, got {len(costs)}")
        check_same_grid(*costs, names=[f"D_{i + 1}" for i in range(len(costs))])
        self.costs = np.stack(costs)
        alphas = np.broadcast_to(np.asarray(self.alphas, dtype=np.float64), (len(costs) - 1,))
        if np.any(alphas < 0):
            raise InvalidArgumentError(f"alphas must be >= 0, got {alphas}")
        self.alphas = alphas.copy()

    @property
    def n(self):
        return self.costs.shape[0]

    @property
    def shape(self):
        return self.costs.shape[1:]


def linear_order_energy(u, chain, tv_norm="isotropic"):
    """``sum_i <u_{i-1} - u_i, D_i> + sum_i alpha_i TV(u_i)`` with ``u_0 = 1, u_n = 0``."""
    u = np.asarray(u, dtype=np.float64)
    full = np.concatenate([np.ones((1,) + chain.shape), u, np.zeros((1,) + chain.shape)])
    data = np.sum((full[:-1] - full[1:]) * chain.costs)
    tv = sum(a * _tv(ui, tv_norm) for a, ui in zip(chain.alphas, u))
    return float(data + tv)


class LinearOrderProblem(DualProblem):
    """Flows ``q_1..q_{n-1}`` then ``p_1..p_n`` (Gauss-Seidel)."""

    def __init__(self, chain):
        self.chain = chain
        n, shape = chain.n, chain.shape
        base = np.min(chain.costs, axis=0)
        self.p = np.repeat(base[None], n, axis=0)
        self.q = np.zeros((n - 1, len(shape)) + shape)
        self._div = np.zeros((n - 1,) + shape)

    def initial_multiplier(self):
        # pointwise optimal nesting: voxel at level k lies in Omega_1 .. Omega_{k-1}
        best = np.argmin(self.chain.costs, axis=0)
        return np.stack([(best > i).astype(np.float64) for i in range(self.chain.n - 1)])

    def sweep(self, u, cfg):
        c = cfg.c
        n = self.chain.n
        step = cfg.step_for(len(self.chain.shape))
        for i in range(n - 1):
            target = self._div[i] - self.p[i] + self.p[i + 1] - u[i] / c
            self.q[i] = project_ball(
                self.q[i] + step * c * gradient(target), self.chain.alphas[i], cfg.tv_norm
            )
            self._div[i] = divergence(self.q[i])
        for i in range(n):
            # p_i has weight (u_{i-1} - u_i) and enters residuals i-1 (+) and i (-)
            u_prev = 1.0 if i == 0 else u[i - 1]
            u_next = 0.0 if i == n - 1 else u[i]
            if i == 0:
                free = self._div[0] + self.p[1] + (u_prev - u_next) / c
            elif i == n - 1:
                free = (u_prev - u_next) / c - (self._div[i - 1] - self.p[i - 1])
            else:
                below = self._div[i - 1] - self.p[i - 1]
                above = self._div[i] + self.p[i + 1]
                free = (u_prev - u_next) / (2.0 * c) + 0.5 * (above - below)
            self.p[i] = np.minimum(free, self.chain.costs[i])

    def residual(self):
        return self._div - self.p[:-1] + self.p[1:]

    def primal_energy(self, u, cfg):
        return linear_order_energy(u, self.chain, cfg.tv_norm)

    def dual_energy(self, cfg):
        # p_1 limited by D_k + sum_{j<k} Div q_j for every k
        offsets = np.concatenate([np.zeros((1,) + self.chain.shape), np.cumsum(self._div, axis=0)])
        return float(np.sum(np.min(self.chain.costs + offsets, axis=0)))

    def duals(self):
        return {"p": self.p.copy(), "q": self.q.copy()}


def solve_linear_order(chain, cfg=None):
    """Nested multi-region segmentation; returns ``(u, Diagnostics)``, ``u`` of shape ``(n-1, *grid)``."""
    cfg = cfg or SolverConfig()
    u, _, diag = run_alm(LinearOrderProblem(chain), cfg)
    return u, diag


# -- partial region order -------------------------------------------------------


def _check_partial_costs(costs):
    names = PARTIAL_ORDER_REGIONS[:4]
    rho = [check_field(r, f"rho_{nm}") for r, nm in zip(costs, names)]
    if len(rho) != 4:
        raise InvalidArgumentError("partial order needs four cost maps (m, b, s, B)")
    check_same_grid(*rho, names=[f"rho_{nm}" for nm in names])
    return np.stack(rho)


def partial_order_energy(u, costs, alpha, tv_norm="isotropic"):
    """Energy of region indicators ``u`` ordered ``(m, b, s, B, C)``."""
    u = np.asarray(u, dtype=np.float64)
    rho = _check_partial_costs(costs)
    data = np.sum(u[:4] * rho)
    return float(data + alpha * sum(_tv(ui, tv_norm) for ui in u))


def decode_partial_order(u):
    """Leaf labels 0..3 (``m, b, s, B``) by argmax, plus the matching indicators."""
    leaves = np.argmax(np.asarray(u)[:4], axis=0)
    onehot = np.stack([(leaves == k).astype(np.float64) for k in range(4)])
    indicators = np.concatenate([onehot, onehot[:3].sum(axis=0, keepdims=True)])
    return leaves, indicators


class PartialOrderProblem(DualProblem):
    """Regions ``m, b, s`` inside ``C``; ``C`` and ``B`` partition the grid."""

    def __init__(self, rho, alpha):
        self.rho = rho
        self.alpha = alpha
        shape = rho.shape[1:]
        self.shape = shape
        self.p_C = np.min(rho[:3], axis=0)
        self.p_leaf = np.repeat(self.p_C[None], 3, axis=0)
        self.p_o = np.minimum(rho[3], self.p_C)
        self.p_B = self.p_o.copy()
        self.q = np.zeros((5, len(shape)) + shape)
        self._div = np.zeros((5,) + shape)

    def initial_multiplier(self):
        u = np.empty((5,) + self.shape)
        u[:3] = 1.0 / 6.0
        u[3:] = 0.5
        return u

    def _residuals(self):
        d = self._div
        return np.concatenate(
            [
                d[:3] - self.p_C + self.p_leaf,
                (d[3] - self.p_o + self.p_B)[None],
                (d[4] - self.p_o + self.p_C)[None],
            ]
        )

    def sweep(self, u, cfg):
        c = cfg.c
        step = cfg.step_for(len(self.shape))
        for j in range(5):
            res = self._residuals()[j]
            self.q[j] = project_ball(
                self.q[j] + step * c * gradient(res - u[j] / c), self.alpha, cfg.tv_norm
            )
            self._div[j] = divergence(self.q[j])
        d = self._div
        u_leaf, u_B, u_C = u[:3], u[3], u[4]
        self.p_o = 0.5 * ((d[3] + self.p_B) + (d[4] + self.p_C)) + (1.0 - u_B - u_C) / (2.0 * c)
        self.p_B = np.minimum(self.p_o - d[3] + u_B / c, self.rho[3])
        # p_C is uncapacitated: stationary point of its four residual terms
        leaf_in = np.sum(d[:3] + self.p_leaf, axis=0)
        self.p_C = (u_C - np.sum(u_leaf, axis=0) - c * (d[4] - self.p_o) + c * leaf_in) / (4.0 * c)
        self.p_leaf = np.minimum(self.p_C - d[:3] + u_leaf / c, self.rho[:3])

    def residual(self):
        return self._residuals()

    def primal_energy(self, u, cfg):
        data = np.sum(u[:4] * self.rho)
        return float(data + self.alpha * sum(_tv(ui, cfg.tv_norm) for ui in u))

    def dual_energy(self, cfg):
        d = self._div
        union = d[4] + np.min(self.rho[:3] + d[:3], axis=0)
        return float(np.sum(np.minimum(self.rho[3] + d[3], union)))

    def duals(self):
        return {
            "p_o": self.p_o.copy(),
            "p_B": self.p_B.copy(),
            "p_C": self.p_C.copy(),
            "p_leaf": self.p_leaf.copy(),
            "q": self.q.copy(),
        }


def solve_partial_order(costs, alpha, cfg=None):
    """Partially ordered segmentation.

    `costs` holds the cost maps of ``m, b, s, B``. Returns ``(u, Diagnostics)``
    with ``u`` of shape ``(5, *grid)`` in the order of ``PARTIAL_ORDER_REGIONS``.
    """
    rho = _check_partial_costs(costs)
    alpha = check_nonnegative(alpha, "alpha")
    cfg = cfg or SolverConfig()
    u, _, diag = run_alm(PartialOrderProblem(rho, alpha), cfg)
    return u, diag


# -- co-segmentation -----------------------------------------------------------


class CosegProblem(DualProblem):
    """Two binary max-flows sharing the coupling flow ``|r| <= beta``."""

    def __init__(self, prob1, prob2, beta):
        self.channels = [BinaryFlowProblem(prob1), BinaryFlowProblem(prob2)]
        self.beta = beta
        self.r = np.zeros(prob1.shape)

    def initial_multiplier(self):
        return np.stack([ch.initial_multiplier() for ch in self.channels])

    def _balance(self, k):
        ch = self.channels[k]
        return ch._div - ch.p_s + ch.p_t

    def sweep(self, u, cfg):
        c = cfg.c
        for k, ch in enumerate(self.channels):
            sr = self.r if k == 0 else -self.r
            ch._ascend_p(u[k], cfg, ch._div - ch.p_s + ch.p_t + sr)
            ch._div = divergence(ch.p)
            ch.p_s = np.minimum(ch._div + ch.p_t + sr + (1.0 - u[k]) / c, ch.prob.C_s)
            ch.p_t = np.minimum(ch.p_s - ch._div - sr + u[k] / c, ch.prob.C_t)
        r = (u[0] - u[1]) / (2.0 * c) + 0.5 * (self._balance(1) - self._balance(0))
        self.r = np.clip(r, -self.beta, self.beta)

    def residual(self):
        return np.stack([self._balance(0) + self.r, self._balance(1) - self.r])

    def primal_energy(self, u, cfg):
        e = sum(primal_energy(u[k], ch.prob, cfg.tv_norm) for k, ch in enumerate(self.channels))
        return e + self.beta * float(np.sum(np.abs(u[0] - u[1])))

    def dual_energy(self, cfg):
        total = 0.0
        for k, ch in enumerate(self.channels):
            sr = self.r if k == 0 else -self.r
            total += np.sum(np.minimum(ch.prob.C_s, ch.prob.C_t + ch._div + sr))
        return float(total)

    def duals(self):
        out = {"r": self.r.copy()}
        for k, ch in enumerate(self.channels):
            out.update({f"{name}{k + 1}": v for name, v in ch.duals().items()})
        return out


def solve_coseg(prob1, prob2, beta, cfg=None):
    """Joint segmentation of two co-registered images; returns ``(u1, u2, Diagnostics)``."""
    check_same_grid(prob1.C_s, prob2.C_s, names=["problem 1", "problem 2"])
    beta = check_nonnegative(beta, "beta")
    cfg = cfg or SolverConfig()
    if beta == 0:
        # no coupling: each channel runs (and stops) on its own
        u1, _, d1 = solve(prob1, cfg)
        u2, _, d2 = solve(prob2, cfg)
        diag = Diagnostics.concatenate([d1, d2])
        diag.extra = {"r": np.zeros(prob1.shape)}
        return u1, u2, diag
    problem = CosegProblem(prob1, prob2, beta)
    u, duals, diag = run_alm(problem, cfg)
    diag.extra = {"r": duals["r"]}
    return u[0], u[1], diag
