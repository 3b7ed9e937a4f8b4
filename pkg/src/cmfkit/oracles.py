"""Exact reference solutions at desk scale.

All oracles use the anisotropic TV, which graph cuts and enumeration can
represent exactly: every pair of grid neighbours that disagree costs ``alpha``.
"""

from collections import deque
from fractions import Fraction
import itertools

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, hstack, identity, vstack

from ._validation import check_field, check_nonnegative
from .denoise import _check_fidelity
from .exceptions import InvalidArgumentError
from .alm import project_ball
from .grid import divergence, gradient

__all__ = [
    "max_flow",
    "discrete_mincut",
    "binary_energy",
    "exhaustive_binary",
    "exhaustive_potts",
    "exhaustive_partial_order",
    "reference_denoise",
    "neighbor_pairs",
]

MAX_MINCUT_VOXELS = 64 * 64
MAX_ENUMERATION = 10**7
MAX_DENOISE_VOXELS = 16 * 16


def neighbor_pairs(shape):
    """Index pairs ``(a, b)`` of axis-aligned grid neighbours (flat C order)."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []
    for axis in range(len(shape)):
        a = np.take(idx, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, shape[axis]), axis=axis).ravel()
        pairs.append(np.stack([a, b], axis=1))
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)


def max_flow(n_nodes, edges, source, sink):
    """Shortest-augmenting-path (Edmonds-Karp) maximum flow.

    `edges` is a list of ``(tail, head, capacity)``. Capacities may be any
    ordered numeric type; :class:`fractions.Fraction` gives exact results.

    Returns ``(flow_value, source_side)`` where `source_side` is a boolean array
    marking the nodes reachable from `source` in the final residual graph.
    """
    head, cap, adj = [], [], [[] for _ in range(n_nodes)]
    for a, b, w in edges:
        adj[a].append(len(head))
        head.append(b)
        cap.append(w)
        adj[b].append(len(head))
        head.append(a)
        cap.append(0 * w)
    zero = 0 * edges[0][2] if edges else 0
    value = zero
    while True:
        parent_edge = [-1] * n_nodes
        seen = [False] * n_nodes
        seen[source] = True
        queue = deque([source])
        while queue and not seen[sink]:
            x = queue.popleft()
            for e in adj[x]:
                y = head[e]
                if not seen[y] and cap[e] > 0:
                    seen[y] = True
                    parent_edge[y] = e
                    queue.append(y)
        if not seen[sink]:
            return value, np.array(seen)
        bottleneck = None
        y = sink
        while y != source:
            e = parent_edge[y]
            bottleneck = cap[e] if bottleneck is None or cap[e] < bottleneck else bottleneck
            y = head[e ^ 1]
        y = sink
        while y != source:
            e = parent_edge[y]
            cap[e] -= bottleneck
            cap[e ^ 1] += bottleneck
            y = head[e ^ 1]
        value += bottleneck


def binary_energy(labels, C_s, C_t, alpha):
    """Anisotropic binary energy ``sum (1-L) C_s + L C_t + alpha * #disagreeing pairs``."""
    L = np.asarray(labels, dtype=np.float64)
    pairs = neighbor_pairs(L.shape)
    flat = L.ravel()
    cut = np.sum(flat[pairs[:, 0]] != flat[pairs[:, 1]])
    return float(np.sum((1 - L) * C_s + L * C_t) + alpha * cut)


def discrete_mincut(prob, exact=True, return_flow=False):
    """Globally optimal binary labeling of a :class:`~cmfkit.maxflow.BinarySegProblem`.

    Voxels on the source side of the minimum cut get label 1 and pay ``C_t``;
    the others pay ``C_s``. Neighbour edges carry capacity ``alpha``.

    Returns ``(labels, energy)`` with a float energy. With `return_flow` it
    returns ``(labels, energy, flow, cut)``: the max-flow value and the cut
    capacity of `labels` in the capacity number type, so with `exact`
    (rational capacities) ``flow == cut`` can be checked exactly.
    """
    C_s, C_t = prob.C_s, prob.C_t
    shape = C_s.shape
    n = C_s.size
    if n > MAX_MINCUT_VOXELS:
        raise InvalidArgumentError(f"discrete_mincut supports at most {MAX_MINCUT_VOXELS} voxels")
    num = Fraction if exact else float
    # terminal costs must be nonnegative; a per-voxel shift changes every labeling equally
    shift = np.minimum(np.minimum(C_s, C_t), 0.0).ravel()
    cs = C_s.ravel() - shift
    ct = C_t.ravel() - shift
    offset = sum((num(float(v)) for v in shift), num(0))
    source, sink = n, n + 1
    edges = []
    for x in range(n):
        edges.append((source, x, num(float(cs[x]))))
        edges.append((x, sink, num(float(ct[x]))))
    a = num(float(prob.alpha))
    for i, j in neighbor_pairs(shape):
        edges.append((int(i), int(j), a))
        edges.append((int(j), int(i), a))
    flow, side = max_flow(n + 2, edges, source, sink)
    labels = side[:n].reshape(shape).astype(np.float64)
    # cut capacity of the labeling, accumulated in the same number type
    lab = side[:n]
    energy = offset
    for x in range(n):
        energy += num(float(ct[x])) if lab[x] else num(float(cs[x]))
    for i, j in neighbor_pairs(shape):
        if lab[i] != lab[j]:
            energy += a
    flow = flow + offset
    if return_flow:
        return labels, float(energy), flow, energy
    return labels, float(energy)


def _enumerate(n_labels, n_voxels, chunk=1 << 16):
    total = n_labels**n_voxels
    if total > MAX_ENUMERATION:
        raise InvalidArgumentError(
            f"enumeration of {n_labels}^{n_voxels} labelings exceeds {MAX_ENUMERATION}"
        )
    it = itertools.product(range(n_labels), repeat=n_voxels)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp)


def exhaustive_binary(C_s, C_t, alpha):
    """Minimum anisotropic binary energy by enumerating all ``2^N`` labelings."""
    C_s = check_field(C_s, "C_s")
    C_t = check_field(C_t, "C_t")
    pairs = neighbor_pairs(C_s.shape)
    best, best_lab = np.inf, None
    for block in _enumerate(2, C_s.size):
        data = block @ C_t.ravel() + (1 - block) @ C_s.ravel()
        cuts = np.sum(block[:, pairs[:, 0]] != block[:, pairs[:, 1]], axis=1)
        e = data + alpha * cuts
        k = int(np.argmin(e))
        if e[k] < best:
            best, best_lab = float(e[k]), block[k]
    return best_lab.reshape(C_s.shape).astype(np.float64), best


def exhaustive_potts(prob):
    """Exact minimum of the Potts energy (labels 1..n) by full enumeration."""
    rho = np.stack([np.asarray(r, dtype=np.float64) for r in prob.costs])
    n = rho.shape[0]
    shape = rho.shape[1:]
    flat = rho.reshape(n, -1)
    pairs = neighbor_pairs(shape)
    vox = np.arange(flat.shape[1])
    best, best_lab = np.inf, None
    for block in _enumerate(n, flat.shape[1]):
        data = flat[block, vox].sum(axis=1)
        # a disagreeing pair is a jump of two indicator functions
        cuts = np.sum(block[:, pairs[:, 0]] != block[:, pairs[:, 1]], axis=1)
        e = data + prob.alpha * 2.0 * cuts
        k = int(np.argmin(e))
        if e[k] < best:
            best, best_lab = float(e[k]), block[k]
    return best_lab.reshape(shape) + 1, best


def exhaustive_partial_order(costs, alpha):
    """Exact minimum of the partial-order energy over leaf labels ``m, b, s, B``.

    `costs` is a sequence of the four leaf cost maps in that order. Each
    disagreeing pair costs ``2 alpha`` for the leaf indicators, plus ``2 alpha``
    more when exactly one side is background (the cardiac union ``C`` jumps too).

    Returns ``(labels, energy)`` with labels 0..3 indexing `costs`.
    """
    rho = np.stack([check_field(r, "cost") for r in costs])
    if rho.shape[0] != 4:
        raise InvalidArgumentError("partial-order enumeration needs four leaf cost maps")
    shape = rho.shape[1:]
    flat = rho.reshape(4, -1)
    pairs = neighbor_pairs(shape)
    vox = np.arange(flat.shape[1])
    best, best_lab = np.inf, None
    for block in _enumerate(4, flat.shape[1]):
        data = flat[block, vox].sum(axis=1)
        la, lb = block[:, pairs[:, 0]], block[:, pairs[:, 1]]
        leaf_cuts = np.sum(la != lb, axis=1)
        union_cuts = np.sum((la == 3) != (lb == 3), axis=1)
        e = data + alpha * 2.0 * (leaf_cuts + union_cuts)
        k = int(np.argmin(e))
        if e[k] < best:
            best, best_lab = float(e[k]), block[k]
    return best_lab.reshape(shape), best


def _reference_l2(f, alpha, tol, max_iters, tv_norm):
    # accelerated projected gradient on min_{|p_i| <= alpha} ||f - Div p||^2 / 2;
    # u = f - Div p. The step 1/(4d) is the inverse Lipschitz bound of Div^T Div.
    ndim = f.ndim
    step = 1.0 / (4.0 * ndim)
    p = np.zeros((ndim,) + f.shape)
    y = p.copy()
    t = 1.0
    u_prev = f.copy()
    for _ in range(max_iters):
        grad = gradient(divergence(y) - f)
        p_new = project_ball(y + step * grad, alpha, tv_norm)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
        u = f - divergence(p)
        if np.max(np.abs(u - u_prev)) < tol:
            # restart-free FISTA can stall on plateaus; confirm with a plain step
            grad = gradient(divergence(p) - f)
            p_chk = project_ball(p + step * grad, alpha, tv_norm)
            if np.max(np.abs(divergence(p_chk) - divergence(p))) < tol:
                return u
        u_prev = u
    return u


def _reference_l1(f, alpha):
    # LP in (u, s, t): min sum s + alpha sum t, |u - f| <= s, |grad_k u| <= t_k
    n = f.size
    pairs = neighbor_pairs(f.shape)
    m = len(pairs)
    rows = np.repeat(np.arange(m), 2)
    cols = pairs.ravel()
    vals = np.tile([-1.0, 1.0], m)
    G = coo_matrix((vals, (rows, cols)), shape=(m, n))
    I_n = identity(n, format="coo")
    I_m = identity(m, format="coo")
    Z_nm = coo_matrix((n, m))
    Z_mn = coo_matrix((m, n))
    A = vstack(
        [
            hstack([I_n, -I_n, Z_nm]),
            hstack([-I_n, -I_n, Z_nm]),
            hstack([G, Z_mn, -I_m]),
            hstack([-G, Z_mn, -I_m]),
        ]
    ).tocsr()
    b = np.concatenate([f.ravel(), -f.ravel(), np.zeros(2 * m)])
    cost = np.concatenate([np.zeros(n), np.ones(n), alpha * np.ones(m)])
    bounds = [(None, None)] * n + [(0, None)] * (n + m)
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if not res.success:
        raise ArithmeticError(f"reference LP failed: {res.message}")
    return res.x[:n].reshape(f.shape)


def reference_denoise(f, alpha, fidelity="l2", tol=1e-11, max_iters=500_000, tv_norm="anisotropic"):
    """High-precision TV denoising, independent of the ALM solver.

    L2: accelerated projected gradient on the constrained dual quadratic
    program, iterated until the image changes by less than `tol`. Anisotropic
    by default; ``tv_norm="isotropic"`` projects onto discs instead of boxes.
    L1: exact linear program (HiGHS), anisotropic only.
    """
    f = check_field(f, "f")
    alpha = check_nonnegative(alpha, "alpha")
    fidelity = _check_fidelity(fidelity)
    if f.size > MAX_DENOISE_VOXELS:
        raise InvalidArgumentError(f"reference_denoise supports at most {MAX_DENOISE_VOXELS} voxels")
    if alpha == 0:
        return f.copy()
    if fidelity == "l2":
        return _reference_l2(f, alpha, tol, max_iters, tv_norm)
    if tv_norm != "anisotropic":
        raise InvalidArgumentError("the L1 reference supports anisotropic TV only")
    return _reference_l1(f, alpha)
