"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest

from cmfkit.alm import QuadraticSumProblem, SolverConfig, run_alm
from cmfkit.denoise import denoise
from cmfkit.grid import divergence, gradient
from cmfkit.maxflow import BinarySegProblem, primal_energy, solve, threshold
from cmfkit.oracles import (
    discrete_mincut,
    exhaustive_binary,
    exhaustive_partial_order,
    exhaustive_potts,
    reference_denoise,
)
from cmfkit.potts import PottsProblem, argmax_label, potts_energy
from cmfkit.potts import solve as solve_potts
from cmfkit.priors import (
    OrderChain,
    StarField,
    decode_partial_order,
    linear_order_energy,
    partial_order_energy,
    ray_monotone,
    solve_coseg,
    solve_linear_order,
    solve_partial_order,
    solve_star_prior,
    solve_volume_prior,
    star_vector_field,
)
from cmfkit.registration import (
    RegParams,
    linearize,
    register_pair,
    register_sequence,
    register_volume_preserving,
    sad,
    temporal_variation,
    volume_change,
)

RESULTS = {}


class Criterion:
    """Collects named checks; ``finish`` prints one line and returns the verdict."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.failed = []
        self.notes = []

    def check(self, ok, what):
        ok = bool(ok)
        if not ok:
            self.failed.append(what)
        return ok

    def note(self, text):
        self.notes.append(text)

    def finish(self):
        verdict = "FAIL" if self.failed else "PASS"
        detail = "; ".join(self.notes)
        if self.failed:
            detail = "failed: " + ", ".join(self.failed) + (f" | {detail}" if detail else "")
        line = f"[{verdict}] criterion {self.number:2d} {self.title}: {detail}"
        RESULTS[self.number] = line
        print(line)
        assert not self.failed, line


def _mesh(n):
    return np.mgrid[:n, :n].astype(float)


def _blob(n, cy, cx, s):
    yy, xx = _mesh(n)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))


def _soft_disk(n, radius):
    yy, xx = _mesh(n)
    r = np.hypot(yy - (n - 1) / 2, xx - (n - 1) / 2)
    return 1 / (1 + np.exp((r - radius) / 1.5))


def test_c01_adjointness():
    crit = Criterion(1, "gradient/divergence adjointness")
    rng = np.random.default_rng(1)
    worst = 0.0
    start = time.perf_counter()
    for k in range(100):
        d = 1 + k % 3
        shape = tuple(rng.integers(1, 9, size=d))
        u = rng.standard_normal(shape)
        p = rng.standard_normal((d,) + shape)
        lhs = np.sum(gradient(u) * p)
        rhs = -np.sum(u * divergence(p))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    elapsed = time.perf_counter() - start
    crit.check(worst <= 1e-10, "relative error <= 1e-10")
    crit.check(elapsed < 1.0, "runtime < 1 s")
    crit.note(f"worst rel err {worst:.1e}, {elapsed:.3f} s")
    crit.finish()


def test_c02_alm_sanity():
    crit = Criterion(2, "ALM on the two-term quadratic")
    a, b = -0.4, 1.7
    u, _, diag = run_alm(QuadraticSumProblem([a, b]), SolverConfig(c=0.3, max_iters=500, tol=1e-12))
    err = abs(u[0] - (a + b) / 2)
    crit.check(err <= 1e-6, "|u - (a+b)/2| <= 1e-6")
    crit.check(diag.iterations <= 500, "<= 500 iterations")
    crit.note(f"error {err:.1e} after {diag.iterations} iterations")
    crit.finish()


def test_c03_tv_denoising():
    crit = Criterion(3, "TV denoising")
    start = time.perf_counter()
    u, _ = denoise(np.array([0.0, 1.0]), 0.25, cfg=SolverConfig(tol=1e-8, max_iters=5000))
    two = np.abs(u - [0.25, 0.75]).max()
    crit.check(two <= 1e-4, "two-pixel closed form")
    rng = np.random.default_rng(3)
    worst_rms = 0.0
    for _ in range(10):
        f = rng.random((8, 8))
        alpha = rng.uniform(0.05, 0.3)
        u, _ = denoise(f, alpha, cfg=SolverConfig(max_iters=5000, tol=1e-8, tv_norm="anisotropic"))
        ref = reference_denoise(f, alpha, "l2")
        worst_rms = max(worst_rms, float(np.sqrt(np.mean((u - ref) ** 2))))
    crit.check(worst_rms <= 1e-3, "reference RMS <= 1e-3")
    yy, xx = _mesh(32)
    clean = ((yy > 8) & (yy < 24) & (xx > 6) & (xx < 20)).astype(float)
    f = clean + 0.1 * rng.standard_normal(clean.shape)
    _, diag = denoise(f, 0.1, cfg=SolverConfig(max_iters=2000, tol=1e-7))
    rel_gap = diag.gap / abs(diag.primal[-1])
    crit.check(rel_gap <= 1e-3 and diag.iterations <= 2000, "32x32 relative gap <= 1e-3")
    elapsed = time.perf_counter() - start
    crit.check(elapsed < 10.0, "runtime < 10 s")
    crit.note(f"two-pixel err {two:.1e}, worst RMS {worst_rms:.1e}, gap {rel_gap:.1e} "
              f"({diag.iterations} it), {elapsed:.1f} s")
    crit.finish()


def test_c04_binary_optimality():
    crit = Criterion(4, "binary max-flow global optimality")
    rng = np.random.default_rng(4)
    cfg = SolverConfig(tv_norm="anisotropic", max_iters=5000, tol=1e-6)
    worst_ratio, worst_spread = 0.0, 0.0
    start = time.perf_counter()
    for _ in range(20):
        prob = BinarySegProblem(rng.random((8, 8)), rng.random((8, 8)), 0.3)
        u, _, _ = solve(prob, cfg)
        _, best = discrete_mincut(prob)
        e = primal_energy(threshold(u), prob, "anisotropic")
        worst_ratio = max(worst_ratio, (e - best) / best)
        energies = [primal_energy(threshold(u, b), prob, "anisotropic") for b in np.linspace(0.1, 0.9, 9)]
        worst_spread = max(worst_spread, max(energies) - min(energies))
    elapsed = time.perf_counter() - start
    crit.check(worst_ratio <= 0.005, "within 0.5% of min-cut")
    crit.check(worst_spread <= 1e-3 * 64, "threshold stability")
    crit.check(elapsed < 30.0, "runtime < 30 s")
    crit.note(f"worst excess {100 * worst_ratio:.3f}%, spread {worst_spread:.1e}, {elapsed:.1f} s")
    crit.finish()


def test_c05_potts():
    crit = Criterion(5, "Potts")
    rng = np.random.default_rng(5)
    cfg = SolverConfig(tv_norm="anisotropic", max_iters=5000, tol=1e-6)
    worst = 0.0
    for shape, n in [((2, 2), 3), ((1, 3), 2)]:
        for _ in range(5):
            prob = PottsProblem(rng.random((n,) + shape), rng.uniform(0.1, 0.5))
            u, _ = solve_potts(prob, cfg)
            _, best = exhaustive_potts(prob)
            e = potts_energy(argmax_label(u), prob, "anisotropic")
            worst = max(worst, (e - best) / best)
    crit.check(worst <= 0.01, "exhaustive agreement within 1%")
    rho = rng.random((2, 12, 12))
    u, _ = solve_potts(PottsProblem(rho, 0.3), cfg)
    bprob = BinarySegProblem(rho[0], rho[1], 0.6)
    ub, _, _ = solve(bprob, cfg)
    e_potts = potts_energy(argmax_label(u), PottsProblem(rho, 0.3), "anisotropic")
    e_bin = primal_energy(threshold(ub), bprob, "anisotropic")
    rel = abs(e_potts - e_bin) / e_bin
    crit.check(rel <= 0.01, "n=2 binary equivalence within 1%")
    u, _ = solve_potts(PottsProblem(rng.random((4, 16, 16)), 0.2), SolverConfig(max_iters=2000))
    simplex = np.abs(u.sum(axis=0) - 1).max()
    crit.check(simplex <= 0.05, "simplex residual <= 0.05")
    crit.note(f"worst excess {100 * worst:.2f}%, n=2 diff {100 * rel:.2f}%, simplex residual {simplex:.1e}")
    crit.finish()


def _noisy_disk_problem(rng, n=16, radius=4.0):
    yy, xx = _mesh(n)
    disk = ((yy - (n - 1) / 2) ** 2 + (xx - (n - 1) / 2) ** 2 < radius**2).astype(float)
    noisy = np.clip(disk + 0.3 * rng.standard_normal(disk.shape), 0, 1)
    return BinarySegProblem(noisy**2, (noisy - 1) ** 2, 0.2)


def test_c06_volume_prior():
    crit = Criterion(6, "volume prior")
    rng = np.random.default_rng(6)
    f = rng.random((16, 16))
    prob = BinarySegProblem(f, 1 - f, 0.3)
    cfg = SolverConfig(max_iters=1000)
    u, _, _ = solve(prob, cfg)
    uv, _ = solve_volume_prior(prob, 0.0, 40.0, cfg)
    crit.check(np.array_equal(u, uv), "gamma=0 exact")
    z = np.full((8, 8), 0.5)
    ue, _ = solve_volume_prior(BinarySegProblem(z, z, 0.0), 1e3, 0.0, SolverConfig(max_iters=3000))
    crit.check(not threshold(ue).any(), "V=0 empty mask")
    prob = _noisy_disk_problem(rng)
    # both runs must be converged for "same mask" to be meaningful
    cfg = SolverConfig(max_iters=20000, tol=1e-7)
    mask = threshold(solve(prob, cfg)[0])
    um, _ = solve_volume_prior(prob, 10.0, mask.sum(), cfg)
    crit.check(np.array_equal(threshold(um), mask), "measured-volume invariance")
    crit.note(f"measured volume {int(mask.sum())} voxels")
    crit.finish()


def _annulus(n, center, r_in, r_out, alpha):
    yy, xx = _mesh(n)
    r = np.hypot(yy - center[0], xx - center[1])
    ring = ((r > r_in) & (r < r_out)).astype(float)
    return BinarySegProblem(ring, 1 - ring, alpha)


def test_c07_star_prior():
    crit = Criterion(7, "star-shape prior")
    suite = [(32, (15.5, 15.5), 6, 11, a) for a in (0.05, 0.1, 0.3)]
    suite += [(32, (14.0, 17.0), 5, 10, 0.1), (40, (19.5, 19.5), 8, 14, 0.1)]
    monotone = 0
    for n, center, r_in, r_out, alpha in suite:
        prob = _annulus(n, center, r_in, r_out, alpha)
        u, _ = solve_star_prior(prob, star_vector_field(center, prob.shape), SolverConfig(max_iters=3000))
        ok = ray_monotone(threshold(u), center, n_rays=64)
        monotone += ok
        crit.check(ok, f"monotone on annulus n={n} alpha={alpha} centre={center}")
    rng = np.random.default_rng(7)
    f = rng.random((16, 16))
    prob = BinarySegProblem(f, 1 - f, 0.3)
    u, _, _ = solve(prob)
    u0, _ = solve_star_prior(prob, StarField((0, 0), np.zeros((2, 16, 16))))
    crit.check(np.array_equal(u, u0), "e=0 reduction exact")
    crit.note(f"{monotone}/{len(suite)} annuli ray-monotone (64 rays)")
    crit.finish()


def test_c08_linear_order():
    crit = Criterion(8, "linear region order")
    rng = np.random.default_rng(8)
    nested = 0
    cases = 0
    for n in (2, 3, 4):
        for _ in range(3):
            chain = OrderChain(rng.random((n, 12, 12)), rng.uniform(0.05, 0.4, size=n - 1))
            u, _ = solve_linear_order(chain, SolverConfig(max_iters=3000))
            masks = threshold(u)
            ok = bool(np.all(masks[1:] <= masks[:-1]))
            nested += ok
            cases += 1
    crit.check(nested == cases, "nesting on every case")
    chain = OrderChain(np.array([5.0, 1.0, 3.0]).reshape(3, 1, 1), [0.0, 0.0])
    u, _ = solve_linear_order(chain)
    e = linear_order_energy(threshold(u), chain)
    crit.check(abs(e - 1.0) <= 1e-9, "single-voxel energy 1")
    crit.note(f"{nested}/{cases} nested, single-voxel energy {e:g}")
    crit.finish()


def test_c09_partial_order():
    crit = Criterion(9, "partial region order")
    worst, worst_res = 0.0, 0.0
    for seed in range(10):
        rho = np.random.default_rng(900 + seed).random((4, 2, 2))
        u, _ = solve_partial_order(rho, 0.3, SolverConfig(max_iters=5000))
        _, ind = decode_partial_order(u)
        _, best = exhaustive_partial_order(rho, 0.3)
        worst = max(worst, (partial_order_energy(ind, rho, 0.3) - best) / best)
        res = max(np.abs(u[3] + u[4] - 1).max(), np.abs(u[:3].sum(axis=0) - u[4]).max())
        worst_res = max(worst_res, res)
    crit.check(worst_res <= 0.05, "region-sum residuals <= 0.05")
    crit.check(worst <= 0.01, "enumeration agreement within 1%")
    crit.note(f"worst excess {100 * worst:.2f}%, worst residual {worst_res:.1e}")
    crit.finish()


def test_c10_coseg():
    crit = Criterion(10, "co-segmentation")
    rng = np.random.default_rng(10)
    p1 = _noisy_disk_problem(rng)
    p2 = BinarySegProblem(rng.random((16, 16)), rng.random((16, 16)), 0.2)
    cfg = SolverConfig(max_iters=500)
    u1, u2, _ = solve_coseg(p1, p2, 0.0, cfg)
    v1, v2 = solve(p1, cfg)[0], solve(p2, cfg)[0]
    crit.check(np.array_equal(threshold(u1), threshold(v1)) and np.array_equal(threshold(u2), threshold(v2)),
               "beta=0 decoupling exact")
    a, b, _ = solve_coseg(p1, p1, 0.5)
    sym = np.abs(a - b).max()
    crit.check(sym <= 1e-3, "symmetric case")
    cfg = SolverConfig(max_iters=3000)
    u1, _, _ = solve_coseg(p1, p2, 1e3, cfg)
    summed = BinarySegProblem(p1.C_s + p2.C_s, p1.C_t + p2.C_t, 0.4)
    us, _, _ = solve(summed, cfg)
    e_co = primal_energy(threshold(u1), summed)
    e_sum = primal_energy(threshold(us), summed)
    rel = abs(e_co - e_sum) / abs(e_sum)
    crit.check(rel <= 0.01, "large-beta summed-cost equivalence")
    crit.note(f"symmetry {sym:.1e}, large-beta diff {100 * rel:.2f}%")
    crit.finish()


def test_c11_registration():
    crit = Criterion(11, "registration")
    im = _blob(64, 32, 32, 6)
    u, _ = register_pair(im, im)
    ident = np.abs(u).max()
    crit.check(ident <= 0.1, "identity |u| <= 0.1")
    fixed, moving = _blob(128, 64, 64, 10), _blob(128, 67, 62, 10)
    start = time.perf_counter()
    u, diag = register_pair(moving, fixed)
    elapsed = time.perf_counter() - start
    support = fixed > 0.1
    epe = float(np.hypot(u[0] - 3, u[1] + 2)[support].mean())
    crit.check(epe < 0.5, "blob EPE < 0.5")
    crit.check(elapsed < 30.0, "128^2 runtime < 30 s")
    rng = np.random.default_rng(11)
    suite = [
        (moving, fixed, diag),
        (im, im, None),
        (_soft_disk(48, 14), _soft_disk(48, 11), None),
        (_blob(48, 24, 24, 5) + 0.05 * rng.standard_normal((48, 48)), _blob(48, 24, 24, 5), None),
        (_blob(48, 22, 27, 6), _blob(48, 24, 24, 6), None),
    ]
    non_increase = 0
    for mov, fix, d in suite:
        d = d or register_pair(mov, fix)[1]
        non_increase += d.extra["sad_after"] <= d.extra["sad_before"]
    crit.check(non_increase == len(suite), "SAD non-increase")
    yy, xx = _mesh(48)
    mov = np.sin(xx / 6) * np.cos(yy / 7) + 0.3 * np.sin((xx + yy) / 9)
    fix = np.sin((xx - 1.3) / 6) * np.cos((yy + 0.7) / 7) + 0.3 * np.sin((xx + yy) / 9)
    window = np.sin(np.pi * yy / 47) ** 2 * np.sin(np.pi * xx / 47) ** 2
    I0, grad = linearize(mov, fix)
    from scipy.ndimage import gaussian_filter

    worst = 0.0
    for seed in range(5):
        noise = np.random.default_rng(1100 + seed).standard_normal((2, 48, 48))
        h = np.stack([gaussian_filter(c, 3) for c in noise]) * window
        predicted = np.sum(np.sign(I0) * np.sum(grad * h, axis=0))
        eps = 1e-3
        fd = (sad(mov, fix, eps * h) - sad(mov, fix, -eps * h)) / (2 * eps)
        worst = max(worst, abs(predicted - fd) / abs(fd))
    crit.check(worst <= 0.05, "data gradient vs finite differences within 5%")
    crit.note(f"identity {ident:.1e}, EPE {epe:.3f} in {elapsed:.1f} s, "
              f"SAD non-increase {non_increase}/{len(suite)}, FD rel err {worst:.1e}")
    crit.finish()


def test_c12_volume_preserving():
    crit = Criterion(12, "volume-preserving registration")
    moving, fixed = _soft_disk(64, 15), _soft_disk(64, 12)
    mask = (np.hypot(*(_mesh(64) - 31.5)) < 12).astype(float)
    u_pair, _ = register_pair(moving, fixed)
    u0, free = register_volume_preserving(moving, fixed, mask, RegParams(gamma=0.0))
    crit.check(np.array_equal(u_pair, u0), "gamma=0 reduction exact")
    _, held = register_volume_preserving(moving, fixed, mask, RegParams(gamma=50.0))
    dv0, dv = abs(free.extra["delta_v"]), abs(held.extra["delta_v"])
    crit.check(dv * 5 <= dv0, "|dV| reduced >= 5x")
    interior = np.zeros((64, 64))
    interior[10:50, 12:40] = 1
    shift = np.stack([np.full((64, 64), 2.3), np.full((64, 64), -0.8)])
    dv_t = abs(volume_change(shift, interior))
    crit.check(dv_t <= 1e-10, "translation volume change <= 1e-10")
    crit.note(f"|dV| {dv0:.3g} -> {dv:.3g}, translation {dv_t:.1e}")
    crit.finish()


def test_c13_spatiotemporal():
    crit = Criterion(13, "spatio-temporal registration")
    rng = np.random.default_rng(13)
    frames = [_blob(64, 32 - 1.0 * k, 32 + 0.5 * k, 6) + 0.05 * rng.standard_normal((64, 64))
              for k in range(4)]
    us0, _ = register_sequence(frames, RegParams(gamma=0.0))
    diff = max(np.abs(u - register_pair(frames[k], frames[k + 1])[0]).max() for k, u in enumerate(us0))
    crit.check(diff <= 1e-3, "gamma=0 equals independent pairs")
    us, _ = register_sequence(frames, RegParams(gamma=0.2))
    tv0, tv = temporal_variation(us0), temporal_variation(us)
    crit.check(tv < tv0, "temporal variation strictly reduced")
    crit.note(f"pair diff {diff:.1e}, temporal variation {tv0:.4g} -> {tv:.4g}")
    crit.finish()


def test_c14_oracles():
    crit = Criterion(14, "oracles")
    rng = np.random.default_rng(14)
    cases, agree, exact = 0, 0, 0
    for shape in [(1, 2), (1, 4), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4)]:
        for _ in range(4):
            prob = BinarySegProblem(rng.random(shape), rng.random(shape), rng.uniform(0, 0.6))
            labels, energy, flow, cut = discrete_mincut(prob, return_flow=True)
            _, best = exhaustive_binary(prob.C_s, prob.C_t, prob.alpha)
            cases += 1
            agree += abs(energy - best) <= 1e-12 * max(1.0, best)
            exact += flow == cut
    crit.check(agree == cases, "min-cut equals enumeration")
    crit.check(exact == cases, "flow value equals cut energy exactly")
    crit.note(f"{agree}/{cases} agree, {exact}/{cases} exact flow = cut")
    crit.finish()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
