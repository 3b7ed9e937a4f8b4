import numpy as np
import pytest

from cmfkit.alm import SolverConfig
from cmfkit.denoise import denoise, tv_energy
from cmfkit.exceptions import InvalidArgumentError
from cmfkit.oracles import reference_denoise

TIGHT = SolverConfig(max_iters=5000, tol=1e-9)


def test_alpha_zero_returns_input(rng):
    f = rng.random((6, 6))
    u, _ = denoise(f, 0.0)
    np.testing.assert_allclose(u, f, atol=1e-8)


def test_constant_image_is_fixed():
    u, _ = denoise(np.full((5, 7), 7.0), 0.8)
    np.testing.assert_allclose(u, 7.0, atol=1e-6)


def test_two_pixel_shrinkage():
    # minimizing (s^2 + (1 - s)^2)/2 + 0.25 (1 - 2s) gives s = 0.25
    u, _ = denoise(np.array([0.0, 1.0]), 0.25, cfg=TIGHT)
    np.testing.assert_allclose(u, [0.25, 0.75], atol=1e-4)


def test_l1_two_pixel():
    # a unit jump costs alpha; flattening (0, 1, 1) to 1 costs 1 in fidelity
    u, _ = denoise(np.array([0.0, 1.0]), 0.3, "l1", cfg=TIGHT)
    np.testing.assert_allclose(u, [0.0, 1.0], atol=1e-3)
    u, _ = denoise(np.array([0.0, 1.0, 1.0]), 1.5, "l1", cfg=TIGHT)
    np.testing.assert_allclose(u, [1.0, 1.0, 1.0], atol=1e-3)


def test_tv_energy_examples():
    assert tv_energy(np.full(3, 2.0), np.full(3, 2.0), 1.0) == 0.0
    assert tv_energy(np.array([0.0, 1.0]), np.zeros(2), 1.0, "l1", "anisotropic") == 2.0


def test_tv_energy_at_f_is_alpha_tv(rng):
    from cmfkit.grid import total_variation

    f = rng.random((5, 3))
    assert tv_energy(f, f, 0.4) == pytest.approx(0.4 * total_variation(f))


def test_negative_alpha_and_bad_fidelity():
    with pytest.raises(InvalidArgumentError):
        denoise(np.zeros(3), -1.0)
    with pytest.raises(InvalidArgumentError):
        denoise(np.zeros(3), 1.0, fidelity="huber")
    with pytest.raises(InvalidArgumentError):
        tv_energy(np.zeros(3), np.zeros(4), 1.0)


@pytest.mark.parametrize("fidelity", ["l2", "l1"])
def test_feasibility_and_descent(rng, fidelity):
    f = rng.random((12, 12))
    u, diag, duals = denoise(f, 0.2, fidelity, SolverConfig(max_iters=5000, tol=1e-10), return_duals=True)
    assert np.max(np.linalg.norm(duals["p"], axis=0)) <= 0.2 + 1e-9
    if fidelity == "l1":
        assert np.max(np.abs(duals["q"])) <= 1 + 1e-9
    assert tv_energy(u, f, 0.2, fidelity) <= tv_energy(f, f, 0.2, fidelity) + 1e-8


def test_maximum_principle(rng):
    for _ in range(5):
        f = rng.random((10, 10))
        u, _ = denoise(f, 0.15)
        assert f.min() - 1e-3 <= u.min() and u.max() <= f.max() + 1e-3


@pytest.mark.parametrize("tv_norm", ["isotropic", "anisotropic"])
def test_matches_reference(rng, tv_norm):
    f = rng.random((8, 8))
    u, _ = denoise(f, 0.2, cfg=SolverConfig(max_iters=5000, tol=1e-8, tv_norm=tv_norm))
    ref = reference_denoise(f, 0.2, "l2", tv_norm=tv_norm)
    assert np.sqrt(np.mean((u - ref) ** 2)) <= 1e-3


def test_l1_matches_lp_reference(rng):
    f = rng.random((6, 6))
    u, _ = denoise(f, 0.3, "l1", cfg=SolverConfig(max_iters=20000, tol=1e-9, tv_norm="anisotropic"))
    ref = reference_denoise(f, 0.3, "l1")
    e_u = tv_energy(u, f, 0.3, "l1", "anisotropic")
    e_ref = tv_energy(ref, f, 0.3, "l1", "anisotropic")
    assert e_u == pytest.approx(e_ref, rel=1e-3)


def test_gap_closes_3d(rng):
    f = rng.random((6, 6, 6))
    _, diag = denoise(f, 0.1, cfg=SolverConfig(max_iters=3000, tol=1e-8))
    assert diag.gap <= 1e-3 * abs(diag.primal[-1])
