import numpy as np
import pytest

from cmfkit.alm import SolverConfig
from cmfkit.exceptions import InvalidArgumentError
from cmfkit.maxflow import BinarySegProblem, primal_energy, threshold
from cmfkit.maxflow import solve as solve_binary
from cmfkit.oracles import exhaustive_potts
from cmfkit.potts import PottsProblem, argmax_label, potts_energy, relaxed_energy, solve

ANISO = SolverConfig(tv_norm="anisotropic", max_iters=3000)


def test_single_region():
    u, _ = solve(PottsProblem([np.random.default_rng(0).random((4, 4))], 0.3))
    np.testing.assert_allclose(u[0], 1.0, atol=1e-12)


def test_pointwise_minimum_wins(rng):
    base = rng.random((5, 5))
    prob = PottsProblem([base + 1, base, base + 2], 0.0)
    u, _ = solve(prob)
    assert np.all(argmax_label(u) == 2)


def test_argmax_label_ties():
    assert argmax_label(np.array([[0.9], [0.1]]))[0] == 1
    assert argmax_label(np.array([[0.5], [0.5]]))[0] == 1
    assert argmax_label(np.array([[0.2], [0.3], [0.5]]))[0] == 3


def test_potts_energy_examples(rng):
    rho = rng.random((2, 1, 2))
    prob = PottsProblem(rho, 1.0)
    assert potts_energy(np.ones((1, 2), int), prob) == pytest.approx(rho[0].sum())
    e = potts_energy(np.array([[1, 2]]), prob, "anisotropic")
    assert e == pytest.approx(rho[0, 0, 0] + rho[1, 0, 1] + 2.0)
    with pytest.raises(InvalidArgumentError):
        potts_energy(np.array([[0, 1]]), prob)
    with pytest.raises(InvalidArgumentError):
        potts_energy(np.array([[1, 3]]), prob)


def test_two_region_energy_identity(rng):
    rho = rng.random((2, 4, 4))
    labels = rng.integers(1, 3, size=(4, 4))
    e_potts = potts_energy(labels, PottsProblem(rho, 0.3), "anisotropic")
    e_bin = primal_energy((labels == 2).astype(float), BinarySegProblem(rho[0], rho[1], 0.6), "anisotropic")
    assert e_potts == pytest.approx(e_bin)


@pytest.mark.parametrize("seed", range(4))
def test_matches_enumeration(seed):
    rho = np.random.default_rng(seed).random((3, 2, 2))
    prob = PottsProblem(rho, 0.4)
    u, _ = solve(prob, ANISO)
    _, best = exhaustive_potts(prob)
    assert potts_energy(argmax_label(u), prob, "anisotropic") <= best * 1.01


def test_simplex_and_weak_duality(rng):
    prob = PottsProblem(rng.random((3, 8, 8)), 0.2)
    u, diag = solve(prob, SolverConfig(max_iters=2000))
    assert np.max(np.abs(u.sum(axis=0) - 1)) <= 0.05
    assert u.min() >= -0.05
    assert diag.dual[-1] <= relaxed_energy(u, prob) + 1e-6


def test_two_labels_match_binary(rng):
    rho = rng.random((2, 8, 8))
    prob = PottsProblem(rho, 0.3)
    u, _ = solve(prob, ANISO)
    bprob = BinarySegProblem(rho[0], rho[1], 0.6)
    ub, _, _ = solve_binary(bprob, ANISO)
    e_potts = potts_energy(argmax_label(u), prob, "anisotropic")
    e_bin = primal_energy(threshold(ub), bprob, "anisotropic")
    assert e_potts == pytest.approx(e_bin, rel=0.01)


def test_grid_mismatch():
    with pytest.raises(InvalidArgumentError):
        PottsProblem([np.zeros((2, 2)), np.zeros((2, 3))], 0.1)
    with pytest.raises(InvalidArgumentError):
        PottsProblem([], 0.1)
