import numpy as np
import pytest

import fracid as fr


@pytest.fixture(scope="session")
def desk1d():
    """Full-resolution 1D setup: 300 elements, 100 steps, alpha=0.3, N=5."""
    mesh = fr.build_mesh(1, 300)
    grid = fr.TemporalGrid(T=1.0, nt=100, alpha=0.3)
    problem = fr.ForwardProblem(mesh, grid, fr.DiffusionTensor(1.0))
    sources = fr.build_source_system(mesh, grid, "trig", 5)
    weight = fr.WeightFunction.from_name("one_minus_t")
    x = mesh.nodes[:, 0]
    return {
        "mesh": mesh,
        "grid": grid,
        "problem": problem,
        "sources": sources,
        "weight": weight,
        "x": x,
        "q_exact": x**2 * (1 - x**2),
    }


@pytest.fixture(scope="session")
def coarse1d():
    """Fast 1D setup for property tests: 60 elements, 30 steps, N=3."""
    mesh = fr.build_mesh(1, 60)
    grid = fr.TemporalGrid(T=1.0, nt=30, alpha=0.3)
    problem = fr.ForwardProblem(mesh, grid, fr.DiffusionTensor(1.0))
    sources = fr.build_source_system(mesh, grid, "trig", 3)
    weight = fr.WeightFunction.from_name("one_minus_t")
    x = mesh.nodes[:, 0]
    return {
        "mesh": mesh,
        "grid": grid,
        "problem": problem,
        "sources": sources,
        "weight": weight,
        "x": x,
        "q_exact": x**2 * (1 - x**2),
    }


@pytest.fixture(scope="session")
def ex1_operator(desk1d):
    op = fr.MeasurementOperator(
        desk1d["problem"], desk1d["sources"], desk1d["weight"], "right", kind="average"
    )
    clean = fr.forward_map(
        desk1d["problem"], desk1d["q_exact"], desk1d["sources"], desk1d["weight"], "right"
    )
    return op, clean


def make_inverse(op, clean, epsilon, seed, mu_rule="delta_3_2", q_max=0.5):
    noisy = fr.add_noise(clean, epsilon, seed=seed)
    mu = fr.mu_from_rule(mu_rule, noisy.delta) if epsilon > 0 else 0.0
    cfg = fr.ObjectiveConfig(mu=mu, q_min=0.0, q_max=q_max)
    return fr.InverseProblem(op, noisy, cfg), noisy
