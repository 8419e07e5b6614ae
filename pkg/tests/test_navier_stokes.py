"""Vorticity solver physics: decay oracle, conservation, enstrophy, determinism."""

from __future__ import annotations

import numpy as np
import pytest

from sparkpde.datagen import simulate_navier_stokes, suggest_dt
from sparkpde.errors import ContractViolation
from sparkpde.grids import GridGraph
from sparkpde.metrics import energy_spectrum


@pytest.fixture(scope="module")
def grid():
    return GridGraph(32, 32)


def test_high_viscosity_enstrophy_strictly_decreases(grid):
    ep = simulate_navier_stokes(grid, nu=1.0, ic_seed=3, steps=60, dt=2e-3)
    enstrophy = np.sum(ep.x[:, :, 0] ** 2, axis=1)
    assert np.all(np.diff(enstrophy) < 0)


def test_single_mode_decays_at_closed_form_rate(grid):
    amp = 0.8
    x = np.arange(grid.width) / grid.width
    omega0 = amp * np.tile(np.sin(2 * np.pi * x), (grid.height, 1))
    nu = 0.05
    dt = 1e-3
    steps = 100  # t = 0.1
    ep = simulate_navier_stokes(
        grid, nu=nu, ic_seed=0, steps=steps, dt=dt, initial_vorticity=omega0
    )
    final = ep.x[-1, :, 0].reshape(32, 32)
    expected = omega0 * np.exp(-nu * (2 * np.pi) ** 2 * 0.1)
    rel = np.max(np.abs(final - expected)) / np.max(np.abs(expected))
    assert rel < 1e-4


def test_mean_vorticity_conserved_every_step(grid):
    ep = simulate_navier_stokes(grid, nu=1e-3, ic_seed=11, steps=50, dt=2e-3)
    means = ep.x[:, :, 0].mean(axis=1)
    assert np.max(np.abs(means)) < 1e-12


def test_deterministic_given_seed(grid):
    a = simulate_navier_stokes(grid, nu=1e-3, ic_seed=5, steps=20, dt=2e-3)
    b = simulate_navier_stokes(grid, nu=1e-3, ic_seed=5, steps=20, dt=2e-3)
    assert a.x.tobytes() == b.x.tobytes()
    c = simulate_navier_stokes(grid, nu=1e-3, ic_seed=6, steps=20, dt=2e-3)
    assert a.x.tobytes() != c.x.tobytes()


def test_cfl_violation_refused_with_suggestion(grid):
    with pytest.raises(ContractViolation) as err:
        simulate_navier_stokes(grid, nu=1e-3, ic_seed=1, steps=10, dt=0.5)
    assert "CFL" in str(err.value)
    assert "use dt" in str(err.value)


def test_suggest_dt_scales_with_velocity(grid):
    assert suggest_dt(grid, 2.0) == pytest.approx(0.5 / (32 * 2.0))


@pytest.mark.parametrize("nu", [1e-2, 1e-3, 1e-4])
def test_dissipation_range_spectrum_decays(grid, nu):
    ep = simulate_navier_stokes(
        grid, nu=nu, ic_seed=9, steps=400, dt=2e-3, ic_modes=4
    )
    ks, energy = energy_spectrum(ep.x[-1, :, 0].reshape(32, 32))
    # Above the initial-condition band and below the dealiasing cutoff (2/3 of
    # k_max = 10 here) the spectrum must fall off monotonically.
    tail = energy[6:11]
    assert np.all(np.diff(tail) <= 0.0)


def test_enstrophy_monotone_for_moderate_viscosity(grid):
    ep = simulate_navier_stokes(grid, nu=1e-3, ic_seed=21, steps=200, dt=2e-3)
    enstrophy = np.sum(ep.x[:, :, 0] ** 2, axis=1)
    assert np.all(np.diff(enstrophy) <= enstrophy[0] * 1e-12)
