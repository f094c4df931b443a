"""Reference-solver tests: oracles are scalar integration, conservation
identities, convergence order, and the time-shift symmetry of the
autonomous dynamics."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nob import fhn


def test_default_coefficients():
    p = fhn.TissueParams()
    assert (p.chi, p.cm, p.d) == (1.0, 1.0, 1e-3)
    assert (p.b, p.c, p.delta) == (5.0, 0.1, 1.0)
    assert (p.beta, p.eta, p.gamma) == (1.0, 0.1, 0.25)


def test_grid_counts_and_validation():
    g = fhn.Grid1D()
    assert (g.nx, g.dt, g.t_max) == (200, 0.05, 40.0)
    assert g.n_nodes == 201 and g.n_steps == 800
    assert g.dx == pytest.approx(0.005, abs=0)
    assert g.xs().shape == (201,) and g.ts().shape == (801,)
    with pytest.raises(ValueError):
        fhn.Grid1D(dt=0.03)            # 40 not a multiple of 0.03
    with pytest.raises(ValueError):
        fhn.Grid1D(nx=1)
    with pytest.raises(ValueError):
        fhn.TissueParams(d=-1.0)


def test_stability_bound_and_scheme_selection():
    g = fhn.Grid1D()
    p = fhn.TissueParams()
    assert fhn.max_stable_dt(g, p) == pytest.approx(0.0125, rel=1e-15)
    assert math.isinf(fhn.max_stable_dt(g, fhn.TissueParams(d=0.0)))
    spec = fhn.StimulusSpec(1.0, 0.2, 1.0)
    with pytest.raises(fhn.StabilityError):
        fhn.solve(p, g, spec, scheme="explicit")   # dt=0.05 > 0.9*bound
    sol = fhn.solve(p, fhn.Grid1D(dt=0.05, t_max=1.0), spec, scheme="auto")
    assert sol.scheme == "imex"
    sol2 = fhn.solve(p, fhn.Grid1D(dt=0.01, t_max=1.0), spec, scheme="auto")
    assert sol2.scheme == "explicit"


def test_stimulus_box_closed_boundaries():
    g = fhn.Grid1D(dt=0.05, t_max=1.0)
    # edges exactly on nodes are active at both ends
    spec = fhn.StimulusSpec(2.0, 0.5, 0.1, width=0.04, duration=0.2)
    j0, j1, k0, k1 = fhn.stimulus_index_box(spec, g)
    assert (j0, j1) == (100, 108)          # 0.5/0.005 .. 0.54/0.005
    assert (k0, k1) == (2, 6)              # 0.1/0.05 .. 0.3/0.05
    field = fhn.stimulus_field(spec, g)
    assert field.shape == (201, 21)
    assert field[100, 2] == 2.0 and field[108, 6] == 2.0
    assert field[99, 2] == 0.0 and field[100, 7] == 0.0
    # a box strictly between nodes is empty
    narrow = fhn.StimulusSpec(2.0, 0.5015, 0.1, width=0.002, duration=0.2)
    j0, j1, _, _ = fhn.stimulus_index_box(narrow, g)
    assert j0 > j1
    assert fhn.stimulus_field(narrow, g).sum() == 0.0


@settings(max_examples=60, deadline=None)
@given(x_min=st.floats(0.0, 0.9), width=st.floats(0.0, 0.1),
       t_min=st.floats(0.0, 0.8), duration=st.floats(0.0, 0.2))
def test_stimulus_field_mass_matches_index_box(x_min, width, t_min, duration):
    """Active-cell count equals the closed index-box volume."""
    g = fhn.Grid1D(nx=50, dt=0.05, t_max=1.0)
    spec = fhn.StimulusSpec(1.0, x_min, t_min, width=min(width, 1.0 - x_min),
                            duration=duration)
    j0, j1, k0, k1 = fhn.stimulus_index_box(spec, g)
    expected = max(j1 - j0 + 1, 0) * max(k1 - k0 + 1, 0)
    assert int(fhn.stimulus_field(spec, g).sum()) == expected


def test_zero_diffusion_matches_scalar_euler_bitwise():
    """Spatially uniform forcing with d=0 reduces every node to one ODE."""
    p = fhn.TissueParams(d=0.0)
    g = fhn.Grid1D(dt=0.05, t_max=5.0)
    spec = fhn.StimulusSpec(2.0, 0.0, 0.0, width=1.0, duration=1.0)
    sol = fhn.solve(p, g, spec, scheme="explicit")

    v = w = 0.0
    for k in range(g.n_steps):
        i_app = spec.amplitude if k * g.dt <= spec.t_min + spec.duration else 0.0
        dv = (i_app + p.chi * p.b * v * (v - p.c) * (p.delta - v)
              - p.beta * w) / (p.chi * p.cm)
        dw = p.eta * v - p.gamma * w
        v = v + g.dt * (dv + 0.0)
        w = w + g.dt * dw
        assert (sol.v[:, k + 1] == v).all(), f"v mismatch at step {k + 1}"
        assert (sol.w[:, k + 1] == w).all(), f"w mismatch at step {k + 1}"


@pytest.mark.parametrize("scheme", ["explicit", "imex"])
def test_mass_conserved_without_reaction(scheme):
    """After the stimulus ends, pure diffusion preserves trapezoidal mass."""
    p = fhn.TissueParams(b=0.0, beta=0.0, eta=0.0, gamma=0.0)
    g = fhn.Grid1D(dt=0.01, t_max=14.0)
    spec = fhn.StimulusSpec(3.0, 0.3, 0.0, width=0.2, duration=4.0)
    sol = fhn.solve(p, g, spec, scheme=scheme)
    _, _, _, k1 = fhn.stimulus_index_box(spec, g)
    masses = [fhn.mass(sol.v[:, k], g.dx) for k in range(k1 + 1, g.n_steps + 1)]
    drift = max(abs(m - masses[0]) for m in masses)
    steps = len(masses) - 1
    assert steps >= 900
    assert drift <= 1e-10 * (steps / 1000 + 1)


def test_laplacian_ghost_closure_annihilates_mass():
    rng = np.random.default_rng(0)
    v = rng.normal(size=31)
    dx = 1.0 / 30
    lap = fhn.laplacian(v, dx)
    # trapezoidal weights sum the closed second difference to exactly zero
    assert abs(fhn.mass(lap, dx)) <= 1e-12 * np.abs(lap).sum()


def test_imex_first_order_convergence():
    """Against a fine explicit reference, halving dt halves the imex error."""
    p = fhn.TissueParams()
    spec = fhn.StimulusSpec(3.0, 0.4, 0.0, width=0.1, duration=1.0)
    ref = fhn.solve(p, fhn.Grid1D(dt=0.00125, t_max=4.0), spec,
                    scheme="explicit")

    def err(dt):
        sol = fhn.solve(p, fhn.Grid1D(dt=dt, t_max=4.0), spec, scheme="imex")
        stride = round(dt / 0.00125)
        dvf = sol.v[:, -1] - ref.v[:, -1]
        assert ref.v[:, ::stride].shape[1] == sol.v.shape[1]
        return np.linalg.norm(dvf) / np.linalg.norm(ref.v[:, -1])

    e1, e2 = err(0.01), err(0.005)
    assert 1.5 < e1 / e2 < 2.6, (e1, e2)


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_reported_with_step():
    p = fhn.TissueParams()
    g = fhn.Grid1D(dt=0.01, t_max=2.0)
    spec = fhn.StimulusSpec(1e8, 0.0, 0.0, width=1.0, duration=2.0)
    with pytest.raises(fhn.DivergenceError, match="step"):
        fhn.solve(p, g, spec, scheme="explicit")


def test_translation_invariance_short_run():
    p = fhn.TissueParams()
    g = fhn.Grid1D(dt=0.01, t_max=10.0)
    spec = fhn.StimulusSpec(3.0, 0.5, 1.0)
    err = fhn.check_translation_invariance(p, g, spec, 2.0,
                                           scheme="explicit")
    assert err <= 1e-12
    with pytest.raises(ValueError):
        fhn.check_translation_invariance(p, g, spec, 0.0205)  # not a dt multiple


def test_solution_starts_from_rest():
    sol = fhn.solve(fhn.TissueParams(), fhn.Grid1D(dt=0.05, t_max=1.0),
                    fhn.StimulusSpec(1.0, 0.1, 0.5), scheme="imex")
    assert (sol.v[:, 0] == 0.0).all() and (sol.w[:, 0] == 0.0).all()
    assert sol.v.shape == (201, 21)
