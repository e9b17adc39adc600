import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sindy_delay.dde_sim import sample
from sindy_delay.delay_opt import DelayGrid
from sindy_delay.models import (BIO_TERM_NAMES, BioConfig, BioFitProblem, BioModel, BioProblem,
                                EnsoSpec, delay_concentration_slope, enso_model, fit_bio,
                                generate_enso, load_reference_models, simulate_bio, synthesize_bio,
                                reference_model)
from sindy_delay.timeseries import DataError, NoiseSpec, TimeSeries


def test_enso_spec_validation():
    with pytest.raises(ValueError):
        EnsoSpec(tau=0.0)
    with pytest.raises(ValueError):
        EnsoSpec(dt=-1.0)


def test_generate_noiseless(enso_clean):
    truth, observed = enso_clean
    assert truth.n == 4000
    np.testing.assert_allclose(truth.times, 0.025 * np.arange(1, 4001), rtol=1e-12)
    assert np.array_equal(observed.values, truth.values)
    assert observed.derivs is None or np.array_equal(observed.derivs, truth.derivs)


def test_truth_derivs_are_field(enso_clean):
    truth, _ = enso_clean
    x = truth.values[:, 0]
    delayed = x[:-280]
    expected = x[280:] - x[280:] ** 3 - 0.75 * delayed
    np.testing.assert_allclose(truth.derivs[280:, 0], expected, atol=1e-10)


def test_generate_noisy_short(enso_short_noisy):
    truth, observed = enso_short_noisy
    assert observed.n == 200 and observed.derivs is None
    resid = observed.values - truth.values
    assert 0.01 < resid.std() < 0.03
    again = generate_enso(EnsoSpec(n_samples=200, dt=0.25, noise=NoiseSpec(0.02, 0)))[1]
    assert np.array_equal(again.values, observed.values)


def test_enso_model_terms():
    model = enso_model(0.5, 3.0)
    assert model.delays.tolist() == [3.0]
    assert np.count_nonzero(model.coeffs) == 3


def test_reference_model_fixture():
    rows = load_reference_models()
    assert [r["zinc_mM"] for r in rows] == [0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5]
    m = reference_model(2.0)
    assert m.named() == {"f": {"1": 201.0, "y": -9.08e-3}, "g": {"1": 117.0, "x^2": 4.28e-7}}
    assert (m.tau_wt, m.tau_dca) == (30.0, 70.0)
    with pytest.raises(KeyError):
        reference_model(3.0)


def test_bio_term_names():
    assert list(BIO_TERM_NAMES.values()) == ["1", "x", "y", "x^2", "xy", "y^2", "x^3",
                                             "x^2y", "xy^2", "y^3"]


def test_dormant_phase_closed_form():
    m = reference_model(2.0)
    traj = simulate_bio(m, 30.0, 0.5)
    np.testing.assert_allclose(traj.states[:, 0], 201.0 * traj.times, rtol=1e-12)
    assert np.all(traj.states[:, 1] == 0.0)


def test_dormancy_exact_for_all_strains():
    m = reference_model(1.0)
    for strain, tau in (("wt", m.tau_wt), ("dcad", m.tau_dca)):
        traj = m.simulate(strain, 150.0)
        assert np.all(traj.states[traj.times < tau, 1] == 0.0)
        assert np.any(traj.states[traj.times > tau + 1, 1] != 0.0)
    assert np.all(m.simulate("dcad", 150.0).states[:, 0] == 0.0)
    assert np.all(m.simulate("dczc", 150.0).states[:, 1] == 0.0)


def test_late_time_unphysical():
    traj = simulate_bio(reference_model(2.0), 1000.0, 0.5)
    # the run may hit the divergence bound before 1000 min; the finite part is kept
    assert traj.t_end <= 1000.0
    assert traj.states.min() < 0
    assert np.all(traj.states[traj.times < 100] >= 0)


def test_zero_model_zero_trajectory():
    traj = simulate_bio(BioModel(np.zeros(10), np.zeros(10), 10.0, 20.0), 100.0)
    assert np.all(traj.states == 0.0)


def test_slope_examples():
    assert delay_concentration_slope([(1, 5), (2, 10), (3, 15)]) == 5.0
    rows = [(r["zinc_mM"], r["tau_dca"]) for r in load_reference_models()]
    c = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows])
    assert delay_concentration_slope(rows) == pytest.approx((c * t).sum() / (c * c).sum())
    with pytest.raises(ValueError):
        delay_concentration_slope([(0, 1), (0, 2)])
    with pytest.raises(ValueError):
        delay_concentration_slope([(1, 1)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(0, 200)), min_size=2, max_size=12))
def test_slope_closed_form(rows):
    c = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows])
    ref = float(c @ t) / float(c @ c)
    assert delay_concentration_slope(rows) == pytest.approx(ref, rel=1e-12)


@pytest.fixture(scope="module")
def closure_problem():
    return synthesize_bio(reference_model(2.0))


def test_synthesized_shapes(closure_problem):
    p = closure_problem
    assert p.wt.n == p.delta_czc.n == p.delta_cad.n == 33
    assert p.wt.spacing() == 5.0
    assert p.wt.channels == ["cadA", "czcA"]
    assert np.all(p.wt.values[0] == 0)


def test_bio_problem_validation():
    t = np.arange(5.0) * 5
    ok = TimeSeries(t, np.column_stack([t, t]))
    one = TimeSeries(t, t)
    with pytest.raises(DataError, match="channel"):
        BioProblem(one, one, one)
    with pytest.raises(DataError, match="start"):
        BioProblem(ok, TimeSeries(t, t + 1), one)


def test_zero_problem_rejected():
    t = np.arange(33.0) * 5
    z2 = TimeSeries(t, np.zeros((33, 2)))
    z1 = TimeSeries(t, np.zeros(33))
    with pytest.raises(DataError, match="identically zero"):
        BioFitProblem(BioProblem(z2, z1, z1))


def test_bio_fit_at_true_delays(closure_problem):
    fitter = BioFitProblem(closure_problem)
    model, (f_trace, g_trace) = fitter.fit(30.0, 70.0)
    named = model.named()
    assert set(named["f"]) == {"1", "y"}
    assert set(named["g"]) == {"1", "x^2"}
    assert named["f"]["1"] == pytest.approx(201.0, rel=0.1)
    assert named["f"]["y"] == pytest.approx(-9.08e-3, rel=0.1)
    # shared f: the same coefficients drive wt and the x-only strain
    assert np.array_equal(model.wiring("wt").coeffs[:, 0], model.wiring("dczc").coeffs[:, 0])
    assert fitter.score(model) < 0.01


def test_bio_local_grid(closure_problem):
    grid = DelayGrid(([25.0, 30.0, 35.0], [65.0, 70.0, 75.0]))
    model, res = fit_bio(closure_problem, grid, BioConfig(workers=2))
    assert res.best == (30.0, 70.0)
    assert (model.tau_wt, model.tau_dca) == (30.0, 70.0)


def test_bio_concatenated_mode(closure_problem):
    fitter = BioFitProblem(closure_problem, BioConfig(error_mode="concatenated"))
    model, _ = fitter.fit(30.0, 70.0)
    e = fitter.score(model)
    assert 0 < e < BioFitProblem(closure_problem).score(model)
    with pytest.raises(ValueError):
        BioFitProblem(closure_problem, BioConfig(error_mode="other"))


def test_noisy_synthesis_deterministic():
    a = synthesize_bio(reference_model(1.5), noise=NoiseSpec(20.0, 5))
    b = synthesize_bio(reference_model(1.5), noise=NoiseSpec(20.0, 5))
    assert a.wt == b.wt and a.delta_cad == b.delta_cad
    assert np.all(a.wt.values[0] == 0)
