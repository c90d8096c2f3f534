import itertools

import numpy as np
import pytest

from rbspectro.noisegen import NoiseSpectrum
from rbspectro.rbsim import (
    CliffordGate,
    GateModel,
    GateModelError,
    MismatchedCurvesError,
    RatioCurve,
    RbCurve,
    apply_noisy_gate,
    average_rb,
    clifford_table,
    corrected_model,
    fit_decay,
    load_models,
    long_sequence_kappa,
    model_pair_id,
    ratio_curve,
    run_rb_sequence,
    save_models,
    uncorrected_model,
)
from rbspectro.seeds import derive_seed


def same_up_to_phase(u, v, tol=1e-10):
    return abs(abs(np.trace(u.conj().T @ v)) - 2.0) < tol


def matrix_exp_series(h, terms=30):
    """Brute-force matrix exponential of -i*h by power series."""
    out = np.eye(2, dtype=complex)
    term = np.eye(2, dtype=complex)
    for k in range(1, terms):
        term = term @ (-1j * h) / k
        out = out + term
    return out


SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


class TestCliffordTable:
    def test_has_24_gates(self):
        table = clifford_table()
        assert len(table) == 24
        assert all(isinstance(g, CliffordGate) for g in table)

    def test_unitarity(self):
        for g in clifford_table():
            assert np.allclose(g.unitary.conj().T @ g.unitary, np.eye(2), atol=1e-12)

    def test_identity_present_and_first(self):
        table = clifford_table()
        assert same_up_to_phase(table[0].unitary, np.eye(2))
        state = np.array([0.6, 0.8j])
        np.testing.assert_allclose(table[0].unitary @ state, state, atol=1e-12)

    def test_closure_under_composition(self):
        table = clifford_table()
        for a, b in itertools.product(table, repeat=2):
            product = a.unitary @ b.unitary
            assert any(same_up_to_phase(product, g.unitary) for g in table)

    def test_element_orders_bounded(self):
        # brute-force order computation inside the 24-element group
        table = clifford_table()
        for g in table:
            power = np.eye(2, dtype=complex)
            order = None
            for k in range(1, 9):
                power = g.unitary @ power
                if same_up_to_phase(power, np.eye(2)):
                    order = k
                    break
            assert order is not None and order <= 8

    def test_deterministic_order(self):
        a = [g.unitary for g in clifford_table()]
        clifford_table.cache_clear()
        b = [g.unitary for g in clifford_table()]
        for ua, ub in zip(a, b):
            np.testing.assert_array_equal(ua, ub)


class TestGateModels:
    def test_uncorrected_defaults(self):
        m = uncorrected_model()
        assert m.duration_samples == 1
        assert m.weights_array.sum() == pytest.approx(1.0)

    def test_corrected_weights_sum_to_zero_exactly(self):
        m = corrected_model(10.0)
        assert m.weights_array.sum() == 0.0
        assert m.duration_samples == 5
        assert np.abs(m.weights_array).sum() == pytest.approx(1.0)

    def test_corrected_first_moment_vanishes(self):
        # linear drift across the window cancels too
        m = corrected_model(10.0)
        k = np.arange(m.duration_samples)
        assert float(k @ m.weights_array) == pytest.approx(0.0, abs=1e-15)

    def test_invalid_models_rejected(self):
        with pytest.raises(GateModelError):
            GateModel("uncorrected", 2, (0.5, -0.5), 1.0, 1.0)
        with pytest.raises(GateModelError):
            GateModel("corrected", 3, (0.5, 0.5, 0.5), 1.0, 1.0)
        with pytest.raises(GateModelError):
            GateModel("fancy", 1, (1.0,), 1.0, 1.0)
        with pytest.raises(GateModelError):
            GateModel("uncorrected", 1, (1.0, 2.0), 1.0, 1.0)


class TestApplyNoisyGate:
    def test_zero_noise_is_exact_gate(self):
        gate = clifford_table()[5]
        state = np.array([1.0, 0.0], dtype=complex)
        out = apply_noisy_gate(state, gate, uncorrected_model(), np.zeros(1), np.zeros(1))
        np.testing.assert_allclose(out, gate.unitary @ state, atol=1e-12)

    def test_corrected_cancels_constant_noise(self):
        gate = clifford_table()[3]
        model = corrected_model(25.0)
        state = np.array([0.8, 0.6], dtype=complex)
        window = np.full(5, 0.37)
        out = apply_noisy_gate(state, gate, model, window, 2.0 * window)
        np.testing.assert_allclose(out, gate.unitary @ state, atol=1e-12)

    def test_static_noise_whole_sequence_fidelity_one(self):
        # zero-sum weights cancel a constant trace at every order
        model = corrected_model(25.0)
        rng = np.random.default_rng(0)
        state = np.array([1.0, 0.0], dtype=complex)
        ideal = state.copy()
        window_x = np.full(5, 0.11)
        window_z = np.full(5, -0.23)
        for idx in rng.integers(0, 24, size=60):
            gate = clifford_table()[idx]
            state = apply_noisy_gate(state, gate, model, window_x, window_z)
            ideal = gate.unitary @ ideal
        assert abs(np.vdot(ideal, state)) ** 2 == pytest.approx(1.0, abs=1e-10)

    def test_error_matches_series_expansion(self):
        model = uncorrected_model(coupling=1.0)
        gate = clifford_table()[0]  # identity
        for ex, ez in [(0.3, 0.0), (0.0, 0.4), (0.2, -0.5), (1.3, 0.7)]:
            state = np.array([1.0, 0.0], dtype=complex)
            out = apply_noisy_gate(state, gate, model, np.array([ex]), np.array([ez]))
            expected = matrix_exp_series((ex * SX + ez * SZ) / 2) @ state
            np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_single_channel_infidelity_is_sin_squared(self):
        model = uncorrected_model(coupling=1.0)
        gate = clifford_table()[0]
        for eps in [1e-3, 0.05, 0.3]:
            state = np.array([1.0, 0.0], dtype=complex)
            out = apply_noisy_gate(state, gate, model, np.array([eps]), np.zeros(1))
            infid = 1.0 - abs(np.vdot(state, out)) ** 2
            assert infid == pytest.approx(np.sin(eps / 2) ** 2, abs=1e-12)
            assert infid == pytest.approx(eps**2 / 4, abs=eps**4)

    def test_output_normalized_even_for_large_noise(self):
        model = uncorrected_model(coupling=5.0)
        rng = np.random.default_rng(1)
        for _ in range(20):
            state = rng.normal(size=2) + 1j * rng.normal(size=2)
            state /= np.linalg.norm(state)
            out = apply_noisy_gate(
                state, clifford_table()[7], model, rng.normal(size=1), rng.normal(size=1)
            )
            assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)

    def test_window_length_mismatch(self):
        with pytest.raises(GateModelError):
            apply_noisy_gate(
                np.array([1.0, 0.0]), clifford_table()[0], corrected_model(5.0),
                np.zeros(3), np.zeros(5),
            )


class TestRunRb:
    def test_zero_amplitude_limit(self):
        spec = NoiseSpectrum(1e-32, 1.0)
        f = run_rb_sequence(spec, uncorrected_model(), 200, seed=5)
        assert np.all(np.abs(1.0 - f) < 1e-10)

    def test_deterministic(self):
        spec = NoiseSpectrum(1e-3, 1.5)
        a = run_rb_sequence(spec, uncorrected_model(), 100, seed=3)
        b = run_rb_sequence(spec, uncorrected_model(), 100, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_fidelities_in_range(self):
        spec = NoiseSpectrum(1e-2, 0.5)
        f = run_rb_sequence(spec, uncorrected_model(), 150, seed=9)
        assert np.all(f >= 0) and np.all(f <= 1 + 1e-12)

    def test_white_noise_curve_decays_toward_half(self):
        spec = NoiseSpectrum(1e-3, 0.0)
        curve = average_rb(spec, uncorrected_model(), 200, 200, seed=7)
        smoothed = np.convolve(curve.fidelities, np.ones(21) / 21, mode="valid")
        assert np.all(np.diff(smoothed) <= 1e-4)
        assert 0.45 < curve.fidelities[-1] < 0.75
        assert curve.fidelities[0] > 0.97

    def test_average_of_one_run_is_that_run(self):
        spec = NoiseSpectrum(1e-4, 1.0)
        avg = average_rb(spec, uncorrected_model(), n_runs=1, n_gates=50, seed=21)
        single = run_rb_sequence(
            spec, uncorrected_model(), 50, seed=derive_seed(21, 0)
        )
        np.testing.assert_array_equal(avg.fidelities, single)

    def test_shared_sequence_seed_replays_gates(self):
        # same sequence_seed, different noise seeds: curves differ but are
        # built from identical gate draws, so the zero-noise limit agrees
        spec = NoiseSpectrum(1e-32, 1.0)
        a = average_rb(spec, uncorrected_model(), 3, 40, seed=1, sequence_seed=99)
        b = average_rb(spec, corrected_model(10.0), 3, 40, seed=2, sequence_seed=99)
        np.testing.assert_allclose(a.fidelities, b.fidelities, atol=1e-10)

    def test_doubling_runs_halves_variance(self):
        spec = NoiseSpectrum(1e-3, 1.0)

        def final_f_variance(n_runs, base):
            vals = [
                average_rb(spec, uncorrected_model(), n_runs, 120,
                           seed=derive_seed(base, i)).fidelities[-1]
                for i in range(64)
            ]
            return np.var(vals, ddof=1)

        ratio = final_f_variance(25, 1000) / final_f_variance(50, 2000)
        assert 1.5 < ratio < 2.5


class TestRatioCurve:
    def make_curve(self, values, kind="uncorrected", spec=None):
        return RbCurve(
            fidelities=np.asarray(values, dtype=float),
            n_runs_averaged=1,
            spectrum=spec or NoiseSpectrum(1e-3, 1.0),
            model_kind=kind,
        )

    def test_identical_curves_give_unit_ratio(self):
        c = self.make_curve(np.linspace(1, 0.6, 20))
        k = ratio_curve(c, c)
        np.testing.assert_allclose(k.ratios, 1.0)

    def test_division_floor(self):
        corr = self.make_curve([0.5, 0.5], kind="corrected")
        unc = self.make_curve([0.0, 1e-9])
        k = ratio_curve(corr, unc)
        assert np.all(np.isfinite(k.ratios))
        assert k.ratios[0] == pytest.approx(0.5 / 1e-6)

    def test_mismatched_curves_rejected(self):
        a = self.make_curve(np.ones(10))
        b = self.make_curve(np.ones(12))
        with pytest.raises(MismatchedCurvesError):
            ratio_curve(a, b)
        c = self.make_curve(np.ones(10), spec=NoiseSpectrum(1e-4, 1.0))
        with pytest.raises(MismatchedCurvesError):
            ratio_curve(a, c)

    def test_ratio_invariants_enforced(self):
        with pytest.raises(ValueError):
            RatioCurve(ratios=np.array([1.0, -0.5]), spectrum=NoiseSpectrum(1e-3, 1.0))


class TestFitDecay:
    def test_exact_curve_recovers_gamma(self):
        n = np.arange(1, 201)
        f = 0.5 * (1 + np.exp(-0.01 * n))
        fit = fit_decay(f)
        assert fit.converged
        assert fit.gamma == pytest.approx(0.01, abs=1e-6)
        assert fit.residual < 1e-10

    def test_constant_one_gives_zero(self):
        fit = fit_decay(np.ones(50))
        assert fit.converged
        assert fit.gamma == pytest.approx(0.0, abs=1e-9)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            fit_decay(np.ones(5))

    def test_self_consistency_between_independent_averages(self):
        spec = NoiseSpectrum(1e-3, 1.0)
        g1 = fit_decay(average_rb(spec, uncorrected_model(), 400, 200, seed=11)).gamma
        g2 = fit_decay(average_rb(spec, uncorrected_model(), 400, 200, seed=12)).gamma
        assert abs(g1 - g2) / g1 < 0.10

    def test_amplitude_monotonicity_quick(self):
        gammas = [
            fit_decay(average_rb(NoiseSpectrum(a, 1.5), uncorrected_model(), 100, 150, seed=33)).gamma
            for a in (1e-6, 1e-4, 1e-3)
        ]
        assert gammas[0] <= gammas[1] <= gammas[2]


class TestCalibration:
    def test_pair_structure(self, calibrated_pair):
        unc, corr = calibrated_pair
        assert unc.kind == "uncorrected" and corr.kind == "corrected"
        assert corr.duration_samples > unc.duration_samples
        assert corr.coupling_x == corr.coupling_z

    def test_kappa_at_crossover_near_one(self, calibrated_pair):
        unc, corr = calibrated_pair
        spec = NoiseSpectrum(1e-3, 1.0)
        seq = derive_seed(123, 0)
        u = average_rb(spec, unc, 200, 200, seed=derive_seed(123, 1), sequence_seed=seq)
        c = average_rb(spec, corr, 200, 200, seed=derive_seed(123, 2), sequence_seed=seq)
        assert 0.9 < long_sequence_kappa(ratio_curve(c, u).ratios) < 1.1

    def test_kappa_below_one_for_white_noise(self, calibrated_pair):
        unc, corr = calibrated_pair
        spec = NoiseSpectrum(1e-3, 0.0)
        seq = derive_seed(43, 0)
        u = average_rb(spec, unc, 200, 200, seed=derive_seed(43, 1), sequence_seed=seq)
        c = average_rb(spec, corr, 200, 200, seed=derive_seed(43, 2), sequence_seed=seq)
        tail = long_sequence_kappa(ratio_curve(c, u).ratios)
        assert 0.55 < tail < 0.9

    def test_kappa_above_one_for_correlated_noise(self, calibrated_pair):
        unc, corr = calibrated_pair
        spec = NoiseSpectrum(1e-3, 1.5)
        seq = derive_seed(42, 0)
        u = average_rb(spec, unc, 200, 200, seed=derive_seed(42, 1), sequence_seed=seq)
        c = average_rb(spec, corr, 200, 200, seed=derive_seed(42, 2), sequence_seed=seq)
        ratios = ratio_curve(c, u).ratios
        assert np.all(ratios[50:] > 1.0)

    def test_corrected_above_uncorrected_late_in_sequence(self, calibrated_pair):
        unc, corr = calibrated_pair
        spec = NoiseSpectrum(1e-3, 1.5)
        seq = derive_seed(44, 0)
        u = average_rb(spec, unc, 200, 200, seed=derive_seed(44, 1), sequence_seed=seq)
        c = average_rb(spec, corr, 200, 200, seed=derive_seed(44, 2), sequence_seed=seq)
        assert np.mean(c.fidelities[100:]) > np.mean(u.fidelities[100:])


def test_model_persistence_round_trip(tmp_path, calibrated_pair):
    unc, corr = calibrated_pair
    path = tmp_path / "models.json"
    save_models(unc, corr, path, metadata={"note": "test"})
    unc2, corr2 = load_models(path)
    assert unc2 == unc
    assert corr2 == corr
    assert model_pair_id(unc2, corr2) == model_pair_id(unc, corr)
