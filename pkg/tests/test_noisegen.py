import json

import numpy as np
import pytest

from rbspectro.noisegen import (
    InsufficientBinsError,
    MismatchedTracesError,
    NoiseGenError,
    NoiseSpectrum,
    NoiseTrace,
    PsdEstimate,
    estimate_psd,
    fit_spectrum,
    generate_trace,
    write_psd_csv,
    write_trace_csv,
)
from rbspectro.seeds import derive_seed


def brute_force_psd(traces, bins):
    """Independent periodogram oracle: explicit DFT sums, no FFT.

    Evaluates X_k = sum_j x_j exp(-2i*pi*j*k/n) directly at the requested
    bins and averages dt/n * |X_k|^2 over traces.
    """
    n = len(traces[0].samples)
    dt = traces[0].dt
    j = np.arange(n)
    power = np.zeros(len(bins))
    for t in traces:
        for i, k in enumerate(bins):
            xk = np.sum(t.samples * np.exp(-2j * np.pi * j * k / n))
            power[i] += (dt / n) * abs(xk) ** 2
    power /= len(traces)
    omega = 2.0 * np.pi * np.asarray(bins) / (n * dt)
    return omega, power


def loglog_slope(omega, power):
    return np.polyfit(np.log(omega), np.log(power), 1)[0]


class TestNoiseSpectrum:
    def test_valid(self):
        s = NoiseSpectrum(amplitude=1e-3, exponent=1.5)
        assert s.psd(1.0) == pytest.approx(1e-3)
        assert s.psd(2.0) == pytest.approx(1e-3 / 2**1.5)

    @pytest.mark.parametrize("amp", [0.0, -1e-3, float("nan")])
    def test_bad_amplitude(self, amp):
        with pytest.raises(NoiseGenError):
            NoiseSpectrum(amplitude=amp, exponent=1.0)

    @pytest.mark.parametrize("alpha", [-0.1, 3.01])
    def test_exponent_out_of_range(self, alpha):
        with pytest.raises(NoiseGenError):
            NoiseSpectrum(amplitude=1e-3, exponent=alpha)

    def test_range_endpoints_allowed(self):
        NoiseSpectrum(amplitude=1e-3, exponent=0.0)
        NoiseSpectrum(amplitude=1e-3, exponent=3.0)


class TestGenerateTrace:
    def test_rejects_bad_lengths(self):
        spec = NoiseSpectrum(1e-3, 1.0)
        for n in [255, 300, 128, 0]:
            with pytest.raises(NoiseGenError):
                generate_trace(spec, n, 1.0, seed=1)

    def test_rejects_bad_dt(self):
        with pytest.raises(NoiseGenError):
            generate_trace(NoiseSpectrum(1e-3, 1.0), 256, 0.0, seed=1)

    def test_deterministic(self):
        spec = NoiseSpectrum(1e-4, 1.5)
        a = generate_trace(spec, 1024, 1.0, seed=42)
        b = generate_trace(spec, 1024, 1.0, seed=42)
        assert np.array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        spec = NoiseSpectrum(1e-4, 1.5)
        a = generate_trace(spec, 1024, 1.0, seed=1)
        b = generate_trace(spec, 1024, 1.0, seed=2)
        assert not np.array_equal(a.samples, b.samples)

    def test_trace_is_real_finite_and_zero_mean(self):
        # DC bin is zeroed, so every trace has exactly zero sample mean.
        spec = NoiseSpectrum(1e-3, 2.0)
        means = []
        for s in range(200):
            t = generate_trace(spec, 512, 1.0, seed=s)
            assert np.all(np.isfinite(t.samples))
            means.append(np.mean(t.samples))
        assert abs(np.mean(means)) < 1e-12

    def test_consecutive_seed_cross_correlation(self):
        spec = NoiseSpectrum(1e-3, 1.0)
        for s in range(5):
            a = generate_trace(spec, 4096, 1.0, seed=s).samples
            b = generate_trace(spec, 4096, 1.0, seed=s + 1).samples
            rho = np.corrcoef(a, b)[0, 1]
            assert abs(rho) < 0.1

    def test_scaled_spectrum_matches_unity_reference(self):
        # Amplitude chosen so S(omega=1) = 1; the averaged estimate at the
        # bin closest to omega=1 must agree within 20%.
        spec = NoiseSpectrum(amplitude=1.0, exponent=1.5)
        traces = [generate_trace(spec, 2**14, 1.0, seed=s) for s in range(100)]
        psd = estimate_psd(traces)
        idx = np.argmin(np.abs(psd.frequencies - 1.0))
        omega1 = psd.frequencies[idx]
        assert psd.power[idx] == pytest.approx(1.0 / omega1**1.5, rel=0.20)

    def test_white_noise_slope_is_flat(self):
        spec = NoiseSpectrum(amplitude=1e-3, exponent=0.0)
        traces = [generate_trace(spec, 2**12, 1.0, seed=s) for s in range(50)]
        psd = estimate_psd(traces)
        assert abs(loglog_slope(psd.frequencies, psd.power)) < 0.1

    def test_alpha2_slope_against_brute_force_dft(self):
        # Oracle check: slope of the averaged periodogram computed by the
        # explicit-DFT oracle at log-spaced bins must be -2.0 +- 0.1.
        spec = NoiseSpectrum(amplitude=1e-3, exponent=2.0)
        traces = [generate_trace(spec, 2**14, 1.0, seed=s) for s in range(200)]
        n = 2**14
        bins = np.unique(np.geomspace(1, n // 2, 40).astype(int))
        omega, power = brute_force_psd(traces[:25], bins)
        assert loglog_slope(omega, power) == pytest.approx(-2.0, abs=0.1)
        # and the fast path agrees with the oracle bin by bin
        psd = estimate_psd(traces[:25])
        np.testing.assert_allclose(psd.power[bins - 1], power, rtol=1e-8)


class TestEstimatePsd:
    def test_zero_trace_gives_zero_power(self):
        t = NoiseTrace(samples=np.zeros(256), dt=1.0, seed=(0,))
        psd = estimate_psd([t])
        assert np.all(psd.power == 0)

    def test_single_tone_concentrates_at_its_bin(self):
        n, k0 = 1024, 37
        j = np.arange(n)
        t = NoiseTrace(samples=np.cos(2 * np.pi * k0 * j / n), dt=1.0, seed=(0,))
        psd = estimate_psd([t])
        peak = psd.power[k0 - 1]
        others = np.delete(psd.power, k0 - 1)
        assert np.all(others <= 1e-10 * peak)

    def test_mismatched_traces_rejected(self):
        a = NoiseTrace(samples=np.zeros(256), dt=1.0, seed=(0,))
        b = NoiseTrace(samples=np.zeros(512), dt=1.0, seed=(1,))
        c = NoiseTrace(samples=np.zeros(256), dt=0.5, seed=(2,))
        with pytest.raises(MismatchedTracesError):
            estimate_psd([a, b])
        with pytest.raises(MismatchedTracesError):
            estimate_psd([a, c])
        with pytest.raises(MismatchedTracesError):
            estimate_psd([])

    def test_frequency_axis(self):
        t = NoiseTrace(samples=np.zeros(256), dt=0.5, seed=(0,))
        psd = estimate_psd([t])
        k = np.arange(1, 129)
        np.testing.assert_allclose(psd.frequencies, 2 * np.pi * k / (256 * 0.5))

    def test_alpha_1p5_slope(self):
        spec = NoiseSpectrum(amplitude=1e-3, exponent=1.5)
        traces = [generate_trace(spec, 2**12, 1.0, seed=s) for s in range(100)]
        psd = estimate_psd(traces)
        assert loglog_slope(psd.frequencies, psd.power) == pytest.approx(-1.5, abs=0.1)


class TestFitSpectrum:
    def test_exact_power_law(self):
        omega = np.linspace(0.01, 3.0, 200)
        psd = PsdEstimate(frequencies=omega, power=1e-3 / omega, n_traces_averaged=1)
        fit = fit_spectrum(psd)
        assert fit.amplitude == pytest.approx(1e-3, rel=1e-9)
        assert fit.exponent == pytest.approx(1.0, abs=1e-9)
        assert fit.residual == pytest.approx(0.0, abs=1e-9)

    def test_exact_flat(self):
        omega = np.linspace(0.01, 3.0, 50)
        psd = PsdEstimate(frequencies=omega, power=np.full(50, 1e-4), n_traces_averaged=1)
        fit = fit_spectrum(psd)
        assert fit.amplitude == pytest.approx(1e-4, rel=1e-9)
        assert fit.exponent == pytest.approx(0.0, abs=1e-9)

    def test_band_selection(self):
        omega = np.geomspace(0.01, 3.0, 100)
        power = 1e-3 / omega**2
        power[:10] *= 50.0  # contaminate the low end, then fit above it
        psd = PsdEstimate(frequencies=omega, power=power, n_traces_averaged=1)
        fit = fit_spectrum(psd, band=(omega[10], omega[-1]))
        assert fit.exponent == pytest.approx(2.0, abs=1e-9)

    def test_insufficient_bins(self):
        omega = np.linspace(0.1, 1.0, 5)
        psd = PsdEstimate(frequencies=omega, power=np.ones(5), n_traces_averaged=1)
        with pytest.raises(InsufficientBinsError):
            fit_spectrum(psd)

    def test_round_trip_alpha_2p5(self):
        spec = NoiseSpectrum(amplitude=1e-5, exponent=2.5)
        traces = [generate_trace(spec, 2**12, 1.0, seed=s) for s in range(200)]
        fit = fit_spectrum(estimate_psd(traces))
        assert fit.exponent == pytest.approx(2.5, abs=0.1)
        assert 1e-5 / 1.3 < fit.amplitude < 1e-5 * 1.3


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0, 3.0])
@pytest.mark.parametrize("amp", [1e-6, 1e-4])
def test_round_trip_grid(alpha, amp):
    # Reduced version of the full acceptance sweep: 50 traces per cell.
    spec = NoiseSpectrum(amplitude=amp, exponent=alpha)
    traces = [
        generate_trace(spec, 2**12, 1.0, seed=derive_seed(99, int(alpha * 2), s))
        for s in range(50)
    ]
    fit = fit_spectrum(estimate_psd(traces))
    assert fit.exponent == pytest.approx(alpha, abs=0.1)
    assert amp / 1.3 < fit.amplitude < amp * 1.3


def test_trace_csv_and_sidecar(tmp_path):
    spec = NoiseSpectrum(1e-3, 1.5)
    trace = generate_trace(spec, 256, 1.0, seed=7)
    out = tmp_path / "trace.csv"
    write_trace_csv(trace, spec, out)
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "time,value"
    assert len(rows) == 257
    sidecar = json.loads((tmp_path / "trace.csv.json").read_text())
    assert sidecar["exponent"] == 1.5
    assert sidecar["n_samples"] == 256
    # values round-trip exactly through repr
    t0, v0 = rows[1].split(",")
    assert float(v0) == trace.samples[0]


def test_psd_csv(tmp_path):
    spec = NoiseSpectrum(1e-3, 1.0)
    psd = estimate_psd([generate_trace(spec, 256, 1.0, seed=1)])
    out = tmp_path / "psd.csv"
    write_psd_csv(psd, out)
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "omega,power"
    assert len(rows) == 129
