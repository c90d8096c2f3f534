"""Synthesis and spectral validation of 1/f^alpha noise.

A noise process is specified by its power spectral density

    S(omega) = A / omega**alpha        (all quantities in units of t0 = 1)

and realized in the time domain by assigning each positive-frequency
Fourier coefficient the exact magnitude demanded by the target density,
a uniformly random phase, and inverse-transforming to a real trace.
The companion estimator is the plain averaged periodogram with the
convention

    S_est(omega_k) = dt / n * |X_k|^2,   omega_k = 2*pi*k / (n*dt),

which the generator inverts exactly, so a synthesized ensemble
reproduces the target density bin by bin.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeds import Seed, as_seed_sequence, seed_fingerprint

ALPHA_MIN = 0.0
ALPHA_MAX = 3.0
MIN_TRACE_SAMPLES = 256


class NoiseGenError(ValueError):
    """Invalid spectrum parameters or trace request."""


class MismatchedTracesError(ValueError):
    """Traces passed to the estimator differ in length or sample interval."""


class InsufficientBinsError(ValueError):
    """Too few frequency bins in the requested fit band."""


@dataclass(frozen=True)
class NoiseSpectrum:
    """Power-law spectrum S(omega) = amplitude / omega**exponent.

    ``amplitude`` is the dimensionless product A*t0 and ``exponent`` the
    power-law slope alpha. The generation method is valid for
    0 <= alpha <= 3.
    """

    amplitude: float
    exponent: float

    def __post_init__(self):
        if not (self.amplitude > 0) or not math.isfinite(self.amplitude):
            raise NoiseGenError(f"amplitude must be positive, got {self.amplitude}")
        if not (ALPHA_MIN <= self.exponent <= ALPHA_MAX):
            raise NoiseGenError(
                f"exponent must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {self.exponent}"
            )

    def psd(self, omega):
        """Target density at angular frequency ``omega`` (> 0)."""
        omega = np.asarray(omega, dtype=float)
        return self.amplitude / omega**self.exponent


@dataclass(frozen=True)
class NoiseTrace:
    """A sampled realization xi(t) of a noise spectrum."""

    samples: np.ndarray
    dt: float
    seed: tuple[int, ...]

    def __post_init__(self):
        n = len(self.samples)
        if n == 0 or n & (n - 1):
            raise NoiseGenError(f"trace length must be a power of two, got {n}")
        if not np.all(np.isfinite(self.samples)):
            raise NoiseGenError("trace contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class PsdEstimate:
    """Averaged periodogram: density estimates on the positive-frequency bins."""

    frequencies: np.ndarray
    power: np.ndarray
    n_traces_averaged: int

    def __post_init__(self):
        if np.any(np.diff(self.frequencies) <= 0) or np.any(self.frequencies <= 0):
            raise ValueError("frequencies must be strictly increasing and positive")
        if np.any(self.power < 0):
            raise ValueError("power values must be nonnegative")


def _check_length(n_samples: int) -> None:
    if n_samples < MIN_TRACE_SAMPLES or n_samples & (n_samples - 1):
        raise NoiseGenError(
            f"n_samples must be a power of two >= {MIN_TRACE_SAMPLES}, got {n_samples}"
        )


def generate_trace(spec: NoiseSpectrum, n_samples: int, dt: float, seed: Seed) -> NoiseTrace:
    """Synthesize one real trace whose periodogram matches ``spec`` exactly.

    Coefficient magnitudes are fixed at |c_k| = sqrt(n * S(omega_k) / dt)
    so that the periodogram convention above is inverted bin by bin; only
    the phases are random. The DC bin is zeroed (the density diverges there
    for alpha > 0), which makes the lowest resolvable frequency
    2*pi/(n*dt); size traces accordingly when very slow noise matters.
    The Nyquist coefficient must be real and gets a random sign.
    """
    _check_length(n_samples)
    if not dt > 0:
        raise NoiseGenError(f"dt must be positive, got {dt}")

    ss = as_seed_sequence(seed)
    rng = np.random.default_rng(ss)

    k = np.arange(1, n_samples // 2 + 1)
    omega = 2.0 * np.pi * k / (n_samples * dt)
    mag = np.sqrt(n_samples * spec.psd(omega) / dt)

    u = rng.uniform(0.0, 1.0, size=n_samples // 2)
    coef = np.zeros(n_samples // 2 + 1, dtype=complex)
    coef[1:-1] = mag[:-1] * np.exp(2j * np.pi * u[:-1])
    coef[-1] = mag[-1] * np.where(u[-1] < 0.5, -1.0, 1.0)

    samples = np.fft.irfft(coef, n=n_samples)
    return NoiseTrace(samples=samples, dt=float(dt), seed=seed_fingerprint(ss))


def estimate_psd(traces: list[NoiseTrace]) -> PsdEstimate:
    """Periodogram averaged over traces, DC bin excluded."""
    if not traces:
        raise MismatchedTracesError("need at least one trace")
    n = traces[0].n_samples
    dt = traces[0].dt
    for t in traces[1:]:
        if t.n_samples != n or t.dt != dt:
            raise MismatchedTracesError(
                f"all traces must share length and dt; got ({t.n_samples}, {t.dt}) "
                f"vs ({n}, {dt})"
            )
    stacked = np.stack([t.samples for t in traces])
    spectra = np.fft.rfft(stacked, axis=1)[:, 1:]
    power = (dt / n) * np.mean(np.abs(spectra) ** 2, axis=0)
    k = np.arange(1, n // 2 + 1)
    omega = 2.0 * np.pi * k / (n * dt)
    return PsdEstimate(frequencies=omega, power=power, n_traces_averaged=len(traces))


@dataclass(frozen=True)
class SpectrumFit:
    amplitude: float
    exponent: float
    residual: float


def fit_spectrum(
    psd: PsdEstimate, band: tuple[float, float] | None = None
) -> SpectrumFit:
    """Recover (A, alpha) from a density estimate by log-log regression.

    Fits log S = log A - alpha * log omega by least squares over the bins
    inside ``band`` (inclusive; default: all bins). The residual is the
    RMS misfit in log space.
    """
    if band is None:
        mask = np.ones(len(psd.frequencies), dtype=bool)
    else:
        lo, hi = band
        mask = (psd.frequencies >= lo) & (psd.frequencies <= hi)
    if np.count_nonzero(mask) < 10:
        raise InsufficientBinsError(
            f"fit band contains {np.count_nonzero(mask)} bins, need at least 10"
        )
    omega = psd.frequencies[mask]
    power = psd.power[mask]
    if np.any(power <= 0):
        raise InsufficientBinsError("fit band contains bins with zero power")

    logw = np.log(omega)
    logp = np.log(power)
    slope, intercept = np.polyfit(logw, logp, 1)
    resid = float(np.sqrt(np.mean((logp - (slope * logw + intercept)) ** 2)))
    return SpectrumFit(amplitude=float(np.exp(intercept)), exponent=float(-slope), residual=resid)


def write_trace_csv(trace: NoiseTrace, spec: NoiseSpectrum, path: str | Path) -> None:
    """Two-column (time, value) CSV plus a JSON sidecar with the spectrum metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "value"])
        for j, x in enumerate(trace.samples):
            writer.writerow([repr(j * trace.dt), repr(float(x))])
    sidecar = {
        "amplitude": spec.amplitude,
        "exponent": spec.exponent,
        "n_samples": trace.n_samples,
        "dt": trace.dt,
        "seed": list(trace.seed),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def write_psd_csv(psd: PsdEstimate, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega", "power"])
        for w, p in zip(psd.frequencies, psd.power):
            writer.writerow([repr(float(w)), repr(float(p))])
