"""Randomized benchmarking of single-qubit Clifford gates under 1/f noise.

Gates are drawn uniformly from the 24-element single-qubit Clifford group.
Each gate is followed by a stochastic error rotation

    E = exp(-i (eps_x sigma_x + eps_z sigma_z) / 2)

whose angles are weighted sums of samples from two independent noise
traces sharing one spectrum (an x-coupled channel and a z-coupled one).
Two gate implementations are modeled:

* uncorrected: one noise sample per gate, unit weight;
* corrected: five samples per gate with zero-sum weights, the abstract
  signature of a composite pulse that cancels quasi-static noise at the
  cost of a longer duration.

The per-length fidelity F^i is the squared overlap between the noisy and
the noiseless state after i gates. The ratio curve kappa^i divides the
corrected fidelity by the uncorrected one; where it sits relative to 1
encodes the noise exponent. ``calibrate_models`` tunes the corrected
coupling so the crossover lands at a chosen exponent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .noisegen import NoiseSpectrum, generate_trace
from .seeds import Seed, derive_seed, seed_fingerprint

N_CLIFFORD = 24
DEFAULT_N_GATES = 200
DEFAULT_N_RUNS = 200

# Sub-seed tags inside one RB run.
_TAG_SEQUENCE = 0
_TAG_NOISE_X = 1
_TAG_NOISE_Z = 2

# Uncorrected error-strength scale; fixed, the corrected scale is calibrated.
UNCORRECTED_COUPLING = 3.0
# Zero-sum weight pattern of the corrected gate, normalized to sum(|w|) = 1
# to match the uncorrected per-gate exposure. Both the 0th and 1st moments
# vanish, so static and linearly drifting noise cancel exactly.
CORRECTED_WEIGHTS = (0.125, -0.25, 0.25, -0.25, 0.125)

# Window over which the "long-sequence" mean of kappa is taken (1-based
# gate counts, inclusive).
KAPPA_WINDOW = (150, 200)

# Fixed seed for model calibration; calibration is a deterministic
# procedure, not an experiment.
CALIBRATION_SEED = 20210831


class GateModelError(ValueError):
    """Gate model violates its structural invariants."""


class MismatchedCurvesError(ValueError):
    """Curves combined into a ratio do not describe the same experiment."""


class CalibrationError(RuntimeError):
    """No crossover found while calibrating the gate-model pair."""


# ---------------------------------------------------------------------------
# Clifford group
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CliffordGate:
    index: int
    unitary: np.ndarray  # 2x2, det = +1


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    """Fix the overall sign of an SU(2) matrix deterministically.

    The two SU(2) representatives of a rotation differ by -1; pick the one
    whose first element of significant magnitude has positive real part
    (positive imaginary part breaking ties).
    """
    for x in u.ravel():
        if abs(x) > 1e-8:
            if x.real < -1e-10 or (abs(x.real) <= 1e-10 and x.imag < 0):
                return -u
            return u.copy()
    raise ValueError("zero matrix")


def _matrix_key(u: np.ndarray) -> tuple:
    c = _canonical_sign(u)
    return tuple(np.round(c.ravel().view(float), 9))


@lru_cache(maxsize=1)
def clifford_table() -> tuple[CliffordGate, ...]:
    """All 24 single-qubit Clifford gates as SU(2) matrices.

    Built by closing the group generated by 90-degree x and z rotations;
    closure, unitarity, and the presence of the identity are asserted at
    construction time.
    """
    rx90 = np.array([[1, -1j], [-1j, 1]], dtype=complex) / math.sqrt(2)
    rz90 = np.array([[np.exp(-0.25j * np.pi), 0], [0, np.exp(0.25j * np.pi)]])
    generators = [rx90, rz90]

    found: dict[tuple, np.ndarray] = {}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        u = frontier.pop()
        key = _matrix_key(u)
        if key in found:
            continue
        found[key] = _canonical_sign(u)
        for g in generators:
            frontier.append(g @ u)
    if len(found) != N_CLIFFORD:
        raise RuntimeError(f"Clifford closure produced {len(found)} elements")

    identity_key = _matrix_key(np.eye(2, dtype=complex))
    keys = [identity_key] + sorted(k for k in found if k != identity_key)
    gates = []
    for i, key in enumerate(keys):
        u = found[key]
        if not np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12):
            raise RuntimeError("non-unitary Clifford representative")
        u.setflags(write=False)
        gates.append(CliffordGate(index=i, unitary=u))
    return tuple(gates)


def _clifford_array() -> np.ndarray:
    return np.stack([g.unitary for g in clifford_table()])


# ---------------------------------------------------------------------------
# Gate models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateModel:
    """How one logical gate consumes noise samples.

    ``noise_weights`` multiply the consecutive samples a gate spans, and
    the weighted sums are scaled by the per-channel couplings to give the
    error angles.
    """

    kind: str  # "uncorrected" | "corrected"
    duration_samples: int
    noise_weights: tuple[float, ...]
    coupling_x: float
    coupling_z: float

    def __post_init__(self):
        w = np.asarray(self.noise_weights, dtype=float)
        if len(w) != self.duration_samples:
            raise GateModelError("noise_weights length must equal duration_samples")
        if self.kind == "uncorrected":
            if not (np.all(w > 0) and np.allclose(w, w[0]) and abs(w.sum() - 1.0) < 1e-12):
                raise GateModelError(
                    "uncorrected model needs equal positive weights summing to 1"
                )
        elif self.kind == "corrected":
            if w.sum() != 0.0:
                raise GateModelError("corrected model weights must sum to 0 exactly")
            if self.duration_samples < 2:
                raise GateModelError("corrected model must span multiple samples")
        else:
            raise GateModelError(f"unknown gate model kind {self.kind!r}")

    @property
    def weights_array(self) -> np.ndarray:
        return np.asarray(self.noise_weights, dtype=float)


def uncorrected_model(coupling: float = UNCORRECTED_COUPLING) -> GateModel:
    return GateModel(
        kind="uncorrected",
        duration_samples=1,
        noise_weights=(1.0,),
        coupling_x=coupling,
        coupling_z=coupling,
    )


def corrected_model(coupling: float) -> GateModel:
    return GateModel(
        kind="corrected",
        duration_samples=len(CORRECTED_WEIGHTS),
        noise_weights=CORRECTED_WEIGHTS,
        coupling_x=coupling,
        coupling_z=coupling,
    )


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RbCurve:
    """Sequence fidelities F^i for i = 1..n_gates, averaged over runs."""

    fidelities: np.ndarray
    n_runs_averaged: int
    spectrum: NoiseSpectrum
    model_kind: str

    def __post_init__(self):
        f = self.fidelities
        if np.any(f < -1e-12) or np.any(f > 1 + 1e-12):
            raise ValueError("fidelities must lie in [0, 1]")

    @property
    def n_gates(self) -> int:
        return len(self.fidelities)


@dataclass(frozen=True)
class RatioCurve:
    """kappa^i = corrected F^i / uncorrected F^i."""

    ratios: np.ndarray
    spectrum: NoiseSpectrum

    def __post_init__(self):
        if np.any(~np.isfinite(self.ratios)) or np.any(self.ratios <= 0):
            raise ValueError("ratios must be positive and finite")


# ---------------------------------------------------------------------------
# Noisy evolution
# ---------------------------------------------------------------------------

def _error_rotations(eps_x: np.ndarray, eps_z: np.ndarray) -> np.ndarray:
    """exp(-i (ex*sx + ez*sz)/2) for arrays of angles, shape (..., 2, 2)."""
    theta = 0.5 * np.hypot(eps_x, eps_z)
    cos = np.cos(theta)
    # sin(theta)/theta, safe at 0
    sinc = np.where(theta > 1e-30, np.sin(np.maximum(theta, 1e-300)) / np.maximum(theta, 1e-300), 1.0)
    hx = 0.5 * sinc * eps_x
    hz = 0.5 * sinc * eps_z
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = cos - 1j * hz
    out[..., 0, 1] = -1j * hx
    out[..., 1, 0] = -1j * hx
    out[..., 1, 1] = cos + 1j * hz
    return out


def apply_noisy_gate(
    state: np.ndarray,
    gate: CliffordGate,
    model: GateModel,
    noise_window_x: np.ndarray,
    noise_window_z: np.ndarray,
) -> np.ndarray:
    """One noisy gate application: E(eps) @ U @ state, renormalized."""
    wx = np.asarray(noise_window_x, dtype=float)
    wz = np.asarray(noise_window_z, dtype=float)
    if len(wx) != model.duration_samples or len(wz) != model.duration_samples:
        raise GateModelError(
            f"noise windows must have length {model.duration_samples}, "
            f"got {len(wx)} and {len(wz)}"
        )
    eps_x = model.coupling_x * float(model.weights_array @ wx)
    eps_z = model.coupling_z * float(model.weights_array @ wz)
    err = _error_rotations(np.array(eps_x), np.array(eps_z))
    out = err @ (gate.unitary @ np.asarray(state, dtype=complex))
    return out / np.linalg.norm(out)


def _trace_length(n_gates: int, duration: int) -> int:
    needed = max(256, n_gates * duration)
    return 1 << (needed - 1).bit_length()


def _gate_angles(
    spec: NoiseSpectrum, model: GateModel, n_gates: int, noise_seed, channel_tag: int
) -> np.ndarray:
    """Per-gate error angle for one channel from a fresh noise trace."""
    trace = generate_trace(
        spec,
        _trace_length(n_gates, model.duration_samples),
        dt=1.0,
        seed=derive_seed(noise_seed, channel_tag),
    )
    used = trace.samples[: n_gates * model.duration_samples]
    windows = used.reshape(n_gates, model.duration_samples)
    coupling = model.coupling_x if channel_tag == _TAG_NOISE_X else model.coupling_z
    return coupling * (windows @ model.weights_array)


def _simulate_runs(
    spec: NoiseSpectrum,
    model: GateModel,
    n_gates: int,
    run_seeds: list,
    sequence_seeds: list,
) -> np.ndarray:
    """Batched RB: returns per-run fidelity curves, shape (n_runs, n_gates)."""
    n_runs = len(run_seeds)
    indices = np.empty((n_runs, n_gates), dtype=np.intp)
    eps_x = np.empty((n_runs, n_gates))
    eps_z = np.empty((n_runs, n_gates))
    for r, (rs, qs) in enumerate(zip(run_seeds, sequence_seeds)):
        rng = np.random.default_rng(derive_seed(qs, _TAG_SEQUENCE))
        indices[r] = rng.integers(0, N_CLIFFORD, size=n_gates)
        eps_x[r] = _gate_angles(spec, model, n_gates, rs, _TAG_NOISE_X)
        eps_z[r] = _gate_angles(spec, model, n_gates, rs, _TAG_NOISE_Z)

    unitaries = _clifford_array()
    ideal = np.zeros((n_runs, 2), dtype=complex)
    noisy = np.zeros((n_runs, 2), dtype=complex)
    ideal[:, 0] = 1.0
    noisy[:, 0] = 1.0

    fid = np.empty((n_runs, n_gates))
    for i in range(n_gates):
        u = unitaries[indices[:, i]]
        err = _error_rotations(eps_x[:, i], eps_z[:, i])
        ideal = np.einsum("rij,rj->ri", u, ideal)
        noisy = np.einsum("rij,rj->ri", err @ u, noisy)
        ideal /= np.linalg.norm(ideal, axis=1, keepdims=True)
        noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
        overlap = np.sum(ideal.conj() * noisy, axis=1)
        fid[:, i] = np.abs(overlap) ** 2
    return fid


def run_rb_sequence(
    spec: NoiseSpectrum,
    model: GateModel,
    n_gates: int = DEFAULT_N_GATES,
    seed: Seed = 0,
    sequence_seed: Seed | None = None,
) -> np.ndarray:
    """Fidelity after each gate of one random Clifford sequence.

    The gate sequence is drawn from ``sequence_seed`` (default: the run
    seed), the two noise traces from the run seed; passing the same
    ``sequence_seed`` with different run seeds replays one sequence under
    independent noise.
    """
    if n_gates < 1:
        raise ValueError("n_gates must be >= 1")
    qs = seed if sequence_seed is None else sequence_seed
    return _simulate_runs(spec, model, n_gates, [seed], [qs])[0]


def average_rb(
    spec: NoiseSpectrum,
    model: GateModel,
    n_runs: int = DEFAULT_N_RUNS,
    n_gates: int = DEFAULT_N_GATES,
    seed: Seed = 0,
    sequence_seed: Seed | None = None,
) -> RbCurve:
    """Pointwise mean of ``n_runs`` independent RB runs.

    Run seeds derive from ``seed``; sequence seeds derive from
    ``sequence_seed`` when given (so a corrected/uncorrected pair can share
    its gate sequences) and from the run seeds otherwise.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    run_seeds = [derive_seed(seed, r) for r in range(n_runs)]
    if sequence_seed is None:
        sequence_seeds = run_seeds
    else:
        sequence_seeds = [derive_seed(sequence_seed, r) for r in range(n_runs)]
    fid = _simulate_runs(spec, model, n_gates, run_seeds, sequence_seeds)
    return RbCurve(
        fidelities=fid.mean(axis=0),
        n_runs_averaged=n_runs,
        spectrum=spec,
        model_kind=model.kind,
    )


def ratio_curve(corrected: RbCurve, uncorrected: RbCurve) -> RatioCurve:
    """Elementwise corrected/uncorrected fidelity ratio."""
    if corrected.n_gates != uncorrected.n_gates:
        raise MismatchedCurvesError("curves have different lengths")
    if corrected.spectrum != uncorrected.spectrum:
        raise MismatchedCurvesError("curves were simulated under different spectra")
    denom = np.maximum(uncorrected.fidelities, 1e-6)
    return RatioCurve(ratios=corrected.fidelities / denom, spectrum=corrected.spectrum)


# ---------------------------------------------------------------------------
# Decay fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    gamma: float
    residual: float
    converged: bool


def _decay_model(n, gamma):
    return 0.5 * (1.0 + np.exp(-gamma * n))


def fit_decay(curve: RbCurve | np.ndarray) -> DecayFit:
    """Fit F = (1 + exp(-gamma*n))/2 over n = 1..N by least squares.

    Fitted directly in the nonlinear form so the fit stays valid as F
    approaches the 1/2 floor.
    """
    f = curve.fidelities if isinstance(curve, RbCurve) else np.asarray(curve, float)
    if len(f) < 10:
        raise ValueError("need at least 10 points to fit a decay")
    n = np.arange(1, len(f) + 1, dtype=float)

    tail = np.clip(2.0 * np.mean(f[-10:]) - 1.0, 1e-12, 1.0)
    guess = max(-math.log(tail) / n[-1], 1e-12)
    try:
        popt, _ = curve_fit(
            _decay_model, n, f, p0=[guess], bounds=(0.0, np.inf), maxfev=2000
        )
        gamma = float(popt[0])
        converged = True
    except RuntimeError:
        gamma = float("nan")
        converged = False
    resid = (
        float(np.sqrt(np.mean((f - _decay_model(n, gamma)) ** 2)))
        if converged
        else float("nan")
    )
    return DecayFit(gamma=gamma, residual=resid, converged=converged)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def long_sequence_kappa(ratios: np.ndarray, window: tuple[int, int] = KAPPA_WINDOW) -> float:
    """Mean of kappa^i over the late-sequence window (1-based, inclusive)."""
    lo, hi = window
    return float(np.mean(np.asarray(ratios)[lo - 1 : hi]))


def _kappa_at(
    alpha: float,
    corrected: GateModel,
    uncorrected: GateModel,
    amplitude: float,
    n_runs: int,
    n_gates: int,
    seed: Seed,
) -> float:
    spec = NoiseSpectrum(amplitude=amplitude, exponent=alpha)
    seq = derive_seed(seed, 0)
    unc = average_rb(spec, uncorrected, n_runs, n_gates, seed=derive_seed(seed, 1), sequence_seed=seq)
    corr = average_rb(spec, corrected, n_runs, n_gates, seed=derive_seed(seed, 2), sequence_seed=seq)
    return long_sequence_kappa(ratio_curve(corr, unc).ratios)


def calibrate_models(
    reference_amp: float = 1e-3,
    target_crossover: float = 1.0,
    n_runs: int = DEFAULT_N_RUNS,
    n_gates: int = DEFAULT_N_GATES,
    seed: Seed = CALIBRATION_SEED,
    tol: float = 0.01,
    max_iter: int = 40,
) -> tuple[GateModel, GateModel]:
    """Tune the corrected coupling so kappa crosses 1 at the target exponent.

    Returns (uncorrected, corrected). The uncorrected coupling is fixed;
    bisection adjusts the corrected coupling until the long-sequence mean
    kappa at (target_crossover, reference_amp) equals 1 within ``tol``.
    The duration ratio and weight pattern stay fixed throughout. Raises
    CalibrationError when the bracket cannot be established or the
    calibrated pair shows no crossover inside alpha in (0, 3).
    """
    unc = uncorrected_model()

    def kappa_gap(coupling: float) -> float:
        corr = corrected_model(coupling)
        return (
            _kappa_at(target_crossover, corr, unc, reference_amp, n_runs, n_gates, seed)
            - 1.0
        )

    lo, hi = UNCORRECTED_COUPLING, 8.0 * UNCORRECTED_COUPLING
    gap_lo = kappa_gap(lo)
    gap_hi = kappa_gap(hi)
    for _ in range(8):
        if gap_lo > 0:
            break
        lo *= 0.5
        gap_lo = kappa_gap(lo)
    for _ in range(8):
        if gap_hi < 0:
            break
        hi *= 2.0
        gap_hi = kappa_gap(hi)
    if gap_lo <= 0 or gap_hi >= 0:
        raise CalibrationError("could not bracket the kappa = 1 crossing")

    coupling = 0.5 * (lo + hi)
    for _ in range(max_iter):
        coupling = 0.5 * (lo + hi)
        gap = kappa_gap(coupling)
        if abs(gap) < tol:
            break
        if gap > 0:
            lo = coupling
        else:
            hi = coupling

    corr = corrected_model(coupling)
    probe = 0.25 * target_crossover
    if not (
        _kappa_at(probe, corr, unc, reference_amp, n_runs, n_gates, seed) < 1.0
        < _kappa_at(min(2.0 * target_crossover, 3.0), corr, unc, reference_amp, n_runs, n_gates, seed)
    ):
        raise CalibrationError("calibrated pair shows no crossover in alpha in (0, 3)")
    return unc, corr


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------

def _model_dict(model: GateModel) -> dict:
    return {
        "kind": model.kind,
        "duration_samples": model.duration_samples,
        "noise_weights": list(model.noise_weights),
        "coupling_x": model.coupling_x,
        "coupling_z": model.coupling_z,
    }


def save_models(
    uncorrected: GateModel,
    corrected: GateModel,
    path: str | Path,
    metadata: dict | None = None,
) -> None:
    doc = {
        "uncorrected": _model_dict(uncorrected),
        "corrected": _model_dict(corrected),
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_models(path: str | Path) -> tuple[GateModel, GateModel]:
    doc = json.loads(Path(path).read_text())
    models = []
    for key in ("uncorrected", "corrected"):
        d = doc[key]
        models.append(
            GateModel(
                kind=d["kind"],
                duration_samples=d["duration_samples"],
                noise_weights=tuple(d["noise_weights"]),
                coupling_x=d["coupling_x"],
                coupling_z=d["coupling_z"],
            )
        )
    return models[0], models[1]


def model_pair_id(uncorrected: GateModel, corrected: GateModel) -> str:
    """Short content hash identifying a calibrated pair."""
    import hashlib

    blob = json.dumps(
        [_model_dict(uncorrected), _model_dict(corrected)], sort_keys=True
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
