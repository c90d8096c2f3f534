"""rbspectro: randomized-benchmarking noise spectroscopy.

Simulates single-qubit Clifford randomized benchmarking under synthesized
1/f^alpha noise and inverts the simulation with a from-scratch neural
network to recover the noise exponent and amplitude from RB curves.
"""

from .noisegen import (
    NoiseSpectrum,
    NoiseTrace,
    PsdEstimate,
    SpectrumFit,
    estimate_psd,
    fit_spectrum,
    generate_trace,
)

__version__ = "0.1.0"

__all__ = [
    "NoiseSpectrum",
    "NoiseTrace",
    "PsdEstimate",
    "SpectrumFit",
    "estimate_psd",
    "fit_spectrum",
    "generate_trace",
    "__version__",
]
