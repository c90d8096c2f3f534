import pytest

from rbspectro.rbsim import calibrate_models


@pytest.fixture(scope="session")
def calibrated_pair():
    """One calibrated (uncorrected, corrected) model pair for the session."""
    return calibrate_models()
