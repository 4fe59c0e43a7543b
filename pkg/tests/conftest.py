import numpy as np
import pytest

from noisedistill import tensor as nt


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Scale-free gradient discrepancy: ||a - n|| / max(||a||, ||n||, tiny)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


@pytest.fixture(autouse=True)
def _test_precision():
    """All tests run at 64-bit with checked construction."""
    nt.set_precision("test")
    nt.set_checked(True)
    yield
