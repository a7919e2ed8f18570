import numpy as np
import pytest

from tomokit import DensityLike, random_density
from tomokit.experiments import standard_homodyne_descriptor
from tomokit.operators import operator_from_descriptor, pauli_six_state


@pytest.fixture(scope="session")
def t2():
    return pauli_six_state()


@pytest.fixture(scope="session")
def homodyne10():
    """Reference quadrature operator: dim 10, 15 angles, 50 bins on [-7, 7]."""
    return operator_from_descriptor(standard_homodyne_descriptor())


@pytest.fixture(scope="session")
def homodyne_small():
    """Compact quadrature operator for fast pipeline tests."""
    return operator_from_descriptor(
        standard_homodyne_descriptor(dim=4, n_angles=5, n_bins=12, half_width=6.0)
    )


@pytest.fixture(scope="session")
def small_descriptor():
    return standard_homodyne_descriptor(dim=4, n_angles=5, n_bins=12, half_width=6.0)


def maximally_mixed(N: int) -> DensityLike:
    return DensityLike.from_array(np.eye(N, dtype=complex) / N)


def conditioned_full_rank(N: int, seed: int, mix: float = 0.3) -> DensityLike:
    """Random full-rank state kept away from the PSD boundary."""
    raw = random_density(N, N, seed).entries
    return DensityLike.from_array((1.0 - mix) * raw + mix * np.eye(N) / N)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", None) != "call":
                continue
            if "test_acceptance" in report.nodeid:
                rows.append((report.nodeid.split("::")[-1], status))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(rows):
            flag = "PASS" if status == "passed" else "FAIL"
            terminalreporter.write_line(f"{flag}  {name}")
