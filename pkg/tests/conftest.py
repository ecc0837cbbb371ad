import numpy as np
import pytest

from gemkit import DesignTable, FeatureMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_matrix(values, prefix="g"):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    return FeatureMatrix(tuple(f"s{i + 1}" for i in range(n)),
                         tuple(f"{prefix}{j + 1}" for j in range(p)), values)


def factorial_design(reps=1):
    a = ["a1", "a1", "a2", "a2"] * reps
    b = ["b1", "b2", "b1", "b2"] * reps
    return DesignTable(tuple(f"s{i + 1}" for i in range(4 * reps)), {"A": a, "B": b})


def saturated_design():
    """Full factorial over 4 samples with y = [0, 2, 4, 6]; "lo" is coded -1."""
    from gemkit.design import ModelFormula, encode_design
    d = DesignTable(("s1", "s2", "s3", "s4"),
                    {"A": ["lo", "lo", "hi", "hi"], "B": ["lo", "hi", "lo", "hi"]})
    x = make_matrix([[0.0], [2.0], [4.0], [6.0]])
    return x, d, encode_design(d, ModelFormula.parse("A * B"))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
