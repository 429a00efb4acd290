import math

import numpy as np
import pytest

from solvers import ProblemSpec, Resolution

LIOUVILLE_LAMBDA = 0.4
# smaller root of 8a = lambda_bar (1 + a)^2 for lambda_bar = 0.4
LIOUVILLE_A = 9.0 - math.sqrt(80.0)


def liouville_phi(r, a=LIOUVILLE_A):
    return 2.0 * np.log((1.0 + a) / (1.0 + a * np.asarray(r) ** 2))


@pytest.fixture
def torsion_spec() -> ProblemSpec:
    return ProblemSpec.from_strings(2, "1", "0", "1")


@pytest.fixture
def liouville_spec() -> ProblemSpec:
    return ProblemSpec.from_strings(2, "exp(u)", "0", "1")


@pytest.fixture
def small_resolution() -> Resolution:
    return Resolution(degree=12, inner=8, mid=8, outer=12)


@pytest.fixture
def write_config(tmp_path):
    def write(text: str, name: str = "run.ini"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
