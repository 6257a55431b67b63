import numpy as np
import pytest

from intprior.core import HypothesisTest
from intprior.data import load_preset, order_for_test
from intprior.oracle import DEMO_SPECS
from intprior.sampler import ModelContext


@pytest.fixture(scope="session")
def breast_cancer():
    return load_preset("breast_cancer")


@pytest.fixture(scope="session")
def receptor_ctx():
    data, test = order_for_test(load_preset("breast_cancer"), ["receptor"])
    return ModelContext(data, test, "logit")


@pytest.fixture(scope="session")
def oracle_ctx():
    spec = DEMO_SPECS["default"]
    r1, r2 = spec.replication_indices()
    return spec, ModelContext(spec.dataset, HypothesisTest(1, 2), spec.link, r1, r2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"CRITERION {number}: {'PASS' if ok else 'FAIL'}: {detail}")
