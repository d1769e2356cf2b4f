import math

import numpy as np
import pytest

from sri.dataset import SynthConfig, corrupt_labels, generate_synthetic, sample_annotations


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def closed_form_means(config: SynthConfig):
    """Exact P(L=1 | T=t) for the synthetic design without covariates.

    The embedding coordinates sum to ``t * sum(alpha) + noise`` where the
    noise is ``d * eps`` (one draw per unit) or a sum of ``d`` independent
    draws; the label is 1 exactly when that sum exceeds ``-intercept / slope``.
    """
    total = config.coefficients().sum()
    scale = config.d if config.noise == "unit" else math.sqrt(config.d)
    return [normal_cdf((config.intercept + config.slope * t * total) / (config.slope * scale)) for t in (0, 1)]


@pytest.fixture(scope="session")
def small_noisy():
    """1200 units, 40% annotated by two 0.9-accuracy coders, d=8."""
    ds = generate_synthetic(SynthConfig(n=1200, d=8, seed=5, coef_seed=0))
    return sample_annotations(corrupt_labels(ds, [0.9, 0.9], 6), 0.4, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def log(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}; {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
