import math

import pytest
from hypothesis import given, strategies as st

from statlin_plan.normal import inverse_normal_cdf, normal_cdf


def erf_series(x, terms=80):
    total, term = 0.0, x
    for n in range(terms):
        total += term / (2 * n + 1)
        term *= -x * x / (n + 1)
    return 2.0 / math.sqrt(math.pi) * total


def quantile_oracle(p):
    lo, hi = -8.0, 8.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1 + erf_series(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_median():
    assert inverse_normal_cdf(0.5) == 0.0


def test_reference_quantile():
    oracle = quantile_oracle(0.99)
    assert oracle == pytest.approx(2.3263478740, abs=1e-9)
    assert inverse_normal_cdf(0.99) == pytest.approx(oracle, abs=1e-9)
    assert inverse_normal_cdf(0.99) == pytest.approx(2.3263478740, abs=1e-8)


@pytest.mark.parametrize("p", [0.51, 0.6, 0.75, 0.9, 0.95, 0.975, 0.999])
def test_against_series_oracle(p):
    assert inverse_normal_cdf(p) == pytest.approx(quantile_oracle(p), abs=1e-9)


@given(st.floats(1e-6, 1 - 1e-6))
def test_symmetry(p):
    # 1 - p is inexact in floating point; keep p away from the tails
    assert inverse_normal_cdf(1 - p) == pytest.approx(-inverse_normal_cdf(p), abs=1e-9)


@given(st.floats(1e-12, 1 - 1e-12))
def test_roundtrip(p):
    assert normal_cdf(inverse_normal_cdf(p)) == pytest.approx(p, rel=1e-8, abs=1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_domain(p):
    with pytest.raises(ValueError):
        inverse_normal_cdf(p)
