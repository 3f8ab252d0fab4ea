import math

import numpy as np
import pytest

from persona_bench.utils.errors import InvalidArgumentError
from persona_bench.utils.tdist import regularized_incomplete_beta, t_sf, two_sided_p


def quadrature_sf(t: float, df: float) -> float:
    """Upper tail from 0.5 minus the density integrated over [0, t]."""
    nodes, weights = np.polynomial.legendre.leggauss(96)
    x = 0.5 * t * (nodes + 1.0)
    log_norm = (
        math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    )
    density = np.exp(log_norm - (df + 1) / 2 * np.log1p(x * x / df))
    return 0.5 - 0.5 * t * float(np.sum(weights * density))


def test_zero_statistic() -> None:
    assert two_sided_p(0.0, 5) == pytest.approx(1.0)
    assert t_sf(0.0, 5) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "df, t",
    [(10, 2.228), (30, 2.042), (10000, 1.96)],
)
def test_critical_values(df: float, t: float) -> None:
    assert two_sided_p(t, df) == pytest.approx(0.05, abs=1e-3)


def test_cauchy_tail() -> None:
    assert t_sf(1.0, 1) == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("df", [1, 2, 3, 7, 12, 40, 152])
@pytest.mark.parametrize("t", [0.3, 1.0, 2.5, 4.0])
def test_against_quadrature(df: float, t: float) -> None:
    assert t_sf(t, df) == pytest.approx(quadrature_sf(t, df), abs=1e-8)


def test_symmetry_and_monotonicity() -> None:
    ts = np.linspace(-6, 6, 49)
    tails = [t_sf(float(t), 8) for t in ts]
    assert all(a > b for a, b in zip(tails, tails[1:]))
    for t in (0.5, 1.7, 3.3):
        assert t_sf(-t, 8) == pytest.approx(1.0 - t_sf(t, 8))
        assert two_sided_p(-t, 8) == pytest.approx(two_sided_p(t, 8))


def test_infinite_statistic() -> None:
    assert t_sf(math.inf, 4) == 0.0
    assert t_sf(-math.inf, 4) == 1.0
    assert two_sided_p(math.inf, 4) == 0.0


def test_large_statistic_stays_positive() -> None:
    p = two_sided_p(40.0, 152)
    assert 0.0 < p < 1e-50


@pytest.mark.parametrize("df", [0, 0.5, -3])
def test_rejects_small_df(df: float) -> None:
    with pytest.raises(InvalidArgumentError):
        t_sf(1.0, df)


def test_rejects_nan() -> None:
    with pytest.raises(InvalidArgumentError):
        t_sf(math.nan, 3)


def test_incomplete_beta_edges() -> None:
    assert regularized_incomplete_beta(2, 3, 0.0) == 0.0
    assert regularized_incomplete_beta(2, 3, 1.0) == 1.0
    # I_x(1, 1) is the uniform distribution function
    assert regularized_incomplete_beta(1, 1, 0.37) == pytest.approx(0.37)
    assert regularized_incomplete_beta(2, 3, 0.4) == pytest.approx(
        1 - regularized_incomplete_beta(3, 2, 0.6)
    )
    with pytest.raises(InvalidArgumentError):
        regularized_incomplete_beta(0, 1, 0.5)
