import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qextreme.scaling import (
    DivergenceClass,
    classify_divergences,
    classify_g2,
    classify_moment,
    normalization,
    proxy_g2,
    proxy_moment,
)


def _quad_moment(nu, delta, k):
    # integrate A n^(k - nu) over [1, 1/delta] in u = ln n, where the integrand is smooth
    A = 1.0 / quad(lambda u: math.exp((1 - nu) * u), 0, math.log(1 / delta), epsabs=0, epsrel=1e-13)[0]
    val = quad(lambda u: math.exp((k - nu + 1) * u), 0, math.log(1 / delta), epsabs=0, epsrel=1e-13)[0]
    return A, A * val


def test_normalization_branches():
    assert normalization(3.0, 0.5) == pytest.approx(8 / 3)
    assert normalization(1.0, 0.01) == pytest.approx(1 / math.log(100))
    # continuous through nu = 1
    assert normalization(1.0 + 1e-9, 0.01) == pytest.approx(normalization(1.0, 0.01), rel=1e-7)
    with pytest.raises(ValueError):
        normalization(0.0, 0.5)
    with pytest.raises(ValueError):
        normalization(2.0, 1.0)


def test_proxy_moment_worked_example():
    assert proxy_moment(3.0, 0.5, 1) == pytest.approx(4 / 3)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_proxy_moment_log_branch(k):
    delta = 1e-3
    nu = k + 1.0
    assert proxy_moment(nu, delta, k) == pytest.approx(normalization(nu, delta) * math.log(1 / delta))


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0, 4.5])
def test_proxy_moment_collapses_near_delta_one(nu):
    for k in (1, 2, 4):
        assert proxy_moment(nu, 1 - 1e-9, k) == pytest.approx(1.0, rel=1e-6)


@given(
    nu=st.floats(0.05, 8.0),
    delta=st.floats(1e-6, 0.9),
    k=st.integers(1, 5),
)
@settings(max_examples=120, deadline=None)
def test_proxy_moment_vs_quadrature(nu, delta, k):
    A, m = _quad_moment(nu, delta, k)
    assert normalization(nu, delta) == pytest.approx(A, rel=1e-10)
    assert proxy_moment(nu, delta, k) == pytest.approx(m, rel=1e-10)


def test_proxy_moment_rejects_bad_k():
    with pytest.raises(ValueError):
        proxy_moment(2.0, 0.1, 0)


# ---------------------------------------------------------------------------
# classification


def test_classification_examples():
    c = classify_moment(1.5, 1)
    assert c.power == pytest.approx(0.5) and c.log_power == 0 and c.kind == "power"
    g = classify_g2(1.5)
    assert g.power == pytest.approx(0.5) and g.kind == "power"
    assert classify_moment(5.0, 2).finite


@pytest.mark.parametrize(
    "nu,k,power,log_power",
    [
        (0.5, 1, 1.0, 0),
        (0.5, 3, 3.0, 0),
        (1.0, 2, 2.0, -1),
        (1.7, 2, 1.3, 0),
        (3.0, 2, 0.0, 1),
        (2.0, 1, 0.0, 1),
        (3.5, 2, 0.0, 0),
        (2.5, 4, 2.5, 0),
    ],
)
def test_moment_table(nu, k, power, log_power):
    c = classify_moment(nu, k)
    assert c.power == pytest.approx(power) and c.log_power == log_power


@pytest.mark.parametrize(
    "nu,power,log_power,reconstructed",
    [
        (0.4, 0.0, 0, False),
        (1.0, 0.0, 1, False),
        (1.25, 0.25, 0, False),
        (2.0, 1.0, -2, True),
        (2.4, 0.6, 0, False),
        (3.0, 0.0, 1, False),
        (3.5, 0.0, 0, False),
    ],
)
def test_g2_table(nu, power, log_power, reconstructed):
    c = classify_g2(nu)
    assert c.power == pytest.approx(power)
    assert c.log_power == log_power and c.reconstructed == reconstructed


def _local_exponent(f, delta):
    # -d ln f / d ln delta by a central difference; deep in the asymptotic regime
    # because corrections near a boundary decay only like delta^(small power)
    h = 1e-3
    return -(math.log(f(delta * math.exp(h))) - math.log(f(delta * math.exp(-h)))) / (2 * h)


@pytest.mark.parametrize("nu", [0.3, 0.8, 1.4, 2.2, 2.9, 3.6, 4.7])
def test_moment_classes_match_proxy_asymptotics(nu):
    for k in (1, 2, 3, 4):
        c = classify_moment(nu, k)
        if c.log_power:
            continue
        slope = _local_exponent(lambda d: proxy_moment(nu, d, k), 1e-60)
        assert slope == pytest.approx(c.power, abs=2e-3), (nu, k)


@pytest.mark.parametrize("nu", [0.5, 1.3, 1.8, 2.3, 2.8, 3.5])
def test_g2_classes_match_proxy_asymptotics(nu):
    c = classify_g2(nu)
    slope = _local_exponent(lambda d: proxy_g2(nu, d), 1e-60)
    assert slope == pytest.approx(c.power, abs=5e-3), nu


@pytest.mark.parametrize("nu", [1.0, 2.0, 3.0])
def test_log_classes_match_proxy(nu):
    # ratio of proxy to leading class tends to a constant
    c = classify_g2(nu)
    r = [proxy_g2(nu, d) / c(d) for d in (1e-20, 1e-40, 1e-80)]
    assert abs(r[2] / r[1] - 1) < abs(r[1] / r[0] - 1) + 1e-12
    assert abs(r[2] / r[1] - 1) < 0.05


def test_boundaries_are_continuous():
    # power classes shrink to zero as a boundary is approached, where the log class takes over
    for k in (1, 2, 3):
        below = classify_moment(k + 1 - 1e-6, k)
        assert below.power == pytest.approx(1e-6, abs=1e-9)
        assert classify_moment(k + 1.0, k).kind == "logarithmic"
    assert classify_g2(3 - 1e-6).power == pytest.approx(1e-6, abs=1e-9)
    assert classify_g2(1 + 1e-6).power == pytest.approx(1e-6, abs=1e-9)
    # below nu = 1 the g2 ratio is finite; the moments are all power-law
    assert classify_g2(1 - 1e-6).finite
    assert classify_moment(1 - 1e-6, 2).power == 2.0


def test_classify_divergences_bundle():
    pred = classify_divergences(1.5, max_k=3, delta=1e-3)
    assert set(pred.moment_classes) == {1, 2, 3}
    assert pred.A == pytest.approx(normalization(1.5, 1e-3))
    assert pred.moments[2] == pytest.approx(proxy_moment(1.5, 1e-3, 2))
    assert classify_divergences(5.0).moments == {}
    with pytest.raises(ValueError):
        classify_divergences(-1.0)


def test_divergence_class_evaluation():
    c = DivergenceClass(power=0.5, log_power=-1)
    assert c(1e-4) == pytest.approx(100 / math.log(1e4))
    assert "delta^-0.5" in c.describe() and "ln(1/delta)^-1" in c.describe()
    assert DivergenceClass().describe() == "finite"
    assert np.isclose(DivergenceClass(log_power=1)(math.e**-3), 3.0)
