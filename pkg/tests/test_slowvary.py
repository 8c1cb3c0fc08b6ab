import numpy as np
import pytest

from holmix.errors import DomainError
from holmix.slowvary import (
    AT_INF,
    AT_ZERO,
    SlowVaryFn,
    convolution_bound_check,
    potter_report,
    slow_variation_ratio,
    subpolynomial_check,
)

ALL_ZERO_FAMILIES = [
    SlowVaryFn("const", a=1.0),
    SlowVaryFn("const", a=2.0),
    SlowVaryFn("invlog", a=1.0),
    SlowVaryFn("invlog", a=0.5),
    SlowVaryFn("logpow", a=1.0, b=1.5),
    SlowVaryFn("logpow", a=2.0, b=0.5),
]


def central_diff(fn, x, h):
    return (fn.value(x + h) - fn.value(x - h)) / (2.0 * h)


def test_eval_constant():
    v, d1, d2 = SlowVaryFn("const", a=1.0).eval(0.3)
    assert (v, d1, d2) == (1.0, 0.0, 0.0)


def test_eval_invlog_closed_form():
    # a / log(1/x) at x = e^-2: value 1/2, derivative 1/(x log^2(1/x))
    x = np.exp(-2.0)
    v, d1, d2 = SlowVaryFn("invlog", a=1.0).eval(x)
    assert v == pytest.approx(0.5, abs=1e-15)
    assert d1 == pytest.approx(1.0 / (x * 4.0), rel=1e-14)
    # cross-check both derivatives by central differences
    fn = SlowVaryFn("invlog", a=1.0)
    assert d1 == pytest.approx(central_diff(fn, x, 1e-6), rel=1e-8)
    # second derivative of 1/log(1/x) vanishes exactly where log(1/x) = 2
    assert d2 == pytest.approx(0.0, abs=1e-15)
    fd2 = (fn.value(x + 1e-5) - 2.0 * v + fn.value(x - 1e-5)) / 1e-10
    assert fd2 == pytest.approx(0.0, abs=1e-5)


def test_eval_logpow_unit_point():
    v, _, _ = SlowVaryFn("logpow", a=1.0, b=1.0).eval(np.exp(-1.0))
    assert v == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("fn", ALL_ZERO_FAMILIES)
def test_derivatives_match_finite_differences(fn):
    for x in [1e-6, 1e-3, 0.1, 0.4]:
        v, d1, d2 = fn.eval(x)
        h = x * 1e-6
        assert d1 == pytest.approx(central_diff(fn, x, h), rel=1e-6, abs=1e-12)
        # larger step for the second difference: it is roundoff-limited
        h2 = x * 1e-4
        fd2 = (fn.value(x + h2) - 2.0 * v + fn.value(x - h2)) / h2**2
        assert d2 == pytest.approx(fd2, rel=1e-4, abs=1e-4)


def test_at_infinity_derivatives():
    fn = SlowVaryFn("logpow", AT_INF, a=1.0, b=-1.0)  # l(x) = log x
    for x in [5.0, 50.0, 1e4]:
        v, d1, d2 = fn.eval(x)
        assert v == pytest.approx(np.log(x), rel=1e-14)
        assert d1 == pytest.approx(1.0 / x, rel=1e-12)
        assert d2 == pytest.approx(-1.0 / x**2, rel=1e-10)


def test_domain_rejection():
    fn = SlowVaryFn("invlog")
    with pytest.raises(DomainError):
        fn.eval(1.5)
    with pytest.raises(DomainError):
        fn.eval(0.0)
    with pytest.raises(DomainError):
        SlowVaryFn("invlog", AT_INF).eval(0.5)


# -- regular variation at the boundary ---------------------------------


@pytest.mark.parametrize("fn", ALL_ZERO_FAMILIES)
@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_ratio_limit_at_zero(fn, lam):
    # |ratio - 1| decays like b log(1/lam)/log(1/x) for the log families, so
    # the 1% band is only reached around x ~ 1e-60; check the approach is
    # monotone and lands inside the band there.
    xs = np.geomspace(1e-80, 1e-8, 10)
    err = np.abs(slow_variation_ratio(fn, lam, xs) - 1.0)
    assert np.all(np.diff(err) >= -1e-15)
    assert np.all(err[xs <= 1e-60] < 0.01)


@pytest.mark.parametrize("fn", [f for f in ALL_ZERO_FAMILIES
                                if f.family in ("invlog", "logpow") and f.b > 0])
def test_subpolynomial_decay(fn):
    xs, vals = subpolynomial_check(fn, a=0.1, x_lo=1e4, x_hi=1e14)
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 0.1 * vals[0]


# -- Potter bounds ------------------------------------------------------


def test_potter_constant_family_never_violates():
    rep = potter_report(SlowVaryFn("const", AT_INF, a=3.0),
                        A=1.5, delta=0.05, x_lo=2.0, x_hi=1e8, n_samples=60)
    assert rep.n_violations == 0
    assert rep.worst_excess == 1.0
    assert rep.x0 == pytest.approx(2.0)


def _rescan_potter(fn, A, delta, x0, x_hi, n=200):
    grid = np.geomspace(x0, x_hi, n)
    vals = np.asarray(fn.value(grid))
    ok = True
    for i in range(n):
        q = grid[i:] / grid[i]
        r = vals[i:] / vals[i]
        ok &= bool(np.all(r <= A * q**delta + 1e-12))
        ok &= bool(np.all(r >= q ** (-delta) / A - 1e-12))
    return ok


def test_potter_log_at_infinity():
    fn = SlowVaryFn("logpow", AT_INF, a=1.0, b=-1.0)  # log x
    rep = potter_report(fn, A=2.0, delta=0.1, x_lo=10.0, x_hi=1e6, n_samples=50)
    # denser independent rescan above the reported x0
    assert _rescan_potter(fn, 2.0, 0.1, rep.x0, 1e6)


def test_potter_mirrored_invlog():
    fn = SlowVaryFn("invlog", AT_ZERO, a=1.0).mirrored()
    rep = potter_report(fn, A=1.5, delta=0.25, x_lo=5.0, x_hi=1e9, n_samples=50)
    assert _rescan_potter(fn, 1.5, 0.25, rep.x0, 1e9)


@pytest.mark.parametrize("fn", ALL_ZERO_FAMILIES)
def test_potter_builtin_families_clean_above_x0(fn):
    rep = potter_report(fn.mirrored(), A=1.5, delta=0.2,
                        x_lo=3.0, x_hi=1e10, n_samples=40)
    assert _rescan_potter(fn.mirrored(), 1.5, 0.2, rep.x0, 1e10, n=120)


def test_potter_rejects_bad_inputs():
    fn = SlowVaryFn("const", AT_INF)
    with pytest.raises(DomainError):
        potter_report(fn, A=1.0, delta=0.1, x_lo=2, x_hi=10, n_samples=5)
    with pytest.raises(DomainError):
        potter_report(fn, A=2.0, delta=0.0, x_lo=2, x_hi=10, n_samples=5)


# -- convolution inequality ---------------------------------------------


def test_convolution_single_term_edge():
    u = np.array([3.0])
    v = np.array([5.0])
    rep = convolution_bound_check(u, v, r=2.0, s=2.0, n_max=0)
    assert rep.C_hat == pytest.approx(15.0 / 8.0)  # u0 v0 / (u0 + v0)


def test_convolution_constant_sequences_bounded():
    n_max = 10**4
    ones = np.ones(n_max + 1)
    rep = convolution_bound_check(ones, ones, r=2.0, s=2.0, n_max=n_max)
    assert np.isfinite(rep.C_hat)
    # ratio sequence stays bounded: the late half does not exceed the global max
    assert rep.ratios[n_max // 2:].max() <= rep.C_hat + 1e-12


def test_convolution_matches_bruteforce_loop():
    rng = np.random.default_rng(7)
    u = 1.0 + rng.random(201)
    v = 1.0 + rng.random(201)
    rep = convolution_bound_check(u, v, r=2.5, s=2.0, n_max=200)
    # independent O(n^2) reimplementation
    for n in [0, 1, 17, 200]:
        acc = 0.0
        for i in range(n + 1):
            j = n - i
            acc += u[i] * v[j] / ((i + 1) ** 2.5 * (j + 1) ** 2.0)
        bound = u[n] / (n + 1) ** 2.5 + v[n] / (n + 1) ** 2.0
        assert rep.ratios[n] == pytest.approx(acc / bound, rel=1e-12)


def test_convolution_invlog_type_bounded():
    fn = SlowVaryFn("invlog", AT_INF)
    rep = convolution_bound_check(fn, fn, r=3.0, s=2.0, n_max=10**4)
    assert np.isfinite(rep.C_hat)
    assert rep.ratios[5000:].max() <= rep.C_hat + 1e-12


def test_convolution_rejects_small_exponents():
    with pytest.raises(DomainError):
        convolution_bound_check(np.ones(5), np.ones(5), r=1.0, s=2.0, n_max=4)
