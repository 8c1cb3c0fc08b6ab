"""Closed-form slowly varying functions with analytic derivatives.

Three families are supported, at 0 and mirrored at infinity:

    const   c
    invlog  a / log(1/x)
    logpow  a * log(1/x) ** (-b)

Internally every family is the single closed form coef * L(x)**(-expo) with
L(x) = log(1/x) at zero or log(x) at infinity (const: expo = 0, invlog:
expo = 1).  Only these analytic families are accepted, because first and
second derivatives enter map derivatives and distortion computations and must
be exactly differentiable.  The logpow exponent may be negative, so growing
functions such as log(x) at infinity are expressible.
"""

from dataclasses import dataclass

import numpy as np

from holmix.errors import DomainError
from holmix.fitting import SlopeFit  # noqa: F401  (re-exported report types live here)

AT_ZERO = "at-zero"
AT_INF = "at-infinity"

_FAMILIES = ("const", "invlog", "logpow")


@dataclass(frozen=True)
class SlowVaryFn:
    """One member of the built-in slowly varying families."""

    family: str
    orientation: str = AT_ZERO
    a: float = 1.0       # multiplier (c for the const family)
    b: float = 1.0       # logpow exponent; ignored by const / invlog
    scale: float = 1.0   # extra multiplier, used for map normalization

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.orientation not in (AT_ZERO, AT_INF):
            raise DomainError(f"unknown orientation {self.orientation!r}")
        if self.a <= 0:
            raise DomainError("multiplier must be positive")

    @property
    def _expo(self):
        return {"const": 0.0, "invlog": 1.0, "logpow": float(self.b)}[self.family]

    @property
    def coef(self):
        return self.scale * self.a

    def with_scale(self, scale):
        return SlowVaryFn(self.family, self.orientation, self.a, self.b, scale)

    def mirrored(self):
        """The same closed form read at the other end (x -> 1/x)."""
        other = AT_INF if self.orientation == AT_ZERO else AT_ZERO
        return SlowVaryFn(self.family, other, self.a, self.b, self.scale)

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if self.orientation == AT_ZERO:
            ok = (x > 0.0) & (x < 1.0)
        else:
            ok = x > 1.0
        if not np.all(ok):
            raise DomainError(
                f"argument outside open domain for {self.orientation} family")
        return x

    def value(self, x):
        x = self._check_domain(x)
        B = self._expo
        if B == 0.0:
            out = np.full_like(x, self.coef)
        else:
            L = -np.log(x) if self.orientation == AT_ZERO else np.log(x)
            out = self.coef * L ** (-B)
        return out if out.ndim else float(out)

    def eval(self, x):
        """(value, first derivative, second derivative) at x."""
        x = self._check_domain(x)
        C, B = self.coef, self._expo
        if B == 0.0:
            z = np.zeros_like(x)
            v, d1, d2 = np.full_like(x, C), z, z.copy()
        elif self.orientation == AT_ZERO:
            L = -np.log(x)
            v = C * L ** (-B)
            d1 = C * B * L ** (-B - 1.0) / x
            d2 = C * B * L ** (-B - 2.0) * (B + 1.0 - L) / x**2
        else:
            L = np.log(x)
            v = C * L ** (-B)
            d1 = -C * B * L ** (-B - 1.0) / x
            d2 = C * B * L ** (-B - 2.0) * (B + 1.0 + L) / x**2
        if v.ndim:
            return v, d1, d2
        return float(v), float(d1), float(d2)

    def sequence(self, n, shift=2.0):
        """Slowly varying sequence u_n = value(n + shift), n >= 0.

        The shift keeps log(n) away from 0; shifting preserves slow variation.
        """
        fn = self if self.orientation == AT_INF else self.mirrored()
        return np.asarray(fn.value(np.arange(n, dtype=float) + shift))


def eval_fn(fn, x):
    """Module-level alias for SlowVaryFn.eval."""
    return fn.eval(x)


@dataclass
class PotterReport:
    A: float
    delta: float
    grid: np.ndarray
    n_violations: int
    worst_excess: float   # 1.0 when no pair violates
    x0: float             # smallest grid point above which no violation occurs

    @property
    def clean_above_x0(self):
        return True  # by construction; kept for self-describing output


def potter_report(fn, A, delta, x_lo, x_hi, n_samples):
    """Scan sample pairs x <= y for the two-sided bound

        (1/A) (y/x)^(-delta) <= l(y)/l(x) <= A (y/x)^delta.

    The scan grid is geometric and returned in the report, so any failure is
    reproducible.  x0 is the smallest grid point such that every pair lying
    above it satisfies the bound.
    """
    if A <= 1.0:
        raise DomainError("Potter constant A must exceed 1")
    if delta <= 0.0:
        raise DomainError("Potter exponent delta must be positive")
    if not (0 < x_lo < x_hi):
        raise DomainError("need 0 < x_lo < x_hi")
    if n_samples < 2:
        raise DomainError("need at least 2 samples")

    grid = np.geomspace(x_lo, x_hi, n_samples)
    vals = np.asarray(fn.value(grid))

    ratio = vals[None, :] / vals[:, None]          # ratio[i, j] = l(y_j)/l(x_i)
    q = grid[None, :] / grid[:, None]              # y_j / x_i
    upper = np.triu(np.ones_like(ratio, dtype=bool), k=1)
    lo_b = (1.0 / A) * q ** (-delta)
    hi_b = A * q**delta
    excess = np.maximum(lo_b / ratio, ratio / hi_b)
    excess = np.where(upper, excess, 0.0)

    bad = excess > 1.0
    n_violations = int(bad.sum())
    worst = float(excess.max()) if n_violations else 1.0

    # smallest grid index i0 such that no pair with both points >= grid[i0]
    # violates the bound
    i0 = 0
    if n_violations:
        bad_rows = np.where(bad.any(axis=1) | bad.any(axis=0))[0]
        i0 = int(bad_rows.max()) + 1
        i0 = min(i0, n_samples - 1)
    return PotterReport(A, delta, grid, n_violations, worst, float(grid[i0]))


@dataclass
class ConvolutionReport:
    C_hat: float
    arg_max: int
    ratios: np.ndarray


def _as_sequence(u, n):
    if isinstance(u, SlowVaryFn):
        return u.sequence(n)
    u = np.asarray(u, dtype=float)
    if u.size < n:
        raise DomainError("sequence shorter than n_max + 1")
    return u[:n]


def convolution_bound_check(u, v, r, s, n_max):
    """Direct-summation check of the convolution inequality

        sum_{i+j=n} u_i v_j / ((i+1)^r (j+1)^s)
            <= C ( u_n/(n+1)^r + v_n/(n+1)^s ).

    Returns the smallest admissible constant over n <= n_max.  Summation is
    term-by-term (no FFT) so tiny tail terms keep full relative precision.
    """
    if r <= 1.0 or s <= 1.0:
        raise DomainError("exponents r, s must exceed 1")
    m = int(n_max) + 1
    useq = _as_sequence(u, m)
    vseq = _as_sequence(v, m)
    i = np.arange(m, dtype=float)
    a = useq / (i + 1.0) ** r
    b = vseq / (i + 1.0) ** s
    ratios = np.empty(m)
    for n in range(m):
        conv = float(np.dot(a[: n + 1], b[n::-1]))
        bound = a[n] + b[n]
        ratios[n] = conv / bound
    k = int(np.argmax(ratios))
    return ConvolutionReport(float(ratios[k]), k, ratios)


def subpolynomial_check(fn, a=0.1, x_lo=1e3, x_hi=1e12, n_samples=40):
    """Check x^(-a) * l(x) -> 0 at infinity on a geometric tail grid.

    For an at-zero function the mirrored version l(1/x) is used.  Returns the
    sampled sequence; the caller asserts monotone decrease / smallness.
    """
    if a <= 0:
        raise DomainError("need a > 0")
    fn_inf = fn if fn.orientation == AT_INF else fn.mirrored()
    xs = np.geomspace(x_lo, x_hi, n_samples)
    return xs, xs ** (-a) * np.asarray(fn_inf.value(xs))


def slow_variation_ratio(fn, lam, xs):
    """value(lam * x) / value(x) on the sample points xs."""
    xs = np.asarray(xs, dtype=float)
    return np.asarray(fn.value(lam * xs)) / np.asarray(fn.value(xs))
