"""The intermittent map family and its first-return structure.

The map is

    f(x) = x (1 + x^gamma rho(x))   on [0, 1/2],
    f(x) = 2x - 1                   on (1/2, 1],

with rho one of the built-in slowly varying families at 0.  The fixed point 0
is neutral (f'(0) = 1) and the base Y = (1/2, 1] carries the uniformly
expanding first-return map.  Built-in rho families are rescaled at
construction so that f(1/2) = 1 exactly; without that the left branch would
not map onto [0, 1] and the preimage ladder below would lose its meaning.
An unnormalized mode is kept for closed-form cross-checks (e.g. x(1+x)).
"""

from dataclasses import dataclass, field

import numpy as np

from holmix.errors import DomainError, LadderExhaustedError, NumericError
from holmix.slowvary import AT_ZERO, SlowVaryFn

_LOG_FLOOR = np.log(1e-300)


@dataclass(frozen=True)
class HollandMap:
    """Map specification: exponent gamma in (0, 1], modulation rho at 0."""

    gamma: float
    rho: SlowVaryFn = field(default_factory=lambda: SlowVaryFn("const"))
    normalize: bool = True

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise DomainError("gamma must lie in (0, 1]")
        if self.rho.orientation != AT_ZERO:
            raise DomainError("rho must be an at-zero family")
        if self.normalize:
            base = SlowVaryFn(self.rho.family, AT_ZERO, self.rho.a, self.rho.b)
            scale = 2.0**self.gamma / base.value(0.5)
            object.__setattr__(self, "rho", base.with_scale(scale))

    @property
    def p(self):
        """Weak moment order of the return time, 1/gamma."""
        return 1.0 / self.gamma

    # -- forward map ----------------------------------------------------

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """(f(x), f'(x)); left branch on [0, 1/2], affine branch above."""
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xa = np.atleast_1d(xa)
        if np.any((xa < 0.0) | (xa > 1.0)):
            raise DomainError("map argument outside [0, 1]")
        fx = np.empty_like(xa)
        dfx = np.empty_like(xa)

        right = xa > 0.5
        fx[right] = 2.0 * xa[right] - 1.0
        dfx[right] = 2.0

        left = ~right
        xl = xa[left]
        pos = xl > 0.0
        v = np.zeros_like(xl)
        d1 = np.zeros_like(xl)
        if np.any(pos):
            v[pos], d1[pos], _ = self.rho.eval(xl[pos])
        g = self.gamma
        xg = np.where(pos, xl, 1.0) ** g        # placeholder 1 where x == 0
        xg = np.where(pos, xg, 0.0)
        fx[left] = xl * (1.0 + xg * v)
        dfx[left] = 1.0 + (g + 1.0) * xg * v + xg * xl * d1
        if scalar:
            return float(fx[0]), float(dfx[0])
        return fx, dfx

    def _f_left(self, y):
        v = np.asarray(self.rho.value(y))
        return y * (1.0 + y**self.gamma * v)

    def _df_left(self, y):
        v, d1, _ = self.rho.eval(y)
        yg = y**self.gamma
        return 1.0 + (self.gamma + 1.0) * yg * v + yg * y * d1

    # -- inverse branches -----------------------------------------------

    def right_inverse(self, x):
        """v1: the preimage on (1/2, 1] of the affine branch."""
        return (np.asarray(x, dtype=float) + 1.0) / 2.0

    def left_inverse(self, x, tol=1e-14):
        """v0: the unique y in (0, 1/2] with f(y) = x.

        Bisection in log y (bracket-safe: f' -> 1 near 0 makes pure Newton
        slow and fragile there), then two Newton polish steps.
        """
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xa = np.atleast_1d(xa).astype(float)
        top = float(self._f_left(np.float64(0.5)))
        if np.any((xa <= 0.0) | (xa > top + 1e-12)):
            raise DomainError("left-branch inverse needs x in (0, f(1/2)]")
        if tol <= 0:
            raise DomainError("tol must be positive")

        # Newton from y = x: f is increasing and convex on the left branch,
        # so iterates from above the root decrease monotonically onto it.
        y = np.minimum(xa, 0.5)
        converged = False
        for _ in range(40):
            step = (self._f_left(y) - xa) / self._df_left(y)
            y = np.clip(y - step, np.exp(_LOG_FLOOR), 0.5)
            if np.all(np.abs(step) <= 0.25 * tol * np.abs(y)):
                converged = True
                break
        if not converged:
            # bracket-safe fallback: bisection in log y
            lo = np.full_like(xa, _LOG_FLOOR)
            hi = np.full_like(xa, np.log(0.5))
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                below = self._f_left(np.exp(mid)) < xa
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            y = np.exp(0.5 * (lo + hi))
            for _ in range(3):
                y = y - (self._f_left(y) - xa) / self._df_left(y)
                y = np.clip(y, np.exp(_LOG_FLOOR), 0.5)
        resid = np.abs(self._f_left(y) - xa)
        if np.any(resid > 10.0 * tol):
            k = int(np.argmax(resid))
            raise NumericError(
                "left-branch inversion did not converge",
                x=float(xa[k]), residual=float(resid[k]),
                bracket=(float(np.exp(lo[k])), float(np.exp(hi[k]))))
        return float(y[0]) if scalar else y

    def inverse_branch(self, branch, x, tol=1e-14):
        if branch == "right":
            return self.right_inverse(x)
        if branch == "left":
            return self.left_inverse(x, tol=tol)
        raise DomainError(f"unknown branch {branch!r}")

    def left_inverse_derivative(self, x, tol=1e-14):
        """v0'(x) = 1 / f'(v0(x))."""
        y = self.left_inverse(x, tol=tol)
        return 1.0 / self._df_left(np.asarray(y, dtype=float))

    def branch_derivative_product(self, n, x, tol=1e-14):
        """(v0^n)'(x) as the chain-rule product over the preimage chain."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        prod = np.ones_like(xa)
        y = xa
        for _ in range(n):
            y = self.left_inverse(y, tol=tol)
            prod = prod / self._df_left(np.atleast_1d(y))
        if np.asarray(x).ndim == 0:
            return float(prod[0])
        return prod


# -- preimage ladder ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZLadder:
    """Preimages of 1/2 under the left branch: z_0 = 1, z_1 = 1/2, z_{n+1} = v0(z_n).

    f^n maps J_n = (z_{n+1}, z_n] bijectively onto Y = (1/2, 1], so under the
    normalized Lebesgue measure m on Y the return-time tail is m(R > n) = z_n
    exactly.
    """

    z: np.ndarray
    gamma: float

    @property
    def depth(self):
        return self.z.size - 1

    @property
    def lengths(self):
        """lambda(J_n) = z_n - z_{n+1}, n = 0 .. depth-1."""
        return -np.diff(self.z)

    @property
    def tail(self):
        """m(R > n) = z_n under normalized Lebesgue on Y."""
        return self.z

    @property
    def u(self):
        """u_n = -log(z_n)/n (n >= 1), so that m(R > n) = exp(-n u_n)."""
        n = np.arange(1, self.z.size)
        return -np.log(self.z[1:]) / n

    def interval_index(self, x):
        """n with x in J_n = (z_{n+1}, z_n]; raises when x <= z_depth."""
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xa = np.atleast_1d(xa)
        N = self.depth
        if np.any(xa <= self.z[N]):
            raise LadderExhaustedError(
                "point below deepest ladder level", depth=N,
                z_min=float(self.z[N]))
        if np.any(xa > 1.0):
            raise DomainError("ladder lookup outside (0, 1]")
        za = self.z[::-1]                       # ascending
        idx = np.searchsorted(za, xa, side="left")
        n = N - idx
        return int(n[0]) if scalar else n


def z_ladder(hmap, N, tol=1e-14):
    """Build the ladder down to z_N (N >= 2)."""
    if N < 2:
        raise DomainError("ladder depth must be at least 2")
    z = np.empty(N + 1)
    z[0] = 1.0
    z[1] = 0.5
    for n in range(1, N):
        z[n + 1] = hmap.left_inverse(z[n], tol=tol)
    return ZLadder(z=z, gamma=hmap.gamma)


def ladder_diagnostic(hmap, ladder):
    """z_n^gamma rho(z_n) gamma n, which tends to 1 (n >= 1)."""
    z = ladder.z[1:]
    n = np.arange(1, ladder.z.size, dtype=float)
    return z**hmap.gamma * np.asarray(hmap.rho.value(z)) * hmap.gamma * n


def return_time(hmap, x, ladder):
    """First n >= 1 with f^n(x) in Y, for x in Y, via ladder lookup."""
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    if np.any((xa <= 0.5) | (xa > 1.0)):
        raise DomainError("return time is defined on Y = (1/2, 1]")
    fx = 2.0 * xa - 1.0
    R = np.ones(xa.shape, dtype=np.int64)
    inside = fx <= 0.5
    if np.any(inside):
        R[inside] = ladder.interval_index(fx[inside]) + 1
    return int(R[0]) if scalar else R


def return_time_by_iteration(hmap, x, max_iter=10**7):
    """Brute-force return time by iterating f; oracle for ladder lookup."""
    y = float(x)
    if not (0.5 < y <= 1.0):
        raise DomainError("return time is defined on Y = (1/2, 1]")
    for n in range(1, max_iter + 1):
        y = hmap(y)
        if y > 0.5:
            return n
    raise NumericError("orbit failed to return", max_iter=max_iter)
