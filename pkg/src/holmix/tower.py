"""Renewal-coupling simulator for block-height chains.

Blocks are words of independent letters: the word length is geometric with
parameter xi and each letter carries the return-time law P(R = n) =
z_{n-1} - z_n read off a preimage ladder (or a synthetic law for unit tests).
The block height is the sum of the letter return times; the literal reading
in which the height itself is geometric is kept as a config-selectable mode
for synthetic tests, since a geometric height law cannot carry the polynomial
tails the transfer rates require.

Two chains driven by shared innovations coincide from their first
simultaneous renewal on, so the meeting time is simulated on residual-height
counters alone: the full word identity is irrelevant to its law.  Chains are
advanced renewal-to-renewal (the intermediate countdown steps are skipped),
which is exact and keeps the cost proportional to the number of renewals.
"""

from dataclasses import dataclass, field

import numpy as np

from holmix.errors import DomainError
from holmix.fitting import SlopeFit, empirical_survival, loglog_fit, survival_fit_window

MEETING_CAP = 10**7


@dataclass(eq=False)
class BlockHeightLaw:
    """Word-length parameter xi plus a letter law (or a synthetic height law)."""

    xi: float = 0.5
    letter_pmf: np.ndarray = None   # P(R = n), n = 1..len(pmf)
    mode: str = "word"              # "word" | "geometric" | "pareto"
    pareto_p: float = 3.0
    truncation: float = 0.0
    _letter_cdf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.xi < 1.0):
            raise DomainError("xi must lie in (0, 1)")
        if self.mode not in ("word", "geometric", "pareto", "constant"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "word":
            if self.letter_pmf is None:
                raise DomainError("word mode needs a letter law")
            s = float(self.letter_pmf.sum())
            if not (0.0 < s <= 1.0 + 1e-9):
                raise DomainError("letter law is not a (sub-)probability")
            self.truncation = max(0.0, 1.0 - s)
            self._letter_cdf = np.cumsum(self.letter_pmf) / s

    @classmethod
    def from_ladder(cls, ladder, xi=0.5):
        """Letter law P(R = n) = z_{n-1} - z_n under normalized Lebesgue on Y."""
        return cls(xi=xi, letter_pmf=ladder.lengths.copy(), mode="word")

    @classmethod
    def pareto(cls, p, xi=0.5):
        """Synthetic exact-Pareto heights: P(h > n) = n^-p for n >= 1."""
        return cls(xi=xi, mode="pareto", pareto_p=p)

    @classmethod
    def geometric(cls, xi):
        """Literal geometric height on {1, 2, ...} (synthetic test mode)."""
        return cls(xi=xi, mode="geometric")

    @classmethod
    def constant(cls):
        """Degenerate h = 1 (every epoch is a renewal)."""
        return cls(mode="constant")

    # -- sampling ---------------------------------------------------------

    def sample_letters(self, rng, size):
        u = rng.random(size)
        return np.searchsorted(self._letter_cdf, u, side="right") + 1

    def sample_heights(self, rng, size):
        if self.mode == "constant":
            return np.ones(size, dtype=np.int64)
        if self.mode == "geometric":
            return rng.geometric(self.xi, size=size).astype(np.int64)
        if self.mode == "pareto":
            u = rng.random(size)
            return np.ceil(u ** (-1.0 / self.pareto_p)).astype(np.int64) \
                .clip(1, None)
        lengths = rng.geometric(self.xi, size=size)
        total = int(lengths.sum())
        letters = self.sample_letters(rng, total)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        return np.add.reduceat(letters, starts).astype(np.int64)

    def mean_letter(self):
        if self.mode != "word":
            raise DomainError("letter mean only defined in word mode")
        n = np.arange(1, self.letter_pmf.size + 1)
        return float(n @ self.letter_pmf / self.letter_pmf.sum())

    def mean_height(self):
        """E[h]; Wald in word mode: E[L] E[R] = E[R] / xi."""
        if self.mode == "word":
            return self.mean_letter() / self.xi
        if self.mode == "geometric":
            return 1.0 / self.xi
        if self.mode == "constant":
            return 1.0
        p = self.pareto_p
        n = np.arange(1, 10**7)
        return float(1.0 + np.sum(n ** (-p)))

    # -- height distribution -----------------------------------------------

    def height_pmf(self, n_max):
        """P(h = n) for n = 1..n_max.

        In word mode by the one-step recursion q = xi p + (1 - xi) p * q
        (condition on whether the word ends after its first letter).
        """
        if self.mode == "constant":
            out = np.zeros(n_max)
            out[0] = 1.0
            return out
        if self.mode == "geometric":
            n = np.arange(1, n_max + 1)
            return (1.0 - self.xi) ** (n - 1) * self.xi
        if self.mode == "pareto":
            n = np.arange(1, n_max + 1)
            surv = n ** (-self.pareto_p)
            return np.concatenate([[1.0 - surv[0]], surv[:-1] - surv[1:]])
        p = np.zeros(n_max + 1)
        m = min(self.letter_pmf.size, n_max)
        p[1:m + 1] = self.letter_pmf[:m] / self.letter_pmf.sum()
        q = np.zeros(n_max + 1)
        for n in range(1, n_max + 1):
            conv = float(p[1:n] @ q[n - 1:0:-1]) if n > 1 else 0.0
            q[n] = self.xi * p[n] + (1.0 - self.xi) * conv
        return q[1:]

    def height_survival(self, n_max):
        """P(h > n) for n = 0..n_max-1, by reverse accumulation of the pmf.

        Summing the pmf tail-first keeps full relative precision far below
        the float epsilon of a forward 1 - cumsum; mass beyond n_max is
        dropped (it is the quantity controlling the cut chosen by callers).
        """
        if self.mode == "geometric":
            return (1.0 - self.xi) ** np.arange(n_max)
        if self.mode == "pareto":
            surv = np.arange(n_max, dtype=float) ** (-self.pareto_p)
            surv[0] = 1.0
            return surv
        q = self.height_pmf(n_max)
        return np.cumsum(q[::-1])[::-1]

    def residual_sampler(self, tail_floor=1e-15, cap=10**6):
        """Sampler for the stationary residual law P(res = r) ~ P(h > r).

        This is the marginal of the level coordinate under height-biased
        word sampling: picking a word with probability proportional to its
        height and a uniform level within it lands on level r with
        probability proportional to P(h > r).
        """
        n_max = 256
        while True:
            surv = self.height_survival(n_max)
            if surv[-1] < tail_floor or n_max >= cap:
                break
            n_max *= 4
        weights = surv[surv > 0]
        cdf = np.cumsum(weights)
        cdf /= cdf[-1]

        def draw(rng, size):
            return np.searchsorted(cdf, rng.random(size), side="right")

        return draw


def sample_block_height(law, rng):
    """Single draw of h = sum of letter return times over a geometric word."""
    return int(law.sample_heights(rng, 1)[0])


# -- coupled renewal meeting times ------------------------------------------


class _HeightPool:
    """Batched height draws consumed sequentially (deterministic per seed)."""

    def __init__(self, law, rng, batch=1 << 16):
        self.law = law
        self.rng = rng
        self.batch = batch
        self._buf = law.sample_heights(rng, batch)
        self._pos = 0

    def draw(self, size):
        out = np.empty(size, dtype=np.int64)
        filled = 0
        while filled < size:
            take = min(size - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
            if self._pos == self._buf.size:
                self._buf = self.law.sample_heights(self.rng, self.batch)
                self._pos = 0
        return out


def meeting_times(law, size, seed, cap=MEETING_CAP, chunk=1 << 18):
    """Meeting times of two coupled stationary-start renewal chains.

    Both chains share innovations, so they coincide from the first epoch that
    is a renewal for both; the simulation advances renewal-to-renewal.
    Returns (T, censored): T = -1 where the cap was exceeded.  Chunked with
    spawned seeds so the result is independent of chunk scheduling.
    """
    root = np.random.SeedSequence(seed)
    out = np.empty(size, dtype=np.int64)
    cens = np.zeros(size, dtype=bool)
    pos = 0
    for child in root.spawn((size + chunk - 1) // chunk):
        m = min(chunk, size - pos)
        T, c = _meeting_chunk(law, m, np.random.default_rng(child), cap)
        out[pos:pos + m] = T
        cens[pos:pos + m] = c
        pos += m
    return out, cens


def meeting_time_survival(law, size, seed, grid, cap=MEETING_CAP,
                          chunk=1 << 18):
    """Streaming tail counts of the meeting time over an integer grid.

    Returns (counts of T >= g per grid point, total uncensored, censored).
    Memory stays O(grid) regardless of the sample budget, so tail windows
    that need 1e8+ coupled samples remain affordable.
    """
    grid = np.asarray(grid, dtype=np.int64)
    counts = np.zeros(grid.size, dtype=np.int64)
    censored = 0
    done = 0
    root = np.random.SeedSequence(seed)
    for child in root.spawn((size + chunk - 1) // chunk):
        m = min(chunk, size - done)
        T, c = _meeting_chunk(law, m, np.random.default_rng(child), cap)
        ok = T[~c]
        s = np.sort(ok)
        counts += s.size - np.searchsorted(s, grid, side="left")  # T >= g
        censored += int(c.sum())
        done += m
    return counts, done - censored, censored


def _meeting_chunk(law, size, rng, cap):
    residual = law.residual_sampler()
    r1 = residual(rng, size).astype(np.int64)
    r2 = residual(rng, size).astype(np.int64)
    pool = _HeightPool(law, rng)
    epoch = np.zeros(size, dtype=np.int64)
    T = np.full(size, -1, dtype=np.int64)
    censored = np.zeros(size, dtype=bool)
    alive = np.arange(size)
    while alive.size:
        a1, a2, ep = r1[alive], r2[alive], epoch[alive]
        met = (a1 == 0) & (a2 == 0)
        T[alive[met]] = ep[met]
        keep = ~met
        alive = alive[keep]
        if not alive.size:
            break
        # any exhausted counter renews now; then jump to the next event
        z1 = r1[alive] == 0
        if np.any(z1):
            r1[alive[z1]] = pool.draw(int(z1.sum()))
        z2 = r2[alive] == 0
        if np.any(z2):
            r2[alive[z2]] = pool.draw(int(z2.sum()))
        d = np.minimum(r1[alive], r2[alive])
        epoch[alive] += d
        r1[alive] -= d
        r2[alive] -= d
        over = epoch[alive] > cap
        if np.any(over):
            censored[alive[over]] = True
            alive = alive[~over]
    return T, censored


# -- tail reports -------------------------------------------------------------


@dataclass
class TailReport:
    grid: np.ndarray
    survival: np.ndarray
    fit: SlopeFit
    c1_hat: float = np.nan   # lower-bound constant against exp(-n u_n)
    c2_hat: float = np.nan   # upper-bound constant against n^-p
    n_samples: int = 0
    censored: int = 0


def tail_report(samples, p, grid, strict=True, u_n=None, min_tail_count=10,
                censored=0):
    """Log-log slope of the empirical survival over a geometric grid.

    The fit window is clipped to survival counts the sample can resolve;
    with too few tail points the fit is flagged widened instead of failing.
    When the ladder rates u_n are supplied, the lower-bound constant
    c1 = min S(n) / exp(-n u_n) is reported; c2 = max S(n) n^p always is.
    """
    samples = np.asarray(samples)
    if samples.size < 10**5:
        raise DomainError("tail report needs at least 1e5 samples")
    grid = np.asarray(grid, dtype=np.int64)
    surv = empirical_survival(samples, grid, strict=strict)
    mask = survival_fit_window(grid, surv, samples.size,
                               min_tail_count=min_tail_count)
    fit = loglog_fit(grid[mask], surv[mask])
    gm, sm = grid[mask], surv[mask]
    c2 = float(np.max(sm * gm.astype(float) ** p)) if gm.size else np.nan
    c1 = np.nan
    if u_n is not None and gm.size:
        ref = np.exp(-gm * u_n[gm - 1])
        c1 = float(np.min(sm / ref))
    return TailReport(grid=grid, survival=surv, fit=fit, c1_hat=c1, c2_hat=c2,
                      n_samples=samples.size, censored=censored)


def moment_stability(samples, q, n_doublings=4):
    """E[X^q] over nested prefixes doubling in size (last = full sample)."""
    x = np.asarray(samples, dtype=float)
    sizes = [x.size >> k for k in range(n_doublings - 1, -1, -1)]
    return np.array([np.mean(x[:s] ** q) for s in sizes])


# -- renewal indicator autocovariance -----------------------------------------


def renewal_autocovariance(law, n_steps, lags, seed):
    """Empirical autocovariance of the renewal indicator of one chain.

    The indicator sequence is built from consecutive height draws (epoch t is
    a renewal iff t is a partial sum of heights), stationarized by a residual
    initial delay.
    """
    rng = np.random.default_rng(seed)
    mean_h = law.mean_height()
    n_draws = int(n_steps / mean_h * 1.25) + 1000
    delay = law.residual_sampler()(rng, 1)[0]
    # renewals at delay, delay + h_1, delay + h_1 + h_2, ...
    epochs = delay + np.concatenate(
        [[0], np.cumsum(law.sample_heights(rng, n_draws))])
    while epochs[-1] < n_steps:
        extra = law.sample_heights(rng, n_draws // 4)
        epochs = np.concatenate([epochs, epochs[-1] + np.cumsum(extra)])
    indicator = np.zeros(n_steps, dtype=np.float32)
    indicator[epochs[epochs < n_steps]] = 1.0
    mu = float(indicator.mean())
    out = []
    for lag in lags:
        a = indicator[:n_steps - lag]
        b = indicator[lag:]
        out.append(float(a @ b) / a.size - mu * mu)
    return np.asarray(lags), np.array(out)
