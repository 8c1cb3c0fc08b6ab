"""Birkhoff-sum paths and their Holder-space statistics.

The normalized partial-sum path interpolates S_k / sqrt(n) linearly at the
grid points k/n, so vertex values are exact and the path is continuous.  The
Holder modulus of a piecewise-linear path is computed exactly: the supremum
over pairs s, t is attained either at two vertices, or within one segment
(closed form), or on a sliding pair at distance exactly delta anchored at a
vertex.  The vertex scan is pruned with block max/min bounds, which keeps it
exact at any path length; a dense reference scan is retained for one-shot
verification.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from holmix.errors import DomainError, NumericError

_BLOCK = 128


# -- observables -------------------------------------------------------------


@dataclass(frozen=True)
class Observable:
    """Evaluation rule on [0, 1] with its regularity class and centering."""

    name: str
    fn: object                       # vectorized callable
    kind: str = "holder"             # "holder" | "bv"
    holder_exponent: float = 1.0
    variation_bound: float = None
    mean: float = 0.0
    centered: bool = False

    def __call__(self, x):
        v = self.fn(x)
        return v - self.mean if self.centered else v

    def raw(self, x):
        return self.fn(x)

    def scaled(self, c):
        return Observable(name=f"{c}*{self.name}", fn=lambda x: c * self.fn(x),
                          kind=self.kind, holder_exponent=self.holder_exponent,
                          variation_bound=None if self.variation_bound is None
                          else abs(c) * self.variation_bound,
                          mean=c * self.mean, centered=self.centered)


def obs_coordinate():
    return Observable("x", lambda x: np.asarray(x, dtype=float))


def obs_power(alpha):
    return Observable(f"x^{alpha}", lambda x: np.asarray(x, dtype=float)**alpha,
                      holder_exponent=min(alpha, 1.0))


def obs_indicator(a, b):
    return Observable(f"ind[{a},{b}]",
                      lambda x: ((np.asarray(x) > a) & (np.asarray(x) <= b))
                      .astype(float),
                      kind="bv", variation_bound=2.0)


def obs_coboundary(hmap, psi):
    """psi o f - psi: telescoping Birkhoff sums, sigma^2 = 0."""
    def fn(x):
        fx, _ = hmap.evaluate(np.asarray(x, dtype=float))
        return psi(fx) - psi(np.asarray(x, dtype=float))
    return Observable("coboundary", fn)


def center(obs, density, points_per_cell=5):
    """Centered copy of obs: the mean under the grid measure is subtracted.

    Cell integrals use a fixed-order Newton-Cotes rule inside each cell; the
    measure is piecewise constant so this is exact for polynomial kinds and
    high-order accurate otherwise.
    """
    e = density.edges
    t = np.linspace(0.0, 1.0, points_per_cell)
    w = np.full(points_per_cell, 1.0 / (points_per_cell - 1))
    w[0] *= 0.5
    w[-1] *= 0.5                      # trapezoid weights inside the cell
    pts = e[:-1, None] + np.diff(e)[:, None] * t[None, :]
    vals = obs.raw(pts.ravel()).reshape(pts.shape)
    cell_means = vals @ w
    mean = float(density.masses @ cell_means)
    return Observable(name=obs.name, fn=obs.fn, kind=obs.kind,
                      holder_exponent=obs.holder_exponent,
                      variation_bound=obs.variation_bound,
                      mean=mean, centered=True)


def cell_average(obs, density, points_per_cell=9):
    """Per-cell averages of a (centered) observable, as a grid function."""
    e = density.edges
    t = np.linspace(0.0, 1.0, points_per_cell)
    w = np.full(points_per_cell, 1.0 / (points_per_cell - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    pts = e[:-1, None] + np.diff(e)[:, None] * t[None, :]
    vals = obs(pts.ravel()).reshape(pts.shape)
    return vals @ w


# -- path container -----------------------------------------------------------


@dataclass(eq=False)
class PathSample:
    """Piecewise-linear path on [0,1] with vertex values W(k/n)."""

    values: np.ndarray

    @property
    def n(self):
        return self.values.size - 1

    def endpoint(self):
        return float(self.values[-1])

    def sup_abs(self):
        return float(np.abs(self.values).max())

    def integral(self):
        return float(np.trapezoid(self.values, dx=1.0 / self.n))

    def holder_modulus(self, eta, delta=1.0, method="auto"):
        return holder_modulus(self.values, eta, delta, method=method)

    def holder_norm(self, eta, method="auto"):
        return holder_modulus(self.values, eta, 1.0, method=method) \
            + abs(float(self.values[0]))


# -- orbit ensembles -----------------------------------------------------------


def _map_step(hmap, x):
    out = 2.0 * x - 1.0
    left = x <= 0.5
    if np.any(left):
        xl = x[left]
        rho = hmap.rho
        L = -np.log(xl)
        out[left] = xl * (1.0 + xl**hmap.gamma * rho.coef * L ** (-rho._expo))
    return out


def birkhoff_ensemble(hmap, obs, n, n_paths, rng=None, density=None,
                      start=None, dtype=np.float32):
    """Matrix of W_n paths, shape (n_paths, n + 1); W(k/n) = S_k / sqrt(n).

    Starts are nu-distributed through the density's inverse CDF unless an
    explicit start (scalar or array) is given.
    """
    if not obs.centered:
        raise DomainError("observable must be centered")
    if n < 2:
        raise DomainError("need n >= 2")
    if start is None:
        if density is None or rng is None:
            raise DomainError("nu starts need a density and an rng")
        x = density.sample(rng, n_paths)
    else:
        x = np.broadcast_to(np.asarray(start, dtype=float), (n_paths,)).copy()
    W = np.empty((n_paths, n + 1), dtype=dtype)
    W[:, 0] = 0.0
    S = np.zeros(n_paths)
    scale = 1.0 / np.sqrt(n)
    for k in range(n):
        S += obs(x)
        W[:, k + 1] = S * scale
        x = _map_step(hmap, x)
        if k % 4096 == 0 and not np.all(x > 0.0):
            raise NumericError("orbit underflow near the neutral point")
    return W


def birkhoff_path(hmap, obs, n, start, rng=None, density=None):
    W = birkhoff_ensemble(hmap, obs, n, 1, rng=rng, density=density,
                          start=start, dtype=np.float64)
    return PathSample(values=W[0])


def brownian_ensemble(n_grid, count, sigma, rng, dtype=np.float32):
    """Gaussian random-walk paths, exact in law at the grid points."""
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    W = np.empty((count, n_grid + 1), dtype=dtype)
    W[:, 0] = 0.0
    if sigma == 0.0:
        W[:, 1:] = 0.0
        return W
    steps = rng.standard_normal((count, n_grid)) * (sigma / np.sqrt(n_grid))
    np.cumsum(steps, axis=1, out=steps)
    W[:, 1:] = steps
    return W


def brownian_path(n_grid, sigma, rng):
    return PathSample(values=brownian_ensemble(n_grid, 1, sigma, rng,
                                               dtype=np.float64)[0])


# -- exact Holder modulus -------------------------------------------------------


def holder_modulus(values, eta, delta=1.0, method="auto"):
    """w_eta(x, delta) = sup over 0 < |s-t| <= delta of |x(s)-x(t)|/|s-t|^eta.

    Exact for the piecewise-linear interpolant.  The three attainment cases
    are vertex pairs, single segments, and vertex-anchored pairs at distance
    exactly delta (the constraint can bind with one endpoint mid-segment).
    """
    if not (0.0 < eta < 1.0):
        raise DomainError("eta must lie in (0, 1)")
    if not (0.0 < delta <= 1.0):
        raise DomainError("delta must lie in (0, 1]")
    W = np.asarray(values, dtype=np.float64)
    n = W.size - 1
    if method == "dense":
        best = _vertex_modulus_dense(W, eta, delta)
    elif method in ("auto", "pruned"):
        best = _vertex_modulus_pruned(W, eta, delta)
    else:
        raise DomainError(f"unknown method {method!r}")
    # single-segment closed form: slope * gap^(1-eta), gap <= min(delta, 1/n)
    max_slope = float(np.abs(np.diff(W)).max()) * n
    best = max(best, max_slope * min(delta, 1.0 / n) ** (1.0 - eta))
    if delta < 1.0:
        best = max(best, _sliding_pairs(W, eta, delta))
    return best


def _vertex_modulus_dense(W, eta, delta):
    n = W.size - 1
    if n > 2**13:
        raise DomainError("dense vertex scan capped at n = 8192")
    t = np.arange(n + 1) / n
    D = np.abs(W[:, None] - W[None, :])
    G = np.abs(t[:, None] - t[None, :])
    mask = (G > 0) & (G <= delta + 1e-15)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(mask, D / G**eta, 0.0)
    return float(R.max())


def _vertex_modulus_pruned(W, eta, delta):
    n = W.size - 1
    gap_cap = max(int(np.floor(delta * n + 1e-9)), 0)
    if gap_cap < 1:
        return 0.0
    inv = float(n) ** eta            # ratio = |dW| * inv / gap_idx^eta
    best = 0.0
    # short gaps, exact
    for g in range(1, min(gap_cap, 32) + 1):
        best = max(best, float(np.abs(W[g:] - W[:-g]).max()) * inv / g**eta)
    nb = (n + 1 + _BLOCK - 1) // _BLOCK
    if nb <= 2:
        return max(best, _scan_all(W, eta, gap_cap, inv))
    pad = nb * _BLOCK - (n + 1)
    Wp = np.concatenate([W, np.full(pad, W[-1])]).reshape(nb, _BLOCK)
    bmax = Wp.max(axis=1)
    bmin = Wp.min(axis=1)
    # first sharpen the lower bound with coarse representatives
    reps = W[:: max(1, (n + 1) // 512)]
    idx = np.arange(0, n + 1, max(1, (n + 1) // 512))
    dv = np.abs(reps[:, None] - reps[None, :])
    dg = np.abs(idx[:, None] - idx[None, :])
    ok = (dg > 0) & (dg <= gap_cap)
    if np.any(ok):
        best = max(best, float((dv[ok] * inv / dg[ok] ** eta).max()))
    # block-pair upper bounds
    spread = np.maximum(bmax[:, None] - bmin[None, :],
                        bmax[None, :] - bmin[:, None])
    k = np.arange(nb)
    dist = np.abs(k[:, None] - k[None, :])
    min_gap = np.where(dist > 1, (dist - 1) * _BLOCK + 1, 1)
    feasible = (dist <= (gap_cap // _BLOCK) + 1)
    with np.errstate(invalid="ignore"):
        ub = np.where(feasible, spread * inv / min_gap**eta, 0.0)
    order = np.argwhere((ub > best) & (k[:, None] <= k[None, :]))
    if order.size:
        # visit the most promising block pairs first: better pruning
        order = order[np.argsort(-ub[order[:, 0], order[:, 1]])]
    for bi, bj in order:
        if ub[bi, bj] <= best:
            continue
        best = max(best, _scan_pair(W, n, bi, bj, eta, gap_cap, inv))
    return best


def _scan_pair(W, n, bi, bj, eta, gap_cap, inv):
    ai = np.arange(bi * _BLOCK, min((bi + 1) * _BLOCK, n + 1))
    aj = np.arange(bj * _BLOCK, min((bj + 1) * _BLOCK, n + 1))
    D = np.abs(W[ai][:, None] - W[aj][None, :])
    G = np.abs(ai[:, None] - aj[None, :])
    ok = (G > 0) & (G <= gap_cap)
    if not np.any(ok):
        return 0.0
    return float((D[ok] * inv / G[ok] ** eta).max())


def _scan_all(W, eta, gap_cap, inv):
    n = W.size - 1
    idx = np.arange(n + 1)
    D = np.abs(W[:, None] - W[None, :])
    G = np.abs(idx[:, None] - idx[None, :])
    ok = (G > 0) & (G <= gap_cap)
    return float((D[ok] * inv / G[ok] ** eta).max())


def _sliding_pairs(W, eta, delta):
    """Pairs (k/n, k/n +- delta) with the far endpoint interpolated."""
    n = W.size - 1
    t = np.arange(n + 1) / n
    best = 0.0
    for sgn in (+1.0, -1.0):
        s = t + sgn * delta
        ok = (s >= 0.0) & (s <= 1.0)
        if not np.any(ok):
            continue
        xs = np.interp(s[ok], t, W)
        best = max(best, float(np.abs(xs - W[ok]).max()) / delta**eta)
    return best


def holder_modulus_scan_oracle(values, eta, delta=1.0, samples=100, seed=0):
    """Dense-pair reference: samples^2 (s, t) pairs per segment pair.

    Brute-force oracle for the exact engine; cost grows with (n * samples)^2,
    so keep n small.
    """
    W = np.asarray(values, dtype=np.float64)
    n = W.size - 1
    if n > 256:
        raise DomainError("scan oracle capped at n = 256")
    rng = np.random.default_rng(seed)
    t = np.arange(n + 1) / n
    best = 0.0
    for i in range(n):
        s_i = t[i] + rng.random(samples) / n
        x_i = np.interp(s_i, t, W)
        for j in range(i, n):
            s_j = t[j] + rng.random(samples) / n
            x_j = np.interp(s_j, t, W)
            D = np.abs(x_i[:, None] - x_j[None, :])
            G = np.abs(s_i[:, None] - s_j[None, :])
            ok = (G > 1e-12) & (G <= delta)
            if np.any(ok):
                best = max(best, float((D[ok] / G[ok] ** eta).max()))
    return best


# -- limiting variance -----------------------------------------------------------


@dataclass
class SigmaEstimate:
    sigma2: float
    variance_term: float
    cov_partials: np.ndarray
    method: str
    uncertainty: float


def sigma_squared_ulam(hmap, density, obs, K_max=256, op=None):
    """sigma^2 = Var(phi) + 2 sum_k Cov(phi, phi o f^k) via operator powers.

    Cov(phi, phi o f^k) = nu(phi0 . K^k phi0) on the grid.  The uncertainty
    reported is the oscillation of the partial sums over the last quarter of
    the window.
    """
    from holmix.transfer import build_transfer_operator
    if op is None:
        op = build_transfer_operator(hmap, density)
    obs_c = obs if obs.centered else center(obs, density)
    phi = cell_average(obs_c, density)
    nu = op.nu
    phi0 = phi - nu @ phi            # re-center on the grid
    c0 = float(nu @ (phi0 * phi0))
    partials = np.empty(K_max + 1)
    partials[0] = c0
    cur = phi0.copy()
    acc = c0
    for k in range(1, K_max + 1):
        cur = op.matrix @ cur
        acc += 2.0 * float(nu @ (phi0 * cur))
        partials[k] = acc
    tail = partials[3 * K_max // 4:]
    unc = float(tail.max() - tail.min())
    return SigmaEstimate(sigma2=float(partials[-1]), variance_term=c0,
                         cov_partials=partials, method="ulam",
                         uncertainty=unc)


def sigma_squared_mc(hmap, density, obs, n_block=4096, n_paths=2048, rng=None):
    """Batch-means estimate: the variance of S_n / sqrt(n) over nu starts."""
    obs_c = obs if obs.centered else center(obs, density)
    if rng is None:
        rng = np.random.default_rng(0)
    x = density.sample(rng, n_paths)
    S = np.zeros(n_paths)
    for _ in range(n_block):
        S += obs_c(x)
        x = _map_step(hmap, x)
    vals = S / np.sqrt(n_block)
    s2 = float(np.var(vals, ddof=1))
    stderr = s2 * np.sqrt(2.0 / (n_paths - 1))
    return SigmaEstimate(sigma2=s2, variance_term=s2, cov_partials=np.array([]),
                         method="mc", uncertainty=float(stderr))


def sigma_squared(hmap, density, obs, method="ulam", **kw):
    if method == "ulam":
        return sigma_squared_ulam(hmap, density, obs, **kw)
    if method == "mc":
        return sigma_squared_mc(hmap, density, obs, **kw)
    raise DomainError(f"unknown method {method!r}")


# -- functional ensembles and KS tables --------------------------------------------


FUNCTIONALS = ("endpoint", "sup", "holder", "integral")


def path_functionals(W, eta, exact_holder=False):
    """Functional values per path row: endpoint, sup |.|, eta-norm, integral."""
    W = np.asarray(W)
    n = W.shape[1] - 1
    method = "dense" if exact_holder else "auto"
    out = {
        "endpoint": W[:, -1].astype(np.float64),
        "sup": np.abs(W).max(axis=1).astype(np.float64),
        "integral": np.trapezoid(W, dx=1.0 / n, axis=1).astype(np.float64),
    }
    out["holder"] = np.array([
        holder_modulus(row, eta, 1.0, method=method) + abs(float(row[0]))
        for row in W])
    return out


def hip_experiment(hmap, density, obs, n_list, paths_per_n, eta, seed,
                   sigma=None, chunk=500):
    """Two-sample KS statistics of path functionals against Brownian references.

    For each n, W_n ensembles start from nu (inverse-CDF sampling) and are
    compared functional-by-functional with sigma W reference ensembles of the
    same size.  Returns rows (n, functional, ks_stat, p, M) plus the endpoint
    variance per n.
    """
    if sigma is None:
        sigma = np.sqrt(sigma_squared_ulam(hmap, density, obs).sigma2)
    rows = []
    endpoint_var = {}
    root = np.random.SeedSequence(seed)
    for n, child in zip(n_list, root.spawn(len(n_list))):
        kids = child.spawn(3)
        rng_w = np.random.default_rng(kids[0])
        rng_b = np.random.default_rng(kids[1])
        feats_w = {k: [] for k in FUNCTIONALS}
        done = 0
        while done < paths_per_n:
            m = min(chunk, paths_per_n - done)
            W = birkhoff_ensemble(hmap, obs, n, m, rng=rng_w, density=density)
            f = path_functionals(W, eta)
            for k in FUNCTIONALS:
                feats_w[k].append(f[k])
            done += m
        feats_w = {k: np.concatenate(v) for k, v in feats_w.items()}
        feats_b = {k: [] for k in FUNCTIONALS}
        done = 0
        while done < paths_per_n:
            m = min(chunk, paths_per_n - done)
            B = brownian_ensemble(n, m, sigma, rng_b)
            f = path_functionals(B, eta)
            for k in FUNCTIONALS:
                feats_b[k].append(f[k])
            done += m
        feats_b = {k: np.concatenate(v) for k, v in feats_b.items()}
        for k in FUNCTIONALS:
            ks = stats.ks_2samp(feats_w[k], feats_b[k])
            rows.append({"n": n, "functional": k,
                         "ks_stat": float(ks.statistic),
                         "p_value": float(ks.pvalue),
                         "M": paths_per_n})
        endpoint_var[n] = float(np.var(feats_w["endpoint"], ddof=1))
    return rows, endpoint_var, float(sigma)


def hip_trend_replicates(hmap, density, obs, n_small, n_big, paths, reps,
                         seed, sigma, functionals=("endpoint", "sup"),
                         chunk=500):
    """Replicate-averaged paired KS statistics at two path lengths.

    The small-n ensemble is the prefix of the big-n one (S_k is accumulated
    once per orbit) and the references are scaling-nested subsamples of one
    Brownian ensemble, so the cross-n comparison is paired: shared sampling
    noise cancels in the trend while each statistic keeps its marginal law.
    Returns {functional: (mean KS at n_small, mean KS at n_big)}.
    """
    if n_big % n_small != 0:
        raise DomainError("n_small must divide n_big")
    stride = n_big // n_small
    root = np.random.SeedSequence(seed)
    acc = {f: np.zeros(2) for f in functionals}
    for child in root.spawn(reps):
        kids = child.spawn(2)
        rng_w = np.random.default_rng(kids[0])
        rng_b = np.random.default_rng(kids[1])
        fw_small = {f: [] for f in functionals}
        fw_big = {f: [] for f in functionals}
        done = 0
        while done < paths:
            m = min(chunk, paths - done)
            W = birkhoff_ensemble(hmap, obs, n_big, m, rng=rng_w,
                                  density=density)
            # the prefix of the long orbit is exactly the W_{n_small} path
            Ws = W[:, :n_small + 1] * np.sqrt(stride)
            for f in functionals:
                fw_big[f].append(_basic_functional(W, f))
                fw_small[f].append(_basic_functional(Ws, f))
            done += m
        B = brownian_ensemble(n_big, paths, sigma, rng_b)
        Bs = B[:, ::stride]                         # nested reference
        for f in functionals:
            a = stats.ks_2samp(np.concatenate(fw_small[f]),
                               _basic_functional(Bs, f)).statistic
            b = stats.ks_2samp(np.concatenate(fw_big[f]),
                               _basic_functional(B, f)).statistic
            acc[f] += (a, b)
    return {f: tuple(v / reps) for f, v in acc.items()}


def _basic_functional(W, name):
    if name == "endpoint":
        return np.asarray(W[:, -1], dtype=np.float64)
    if name == "sup":
        return np.abs(W).max(axis=1).astype(np.float64)
    if name == "integral":
        n = W.shape[1] - 1
        return np.trapezoid(W, dx=1.0 / n, axis=1).astype(np.float64)
    raise DomainError(f"unknown functional {name!r}")


# -- partial-sum rate diagnostics ------------------------------------------------


def baum_katz_partial(hmap, density, obs, a, x, N, mc, seed):
    """Partial sums of n^(ap-2) P(max_{j<=n} |S_j| >= x n^a), estimated by MC.

    Returns (partial sums, exceedance probabilities, number of zero cells).
    Zero cells are censored estimates: the MC budget cannot resolve
    probabilities far below 1/mc.
    """
    p = hmap.p
    if not (0.5 < a <= 1.0 or (p < 2.0 and 1.0 / p <= a <= 1.0)):
        raise DomainError("a outside the admissible range for this p")
    obs_c = obs if obs.centered else center(obs, density)
    rng = np.random.default_rng(seed)
    xs = density.sample(rng, mc)
    S = np.zeros(mc)
    run_max = np.zeros(mc)
    phat = np.empty(N)
    thresholds = x * np.arange(1, N + 1, dtype=float) ** a
    for n in range(1, N + 1):
        S += obs_c(xs)
        np.maximum(run_max, np.abs(S), out=run_max)
        phat[n - 1] = np.mean(run_max >= thresholds[n - 1])
        xs = _map_step(hmap, xs)
    n_arr = np.arange(1, N + 1, dtype=float)
    terms = n_arr ** (a * p - 2.0) * phat
    return np.cumsum(terms), phat, int(np.sum(phat == 0.0))


def windowed_sup_diagnostic(hmap, density, obs, exponent, N, mc, seed,
                            n_windows=4):
    """Ensemble mean of max over dyadic windows of n^(-exponent) |S_n|.

    The windows are [N/2^k, N/2^(k-1)), k = n_windows..1; a strong-law rate
    shows as a decreasing sequence.
    """
    obs_c = obs if obs.centered else center(obs, density)
    rng = np.random.default_rng(seed)
    xs = density.sample(rng, mc)
    S = np.zeros(mc)
    # windows [N/2^k, N/2^(k-1)), with the right edge of the last one closed
    edges = [N >> k for k in range(n_windows, 0, -1)] + [N + 1]
    w_max = np.zeros((n_windows, mc))
    for n in range(1, N + 1):
        S += obs_c(xs)
        k = np.searchsorted(edges, n, side="right") - 1
        if 0 <= k < n_windows:
            np.maximum(w_max[k], np.abs(S) * n ** (-exponent), out=w_max[k])
        xs = _map_step(hmap, xs)
    return w_max.mean(axis=1)
