"""Invariant densities: three independent constructions and their checks.

1. ``induced_density``  -- Ulam discretization of the first-return map on
   Y = (1/2, 1], with branch preimages computed exactly through the inverse
   branches (no sampling), followed by power iteration.
2. ``pull_back_density`` -- the global invariant density obtained by pushing
   the induced measure forward along excursions and renormalizing.
3. ``empirical_density`` -- a plain orbit histogram, the Monte Carlo oracle.

The grid on [0, 1/2] is the preimage ladder itself: the density grows like
the cell index there, so a uniform grid would under-resolve near 0.  On Y a
uniform grid is used.
"""

from dataclasses import dataclass, field

import numpy as np

from holmix._kernels import fill_orbit
from holmix.errors import DomainError, NumericError

_MASS_TOL = 1e-10


# -- grid containers ------------------------------------------------------


@dataclass(eq=False)
class DensityGrid:
    """Piecewise-constant density on a breakpoint grid over [z_L, 1].

    Cells are left-open, right-closed, matching J_n = (z_{n+1}, z_n] and
    Y = (1/2, 1].  ``ladder_cells`` cells cover (z_L, 1/2]; the rest of the
    grid is uniform on Y.  Mass below z_L is truncated and reported in meta.
    """

    edges: np.ndarray
    density: np.ndarray
    ladder_cells: int
    tag: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.edges.size != self.density.size + 1:
            raise DomainError("edges/density size mismatch")

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def masses(self):
        return self.density * self.widths

    @property
    def midpoints(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def y_slice(self):
        return slice(self.ladder_cells, self.density.size)

    def cell_index(self, x):
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xa = np.atleast_1d(xa)
        if np.any((xa <= self.edges[0]) | (xa > self.edges[-1])):
            raise DomainError("point outside grid support")
        idx = np.searchsorted(self.edges, xa, side="left") - 1
        return int(idx[0]) if scalar else idx

    def value_at(self, x):
        return self.density[self.cell_index(x)]

    def mass_of_interval(self, a, b):
        """Integral of the density over [a, b] (clipped to the grid)."""
        a = np.maximum(np.asarray(a, dtype=float), self.edges[0])
        b = np.minimum(np.asarray(b, dtype=float), self.edges[-1])
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])

        def cdf(t):
            t = np.atleast_1d(t)
            i = np.clip(np.searchsorted(self.edges, t, side="left") - 1,
                        0, self.density.size - 1)
            return cum[i] + self.density[i] * (t - self.edges[i])

        out = np.maximum(cdf(b) - cdf(a), 0.0)
        return float(out[0]) if np.asarray(a).ndim == 0 else out

    def l1_distance(self, other, window=None):
        """integral |h1 - h2| over the window (defaults to the whole grid)."""
        if other.edges.shape != self.edges.shape or \
                not np.allclose(other.edges, self.edges):
            raise DomainError("grids differ; L1 comparison needs a shared grid")
        w = self.widths.copy()
        if window is not None:
            a, b = window
            lo = np.clip(np.minimum(self.edges[1:], b)
                         - np.maximum(self.edges[:-1], a), 0.0, None)
            w = lo
        return float(np.sum(np.abs(self.density - other.density) * w))

    def sample(self, rng, size):
        """Draw from the density by inverse CDF (uniform within cells)."""
        cum = np.cumsum(self.masses)
        cum = cum / cum[-1]
        cells = np.searchsorted(cum, rng.random(size), side="right")
        cells = np.clip(cells, 0, self.density.size - 1)
        u = rng.random(size)
        return self.edges[cells] + u * self.widths[cells]

    def check_mass(self):
        return abs(float(np.sum(self.masses)) - 1.0) <= _MASS_TOL


@dataclass(eq=False)
class InducedDensity:
    """Invariant probability of the first-return map, on the Y grid."""

    edges: np.ndarray
    masses: np.ndarray
    power_residual: float
    row_deficit: float       # worst Ulam row deviation from stochasticity
    branch_masses: np.ndarray  # w[m] = nu_0(v1(J_m)), m = 0 .. depth-2

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def density_lebesgue(self):
        return self.masses / self.widths

    @property
    def density_m(self):
        """Density w.r.t. normalized Lebesgue on Y (total length 1/2)."""
        return self.masses / (self.widths * 2.0)

    def mass_of_interval(self, a, b):
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        dens = self.density_lebesgue
        a = np.maximum(np.asarray(a, dtype=float), self.edges[0])
        b = np.minimum(np.asarray(b, dtype=float), self.edges[-1])

        def cdf(t):
            t = np.atleast_1d(t)
            i = np.clip(np.searchsorted(self.edges, t, side="left") - 1,
                        0, self.masses.size - 1)
            return cum[i] + dens[i] * (t - self.edges[i])

        out = np.maximum(cdf(b) - cdf(a), 0.0)
        return float(out[0]) if np.asarray(a).ndim == 0 else out


# -- construction 1: Ulam matrix of the induced map ------------------------


def _branch_preimage_edges(hmap, ladder, y_edges, max_R, tol):
    """Yield (r, preimage-of-y_edges under the return-r branch).

    The branch with return time r maps (v1(z_r), v1(z_{r-1})] onto Y; its
    inverse at y is v1(v0^{r-1}(y)).
    """
    w = y_edges.copy()
    for r in range(1, max_R + 1):
        yield r, (1.0 + w) / 2.0
        if r < max_R:
            w = hmap.left_inverse(w, tol=tol)


def ulam_induced_matrix(hmap, ladder, cells, max_R, tol=1e-13):
    """Row-stochastic Ulam matrix of the induced map on a uniform Y grid.

    Weights are exact interval-preimage lengths, so row sums fall short of 1
    only by the mass of {R > max_R} (= z_maxR under normalized Lebesgue).
    """
    if cells < 32:
        raise DomainError("need at least 32 cells on Y")
    if max_R > ladder.depth:
        raise DomainError("max_R exceeds ladder depth")
    y_edges = np.linspace(0.5, 1.0, cells + 1)
    width = 0.5 / cells
    P = np.zeros((cells, cells))
    targets = np.arange(cells)
    for _r, pre in _branch_preimage_edges(hmap, ladder, y_edges, max_R, tol):
        # pre[i] .. pre[i+1] is the branch preimage of target cell i,
        # in units of source cells
        lo = np.clip((pre[:-1] - 0.5) / width, 0.0, cells)
        hi = np.clip((pre[1:] - 0.5) / width, 0.0, cells)
        live = hi > lo
        j_lo = np.clip(np.floor(lo).astype(int), 0, cells - 1)
        j_hi = np.clip(np.floor(hi - 1e-15).astype(int), 0, cells - 1)
        same = live & (j_lo == j_hi)
        np.add.at(P, (j_lo[same], targets[same]), hi[same] - lo[same])
        for i in targets[live & (j_lo != j_hi)]:
            P[j_lo[i], i] += j_lo[i] + 1.0 - lo[i]
            P[j_hi[i], i] += hi[i] - j_hi[i]
            P[j_lo[i] + 1:j_hi[i], i] += 1.0
    return P, y_edges


def induced_density(hmap, ladder, cells=256, max_R=10**4, tol=1e-12,
                    max_iter=50000):
    """Leading fixed vector of the induced-map Ulam matrix, by power iteration."""
    P, y_edges = ulam_induced_matrix(hmap, ladder, cells, max_R)
    row_sums = P.sum(axis=1)
    row_deficit = float(np.max(np.abs(1.0 - row_sums)))
    PT = np.ascontiguousarray(P.T)

    pi = np.full(cells, 1.0 / cells)
    resid = np.inf
    for _ in range(max_iter):
        nxt = PT @ pi
        nxt /= nxt.sum()
        resid = float(np.abs(nxt - pi).sum())
        pi = nxt
        if resid <= tol:
            break
    else:
        raise NumericError("power iteration stagnated", residual=resid)

    w = _branch_mass_sequence(pi, y_edges, ladder)
    return InducedDensity(edges=y_edges, masses=pi, power_residual=resid,
                          row_deficit=row_deficit, branch_masses=w)


def _branch_mass_sequence(pi, y_edges, ladder):
    """w[m] = nu_0(v1(J_m)): induced mass of the return-time-(m+1) branch."""
    cells = pi.size
    dens = pi / np.diff(y_edges)
    cum = np.concatenate([[0.0], np.cumsum(pi)])
    z = ladder.z

    def cdf(t):
        i = np.clip(np.searchsorted(y_edges, t, side="left") - 1, 0, cells - 1)
        return cum[i] + dens[i] * (t - y_edges[i])

    upper = (1.0 + z[:-1]) / 2.0       # v1(z_m)
    lower = (1.0 + z[1:]) / 2.0        # v1(z_{m+1})
    return np.maximum(cdf(upper) - cdf(lower), 0.0)


# -- construction 2: pull-back of the induced measure ----------------------


def pull_back_density(hmap, ladder, induced, n_terms=10**4,
                      max_cell_width=None, tol=1e-13):
    """Global invariant density: induced mass on Y plus the excursion terms

        nu(A) propto nu_0(A n Y) + sum_n nu_0(f^-n A n {R > n}),

    truncated at n_terms and renormalized.  On the ladder cell J_j the series
    collapses to the suffix sum of branch masses w_m over m >= j.

    With max_cell_width set, ladder cells wider than that are subdivided and
    their sub-masses accumulated term by term through the inverse branch;
    the ladder points remain breakpoints, so cell-alignment arguments are
    unaffected while the wide top cells stop flattening the density.

    Cells deeper than roughly a third of the ladder depth are under-filled by
    the depth truncation (their suffix sums stop at the ladder bottom); keep
    profile analysis windows well above the deepest cells.
    """
    L = ladder.depth
    if n_terms < 1:
        raise DomainError("n_terms must be positive")
    w = induced.branch_masses            # m = 0 .. L-1
    suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    j = np.arange(1, L)                  # ladder cells J_1 .. J_{L-1}
    cap = np.minimum(j + n_terms, L)     # sum over m = j .. j+n_terms-1
    ladder_masses = suffix[j] - suffix[cap]

    Z = 1.0 + float(ladder_masses.sum())

    z = ladder.z
    ladder_edges = z[:0:-1]              # ascending: z_L .. z_1
    ladder_mass_vec = ladder_masses[::-1]
    if max_cell_width is not None:
        ladder_edges, ladder_mass_vec = _subdivide_ladder_masses(
            hmap, ladder, induced, n_terms, max_cell_width, Z,
            ladder_edges, ladder_mass_vec, tol)

    edges = np.concatenate([ladder_edges, induced.edges[1:]])
    masses = np.concatenate([ladder_mass_vec, induced.masses]) / Z
    density = masses / np.diff(edges)
    ladder_cells = ladder_edges.size - 1

    # crude bound on the mass lost below z_L: nu(J_j) <= dens_max z_j / 2
    # and z_j ~ j^{-p} gives sum_{j >= L} z_j ~ z_L L / (p - 1)
    p = hmap.p
    dens_floor = induced.masses.min() / induced.widths.max()
    tail_bound = float(0.5 * z[L] * L / max(p - 1.0, 0.1)
                       * induced.density_lebesgue.max() / Z)

    meta = {
        "Z": Z,
        "branch_masses": w,
        "truncated_mass": tail_bound,
        "dens_floor": float(dens_floor),
        "induced_residual": induced.power_residual,
        "z": ladder.z,
        "n_terms": n_terms,
        "max_cell_width": max_cell_width,
    }
    return DensityGrid(edges=edges, density=density,
                       ladder_cells=ladder_cells, tag="pullback", meta=meta)


def _subdivide_ladder_masses(hmap, ladder, induced, n_terms, max_width, Z,
                             ladder_edges, ladder_mass_vec, tol):
    """Split wide ladder cells and rebuild their masses by the same series.

    For a sub-interval (a, b) of J_j the excursion terms are
    nu_0(v1(v0^{n-1}((a, b)))), accumulated by iterating v0 on the sub-edge
    array; whole-cell masses of the unsplit cells are kept from the suffix
    sums (the two computations agree on whole cells by construction).
    """
    widths = np.diff(ladder_edges)
    wide = widths > max_width
    if not np.any(wide):
        return ladder_edges, ladder_mass_vec
    pieces = []
    keep_mass = []
    for i, (a, b) in enumerate(zip(ladder_edges[:-1], ladder_edges[1:])):
        if wide[i]:
            k = int(np.ceil((b - a) / max_width))
            pieces.append(np.linspace(a, b, k + 1))
        else:
            pieces.append(np.array([a, b]))
            keep_mass.append((i, ladder_mass_vec[i]))
    new_edges = np.unique(np.concatenate(pieces))

    # accumulate the series cdf at every sub-edge
    wa = new_edges.copy()
    acc = np.zeros_like(new_edges)
    cum0 = np.concatenate([[0.0], np.cumsum(induced.masses)])
    dens0 = induced.density_lebesgue
    y_edges = induced.edges

    def cdf0(t):
        i = np.clip(np.searchsorted(y_edges, t, side="left") - 1,
                    0, induced.masses.size - 1)
        return cum0[i] + dens0[i] * (t - y_edges[i])

    for _n in range(n_terms):
        acc += cdf0((1.0 + wa) / 2.0)
        wa = hmap.left_inverse(wa, tol=tol)
        if np.all(wa < ladder_edges[0]):
            break
    new_mass = np.diff(acc)
    # replace whole-cell masses on unsplit cells by their exact suffix sums
    for i, m_exact in keep_mass:
        a, b = ladder_edges[i], ladder_edges[i + 1]
        k = int(np.searchsorted(new_edges, 0.5 * (a + b), side="left")) - 1
        new_mass[k] = m_exact
    return new_edges, np.maximum(new_mass, 0.0)


def kac_partial_sums(density, N):
    """S_N = sum_{r<=N} r nu({R = r} n Y); tends to 1 by Kac's formula."""
    w = density.meta["branch_masses"]
    Z = density.meta["Z"]
    N = min(N, w.size)
    r = np.arange(1, N + 1, dtype=float)
    return np.cumsum(r * w[:N]) / Z


# -- construction 3: orbit histogram ---------------------------------------


def empirical_density(hmap, x0, burn_in, n_iter, edges, seed,
                      ladder_cells=None, max_restarts=16):
    """Histogram of a single orbit after burn-in, normalized on the grid.

    Deterministic given (x0, seed); the rng is consumed only when the orbit
    stalls (exact fixed point or precision stall) and a perturbed restart is
    needed, which is reported in meta.
    """
    if n_iter < 10**5:
        raise DomainError("empirical density needs n_iter >= 1e5")
    rho = hmap.rho
    coef, expo = rho.coef, rho._expo
    rng = np.random.default_rng(seed)
    total = burn_in + n_iter
    orbit = np.empty(total)
    restarts = 0
    x_start = float(x0)
    while True:
        done = fill_orbit(x_start, hmap.gamma, coef, expo, orbit)
        if done == total:
            break
        restarts += 1
        if restarts > max_restarts:
            raise NumericError("orbit kept stalling", restarts=restarts)
        x_start = float(np.clip(x0 + (rng.random() - 0.5) * 1e-6,
                                1e-9, 1.0 - 1e-9))
    pts = orbit[burn_in:]
    counts, _ = np.histogram(pts, bins=edges)
    inside = counts.sum()
    density = counts / inside / np.diff(edges)
    if ladder_cells is None:
        ladder_cells = int(np.sum(edges < 0.5))
    meta = {
        "restarts": restarts,
        "outside_fraction": float(1.0 - inside / pts.size),
        "x0": float(x0),
        "seed": seed,
    }
    return DensityGrid(edges=edges.copy(), density=density,
                       ladder_cells=ladder_cells, tag="empirical", meta=meta)


def induced_orbit_histogram(hmap, x0, n_returns, seed, y_edges):
    """Histogram of the induced-map orbit: the Y-visits of a plain orbit."""
    rho = hmap.rho
    # E[R] steps per return; pad generously and extend if short
    factor = 4.0
    rng = np.random.default_rng(seed)
    x_start = float(x0)
    while True:
        budget = int(factor * n_returns / max(hmap.gamma, 0.2))
        orbit = np.empty(budget)
        done = fill_orbit(x_start, hmap.gamma, rho.coef, rho._expo, orbit)
        if done < budget:
            x_start = float(np.clip(x0 + (rng.random() - 0.5) * 1e-6,
                                    1e-9, 1.0 - 1e-9))
            continue
        visits = orbit[orbit > 0.5]
        if visits.size >= n_returns:
            visits = visits[:n_returns]
            break
        factor *= 2.0
    counts, _ = np.histogram(visits, bins=y_edges)
    return counts / counts.sum()


# -- verification operations ------------------------------------------------


def density_fixed_point_check(hmap, density, n_terms=1000, max_cells=None,
                              tol=1e-13):
    """Verify h(x) = sum_n |(v1 v0^n)'(x)| h(v1 v0^n x) at ladder midpoints.

    Pure verification: the series is evaluated with the inverse branches and
    compared to the stored density.  Returns (midpoints, relative deviation,
    tail estimate).
    """
    lc = density.ladder_cells
    if max_cells is not None:
        sel = slice(lc - min(max_cells, lc), lc)
    else:
        sel = slice(0, lc)
    x = density.midpoints[sel]
    h_x = density.density[sel]
    if np.any(h_x <= 0):
        raise DomainError("density must be positive on the checked cells")

    y = x.copy()
    d = np.ones_like(x)
    s = np.zeros_like(x)
    for _n in range(n_terms):
        target = (1.0 + y) / 2.0
        h_t = density.value_at(target)
        term = 0.5 * d * h_t
        if np.any(term < 0):
            raise NumericError("negative series term")
        s += term
        y_next = hmap.left_inverse(y, tol=tol)
        d = d / hmap._df_left(np.atleast_1d(y_next))
        y = y_next
    tail_estimate = float(np.max(0.5 * d * density.density[density.y_slice].max()
                                 * n_terms / hmap.p))
    rel_dev = np.abs(s - h_x) / h_x
    return x, rel_dev, tail_estimate


def push_forward_masses(hmap, density, tol=1e-13):
    """One-step push-forward of the grid measure: nu(f^{-1}(cell)) per cell.

    For an invariant density this reproduces the cell masses.
    """
    e = density.edges
    v0e = hmap.left_inverse(e, tol=tol)
    v1e = (1.0 + e) / 2.0
    m0 = density.mass_of_interval(v0e[:-1], v0e[1:])
    m1 = density.mass_of_interval(v1e[:-1], v1e[1:])
    return m0 + m1
