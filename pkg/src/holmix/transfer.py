"""Discretized transfer-operator machinery.

The one-step operator is discretized in Galerkin form against the estimated
invariant measure: the matrix entry (i, j) is nu(cell_j n f^-1(cell_i)) /
nu(cell_i), with preimage intervals computed exactly through the inverse
branches.  Two structural identities then hold to floating-point accuracy:

 * nu(K phi) = nu(phi) for every grid function (column sums against nu), and
 * the trajectory decomposition of K^n into first-visit / middle / last-visit
   blocks plus the never-visiting block, realized by diagonal masks.

Excursion operators (trajectories leaving the base Y and returning after
exactly n steps) are realized on the Y grid directly from their one-branch
closed form; their sum over n reproduces the transfer operator of the induced
map, whose Ulam fixed vector is the measure we discretize against, so the
normalization Sum_n Lambda_n 1_Y = 1_Y is inherited rather than approximated.

Variation norms are grid total-variation proxies with zero extension outside
[0, 1]: V(phi) = |phi_1| + sum |successive differences| + |phi_m|.  The unit
ball of this norm is the convex hull of +-(1/2) block indicators (co-area),
so induced operator norms are computed exactly by scanning blocks.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from holmix.errors import DomainError, NumericError

_DENSITY_FLOOR = 1e-12


# -- grid operators --------------------------------------------------------


@dataclass(eq=False)
class GridOperator:
    edges: np.ndarray
    matrix: object            # csr_matrix or ndarray, acts on cell values
    tag: str
    nu: np.ndarray = None     # cell masses of the reference measure
    meta: dict = field(default_factory=dict)

    def apply(self, phi):
        return self.matrix @ phi

    @property
    def dense(self):
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)


def _interval_cells_uniform(a, b, lo_edge, width, n_cells, offset):
    """Distribute [a, b] over a uniform grid; returns (cols, lengths)."""
    la = (a - lo_edge) / width
    lb = (b - lo_edge) / width
    la = np.clip(la, 0.0, n_cells)
    lb = np.clip(lb, 0.0, n_cells)
    if lb <= la:
        return [], []
    j0 = min(int(la), n_cells - 1)
    j1 = min(int(np.ceil(lb)) - 1, n_cells - 1)
    if j0 == j1:
        return [offset + j0], [(lb - la) * width]
    cols = list(range(offset + j0, offset + j1 + 1))
    lens = [0.0] * len(cols)
    lens[0] = (j0 + 1.0 - la) * width
    lens[-1] = (lb - j1) * width
    for k in range(1, len(cols) - 1):
        lens[k] = width
    return cols, lens


def build_transfer_operator(hmap, density, tag="K", tol=1e-13):
    """Galerkin matrix of the transfer operator against the grid measure.

    Row sums reproduce nu(f^-1 cell)/nu(cell), i.e. K 1 = 1 up to the
    invariance defect of the estimated measure; the deepest ladder cell loses
    its off-grid preimage, which is reported in meta.
    """
    edges = density.edges
    nu = density.masses
    if np.any(nu <= 0):
        raise NumericError("grid measure has empty cells")
    n_cells = nu.size

    v0e = hmap.left_inverse(edges, tol=tol)
    v1e = (1.0 + edges) / 2.0
    dens = density.density

    rows, cols, vals = [], [], []

    def add_interval_mass(i, a, b):
        a = max(a, edges[0])
        if b <= a:
            return
        j0 = min(int(np.searchsorted(edges, a, side="right") - 1), n_cells - 1)
        j1 = min(int(np.searchsorted(edges, b, side="left") - 1), n_cells - 1)
        j0 = max(j0, 0)
        for c in range(j0, j1 + 1):
            seg = min(b, edges[c + 1]) - max(a, edges[c])
            if seg > 0:
                rows.append(i)
                cols.append(c)
                vals.append(dens[c] * seg)

    for i in range(n_cells):
        add_interval_mass(i, v0e[i], v0e[i + 1])   # left-branch preimage
        add_interval_mass(i, v1e[i], v1e[i + 1])   # affine-branch preimage

    M = sp.csr_matrix((vals, (rows, cols)), shape=(n_cells, n_cells))
    M = M.multiply(1.0 / nu[:, None]).tocsr()
    deepest_loss = float(density.mass_of_interval(0.0, edges[0]))
    meta = {"deep_row_loss": deepest_loss,
            "row_sum_range": (float((M @ np.ones(n_cells)).min()),
                              float((M @ np.ones(n_cells)).max()))}
    return GridOperator(edges=edges, matrix=M, tag=tag, nu=nu, meta=meta)


def build_lebesgue_operator(hmap, density, tol=1e-13):
    """Same construction against Lebesgue: preserves Lebesgue integrals."""
    from holmix.measure import DensityGrid
    edges = density.edges
    span = edges[-1] - edges[0]
    flat = DensityGrid(edges=edges,
                       density=np.full(edges.size - 1, 1.0 / span),
                       ladder_cells=density.ladder_cells, tag="flat")
    return build_transfer_operator(hmap, flat, tag="L", tol=tol)


def mask_vectors(density):
    """(left mask, Y mask) as float vectors over the cells."""
    mid = density.midpoints
    dl = (mid <= 0.5).astype(float)
    return dl, 1.0 - dl


def apply_K_pointwise(hmap, density, phi_values, x=None, tol=1e-13):
    """The transfer operator evaluated from its two-preimage formula,

        K phi(x) = [h(v0 x) |v0'(x)| phi(v0 x) + h(v1 x) |v1'(x)| phi(v1 x)] / h(x),

    at grid nodes (cell midpoints) or at explicit points x.  phi is a grid
    function looked up by cell.  The deepest cell is excluded from the default
    node set: its left preimage lies below the grid.
    """
    if x is None:
        x = density.midpoints[1:]
    else:
        x = np.atleast_1d(np.asarray(x, float))
    h_x = density.value_at(x)
    if np.any(h_x < _DENSITY_FLOOR):
        raise NumericError("density below evaluation floor",
                           floor=_DENSITY_FLOOR)
    y0 = hmap.left_inverse(x, tol=tol)
    y1 = (1.0 + x) / 2.0
    d0 = 1.0 / hmap._df_left(np.atleast_1d(y0))
    phi = np.asarray(phi_values)
    out = (density.value_at(y0) * d0 * phi[density.cell_index(y0)]
           + density.value_at(y1) * 0.5 * phi[density.cell_index(y1)]) / h_x
    return out


# -- excursion operators on the Y grid --------------------------------------


class ExcursionFamily:
    """Builds the return-time-n excursion operators on the Y grid.

    The n-th operator is the weighted composition supported on the branch
    with return time n; its Galerkin matrix row i carries the nu-mass of
    v1(v0^(n-1)(Ycell_i)) distributed over the Y cells.  Iterating v0 on the
    Y-edge array advances n by one.
    """

    def __init__(self, hmap, density, tol=1e-13):
        self.hmap = hmap
        self.density = density
        self.tol = tol
        lc = density.ladder_cells
        self.y_edges = density.edges[lc:]
        self.y_cells = self.y_edges.size - 1
        self.y_width = 0.5 / self.y_cells
        self.nu_y = density.masses[lc:]
        self.dens_y = density.density[lc:]
        self._w = self.y_edges.copy()   # v0^{n-1} of the Y edges
        self._n = 1

    @property
    def n(self):
        return self._n

    def _current_entries(self):
        """(rows, cols, masses) of nu(Ycell_col n v1(v0^{n-1}(Ycell_row)))."""
        pre = (1.0 + self._w) / 2.0
        m = self.y_cells
        la = np.clip((pre[:-1] - 0.5) / self.y_width, 0.0, m)
        lb = np.clip((pre[1:] - 0.5) / self.y_width, 0.0, m)
        j_lo = np.clip(np.floor(la).astype(int), 0, m - 1)
        j_hi = np.clip(np.floor(lb - 1e-15).astype(int), 0, m - 1)
        live = lb > la
        rows_idx = np.arange(m)
        same = live & (j_lo == j_hi)
        rows = [rows_idx[same]]
        cols = [j_lo[same]]
        vals = [(lb[same] - la[same]) * self.y_width * self.dens_y[j_lo[same]]]
        for i in rows_idx[live & (j_lo != j_hi)]:
            cs = np.arange(j_lo[i], j_hi[i] + 1)
            lens = np.full(cs.size, self.y_width)
            lens[0] = (j_lo[i] + 1.0 - la[i]) * self.y_width
            lens[-1] = (lb[i] - j_hi[i]) * self.y_width
            rows.append(np.full(cs.size, i))
            cols.append(cs)
            vals.append(lens * self.dens_y[cs])
        return (np.concatenate(rows), np.concatenate(cols),
                np.concatenate(vals))

    def current_matrix(self):
        """csr matrix of the current-n operator (Y grid)."""
        rows, cols, vals = self._current_entries()
        m = self.y_cells
        return sp.csr_matrix((vals / self.nu_y[rows], (rows, cols)),
                             shape=(m, m))

    def accumulate_dense(self, S):
        """S += current operator, without building an intermediate csr."""
        rows, cols, vals = self._current_entries()
        np.add.at(S, (rows, cols), vals / self.nu_y[rows])

    def current_row_masses(self):
        """nu(v1(v0^{n-1}(Ycell_i))) / nu(Ycell_i): the row sums."""
        rows, _, vals = self._current_entries()
        out = np.zeros(self.y_cells)
        np.add.at(out, rows, vals)
        return out / self.nu_y

    def advance(self):
        self._w = self.hmap.left_inverse(self._w, tol=self.tol)
        self._n += 1


def excursion_operator(hmap, density, n, tol=1e-13):
    """The excursion operator for return time n, as a Y-grid GridOperator."""
    if n < 1:
        raise DomainError("excursion index must be >= 1")
    fam = ExcursionFamily(hmap, density, tol=tol)
    while fam.n < n:
        fam.advance()
    lc = density.ladder_cells
    return GridOperator(edges=density.edges[lc:], matrix=fam.current_matrix(),
                        tag=f"Lambda_{n}", nu=density.masses[lc:])


def excursion_normalization(hmap, density, N, tol=1e-13):
    """sup |sum_{n<=N} Lambda_n 1_Y - 1_Y| and the operator Kac partial sums.

    Returns (sup deviation, kac partial sums array over n = 1..N).
    """
    fam = ExcursionFamily(hmap, density, tol=tol)
    total = np.zeros(fam.y_cells)
    nu_y = fam.nu_y
    kac_terms = np.empty(N)
    for n in range(1, N + 1):
        r = fam.current_row_masses()
        total += r
        # integral_Y Lambda_n(1_Y) d nu = nu(R = n) under the global measure
        kac_terms[n - 1] = n * float(nu_y @ r)
        if n < N:
            fam.advance()
    sup_dev = float(np.max(np.abs(total - 1.0)))
    return sup_dev, np.cumsum(kac_terms)


def excursion_bv_norms(hmap, density, n_list, tol=1e-13):
    """Exact grid-variation operator norms of the excursion operators."""
    n_list = sorted(set(int(n) for n in n_list))
    fam = ExcursionFamily(hmap, density, tol=tol)
    out = {}
    for n in range(1, n_list[-1] + 1):
        if n in n_list:
            out[n] = bv_operator_norm(fam.current_matrix().toarray())
        if n < n_list[-1]:
            fam.advance()
    return np.array(n_list), np.array([out[n] for n in n_list])


def spectral_probe(hmap, density, N_terms, tol=1e-13):
    """Eigen-structure of the truncated excursion-sum operator on the Y grid.

    Expects the leading eigenvalue at 1 (up to truncation) and a strict
    modulus gap; the normalized leading left eigenvector is a probability.
    """
    fam = ExcursionFamily(hmap, density, tol=tol)
    if fam.y_cells < 64:
        raise DomainError("spectral probe needs at least 64 Y cells")
    S = np.zeros((fam.y_cells, fam.y_cells))
    for n in range(1, N_terms + 1):
        fam.accumulate_dense(S)
        if n < N_terms:
            fam.advance()
    try:
        eigvals, eigvecs = np.linalg.eig(S.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError("eigen-solver failure") from exc
    order = np.argsort(-np.abs(eigvals))
    lead = eigvals[order[0]]
    second = eigvals[order[1]]
    left = np.real(eigvecs[:, order[0]])
    left = np.abs(left) / np.abs(left).sum()
    return {
        "leading": float(np.real(lead)),
        "leading_modulus": float(np.abs(lead)),
        "second_modulus": float(np.abs(second)),
        "gap": float(np.abs(lead) - np.abs(second)),
        "left_eigvec": left,
    }


# -- renewal sequence --------------------------------------------------------


def renewal_sequence(hmap, density, N, tol=1e-13):
    """T_0 = id, T_n = sum_{k=1..n} Lambda_k T_{n-k}, on the Y grid.

    Equivalent to summing all excursion compositions with heights adding to
    n.  N is capped for cost control.
    """
    if N > 512:
        raise DomainError("renewal sequence capped at N = 512")
    fam = ExcursionFamily(hmap, density, tol=tol)
    lams = []
    for n in range(1, N + 1):
        lams.append(fam.current_matrix())
        if n < N:
            fam.advance()
    m = fam.y_cells
    T = [np.eye(m)]
    for n in range(1, N + 1):
        acc = np.zeros((m, m))
        for k in range(1, n + 1):
            acc += lams[k - 1] @ T[n - k]
        T.append(acc)
    edges = density.edges[density.ladder_cells:]
    nu_y = density.masses[density.ladder_cells:]
    return [GridOperator(edges=edges, matrix=T[n], tag=f"T_{n}", nu=nu_y)
            for n in range(N + 1)]


def renewal_deviation(hmap, density, ops, phi_values):
    """sup_Y |T_n phi - integral_Y phi d nu| for each returned operator."""
    nu_y = ops[1].nu
    target = float(nu_y @ phi_values)
    return np.array([float(np.max(np.abs(op.matrix @ phi_values - target)))
                     for op in ops[1:]])


# -- masked-path decomposition of K^n ---------------------------------------


def path_split_check(hmap, density, n, phi_values, op=None, tol=1e-13):
    """Residual of K^n = sum_{a+k+b=n} A_a T_k B_b + C_n on a test function.

    All five operator families are masked products of the single one-step
    matrix, so the identity is exact on the discretization; the residual
    measures only floating-point roundoff.
    """
    if n > 64:
        raise DomainError("path split capped at n = 64")
    if op is None:
        op = build_transfer_operator(hmap, density, tol=tol)
    K = op.matrix
    dl, dy = mask_vectors(density)
    phi = np.asarray(phi_values, dtype=float)

    lhs = phi.copy()
    for _ in range(n):
        lhs = K @ lhs

    # B chains: c_b = (K D_L)^b phi, so B_b phi = D_Y c_b (B_0 = D_Y)
    m_parts = [np.zeros_like(phi) for _ in range(n + 1)]
    c = phi.copy()
    for b in range(0, n + 1):
        if b > 0:
            c = K @ (dl * c)
        u = dy * c
        m_parts[b] += u            # k = 0 term (T_0 = D_Y)
        for k in range(1, n - b + 1):
            u = K @ u
            m_parts[b + k] += dy * u

    # rhs = C_n phi + sum_a A_a m_{n-a}
    t = dl * phi
    for _ in range(n):
        t = dl * (K @ t)
    rhs = t
    for a in range(0, n + 1):
        psi = m_parts[n - a]
        if a == 0:
            rhs = rhs + dy * psi
            continue
        t = K @ (dy * psi)
        for _ in range(a - 1):
            t = K @ (dl * t)
        rhs = rhs + dl * t

    return float(np.max(np.abs(lhs - rhs)))


def masked_block_apply(hmap, density, which, n, phi_values, op=None, tol=1e-13):
    """Apply A_n, B_n or C_n (masked trajectory blocks) to a grid function."""
    if op is None:
        op = build_transfer_operator(hmap, density, tol=tol)
    K = op.matrix
    dl, dy = mask_vectors(density)
    phi = np.asarray(phi_values, dtype=float)
    if which == "A":
        if n < 1:
            raise DomainError("A block needs n >= 1")
        t = K @ (dy * phi)
        for _ in range(n - 1):
            t = K @ (dl * t)
        return dl * t
    if which == "B":
        t = phi.copy()
        for _ in range(n):
            t = K @ (dl * t)
        return dy * t
    if which == "C":
        t = dl * phi
        for _ in range(n):
            t = dl * (K @ t)
        return t
    raise DomainError(f"unknown block {which!r}")


def c_block_integral_check(hmap, density, n, phi_values, op=None):
    """(integral |C_n phi| d nu, ||phi||_inf * nu([0, z_{n+1}]))."""
    cphi = masked_block_apply(hmap, density, "C", n, phi_values, op=op)
    lhs = float(density.masses @ np.abs(cphi))
    z = density.meta["z"]
    bound_mass = density.mass_of_interval(density.edges[0], z[n + 1])
    rhs = float(np.max(np.abs(phi_values))) * bound_mass
    return lhs, rhs


# -- alpha-dependence coefficients -------------------------------------------


def canonical_bv1_family(density, n_indicators=101, n_ramps=3):
    """Test battery of unit-variation grid functions.

    Interval indicators scaled by 1/2 (variation 2 -> ||d phi|| = 1) with
    endpoints on grid breakpoints chosen deterministically across the ladder
    and Y parts, plus monotone ramps cell-averaged from 0 to 1.
    """
    edges = density.edges
    n_edges = edges.size
    mid = density.midpoints
    cols = []
    # deterministic endpoint palette: spread over edge indices
    n_pal = 15
    while n_pal * (n_pal - 1) // 2 < n_indicators:
        n_pal += 1
    pal = np.unique(np.linspace(0, n_edges - 1, n_pal).astype(int))
    pairs = [(a, b) for ai, a in enumerate(pal) for b in pal[ai + 1:]]
    for a, b in pairs[:n_indicators]:
        ind = ((mid > edges[a]) & (mid <= edges[b])).astype(float)
        cols.append(0.5 * ind)
    lo = edges[0]
    for c in np.linspace(0.3, 0.9, n_ramps):
        ramp = np.clip((mid - lo) / (c - lo), 0.0, 1.0)
        cols.append(ramp)
    return np.column_stack(cols)


def alpha_sequence(hmap, density, n_list, family=None, op=None, tol=1e-13):
    """alpha_hat_1(n) = max over the family of nu(|K^n (phi - nu phi)|).

    A lower bound for the first alpha-dependence coefficient (finite family);
    computed for every n in n_list in one sweep of operator powers.
    """
    if op is None:
        op = build_transfer_operator(hmap, density, tol=tol)
    if family is None:
        family = canonical_bv1_family(density)
    nu = op.nu
    n_list = sorted(set(int(n) for n in n_list))
    if n_list[0] < 0:
        raise DomainError("alpha index must be >= 0")
    centered = family - nu @ family
    out = {}
    cur = centered
    step = 0
    for n in n_list:
        while step < n:
            cur = op.matrix @ cur
            step += 1
        out[n] = float(np.max(nu @ np.abs(cur)))
    return np.array(n_list), np.array([out[n] for n in n_list])


def alpha_coefficient(hmap, density, n, family=None, op=None):
    return alpha_sequence(hmap, density, [n], family=family, op=op)[1][0]


def covariance_decay(hmap, density, phi_values, psi_values, n_list, op=None):
    """|nu(psi . K^n phi^0)|: the covariance of psi with phi n steps back."""
    if op is None:
        op = build_transfer_operator(hmap, density)
    nu = op.nu
    phi0 = np.asarray(phi_values, float) - float(nu @ phi_values)
    psi = np.asarray(psi_values, float)
    n_list = sorted(set(int(n) for n in n_list))
    out = []
    cur = phi0
    step = 0
    for n in n_list:
        while step < n:
            cur = op.matrix @ cur
            step += 1
        out.append(abs(float(nu @ (psi * cur))))
    return np.array(n_list), np.array(out)


# -- grid variation (BV proxy) ----------------------------------------------


def grid_variation(values):
    """Total variation of the grid function extended by zero outside [0, 1]."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return float(abs(v[0]) + np.abs(np.diff(v)).sum() + abs(v[-1]))
    return np.abs(v[0]) + np.abs(np.diff(v, axis=0)).sum(axis=0) + np.abs(v[-1])


def bv_operator_norm(mat):
    """Operator norm induced by the grid variation, computed exactly.

    The extreme points of the unit variation ball are the +-(1/2) block
    indicators, so the norm is half the largest variation of a column-block
    sum.
    """
    B = np.asarray(mat, dtype=float)
    m = B.shape[1]
    zero = np.zeros((B.shape[0], 1))
    C = np.concatenate([zero, np.cumsum(B, axis=1)], axis=1)
    best = 0.0
    for i in range(m):
        blocks = C[:, i + 1:] - C[:, i:i + 1]
        V = grid_variation(blocks)
        best = max(best, float(V.max()))
    return 0.5 * best


def variation_growth(hmap, density, phi_values, n_list, op=None):
    """V(K^n phi) across n, for the uniform-boundedness proxy."""
    if op is None:
        op = build_transfer_operator(hmap, density)
    n_list = sorted(set(int(n) for n in n_list))
    cur = np.asarray(phi_values, dtype=float)
    out, step = {}, 0
    for n in n_list:
        while step < n:
            cur = op.matrix @ cur
            step += 1
        out[n] = grid_variation(cur)
    return np.array(n_list), np.array([out[n] for n in n_list])
