"""Thermal Markov generators in the weak-coupling (Davies) form.

Classical-sector generators act on configuration spaces of commuting models
(the toric-code stabilizer sectors and their Ising analogs): single-flip
moves with rate(flip) = table(-dE), where the rate table carries
lambda**2 * R(omega) at the model's Bohr frequencies and R obeys KMS.  This
makes detailed balance exact by construction and the Gibbs state
stationary.

Structure checks cover the standard properties of such generators:
stationarity of Gibbs, reversibility (self-adjointness in the
Gibbs-weighted inner product), negativity of the dissipative part, and
relaxation; plus the two workhorse inequalities used for memory stability
analysis: the convexity lower bound

    <R, exp(t L*) R>_beta >= exp(t <R, L* R>_beta),   <R>_beta = 0,

and the coupling-commutator upper bound

    -<A, L* A>_beta <= 2 max_w R(w) * sum_a <[S_a, A], [S_a, A]>_beta,

whose classical-sector form replaces commutators by flip differences.

Full quantum Davies generators (noncommuting Hamiltonians) are built dense
for few-spin systems only, as oracles for the classical-sector reduction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from qmemlab._errors import CapacityError, NumericalFailure, ParameterError
from qmemlab import lattice as lat

CLASSICAL_SECTOR = "classical-sector"
FULL_DAVIES = "full-davies"

ISING = "ising"
KITAEV_SECTOR = "kitaev-sector"

DENSE_LIMIT = 4096
STATE_CAP = 2 ** 20


@dataclass(frozen=True)
class DaviesRateTable:
    """Transition rates lambda**2 * R(omega) at the discrete Bohr frequencies.

    KMS is enforced analytically: the rate at -omega is computed as
    exp(-beta*omega) times the rate at +omega, so detailed balance of the
    table is exact, not a quadrature property.
    """

    frequencies: np.ndarray
    rates: np.ndarray
    beta: float
    coupling_sq: float

    def rate(self, omega):
        idx = np.argmin(np.abs(self.frequencies - omega))
        if abs(self.frequencies[idx] - omega) > 1e-9 * max(1.0, abs(omega)):
            raise ParameterError(f"frequency {omega} not in rate table")
        return float(self.rates[idx])

    @property
    def max_rate(self):
        return float(np.max(self.rates))

    def detailed_balance_residual(self):
        res = 0.0
        for w, r in zip(self.frequencies, self.rates):
            r_neg = self.rate(-w)
            res = max(res, abs(r_neg - math.exp(-self.beta * w) * r))
        return res


def build_rates(model, bohr_frequencies, coupling_sq=1.0):
    """Rate table for a spectral density at the given Bohr frequencies.

    The frequency set must be closed under negation and fit inside the
    density's window [-cutoff, cutoff].
    """
    freqs = np.asarray(sorted(set(float(w) for w in bohr_frequencies)))
    if freqs.size == 0:
        raise ParameterError("empty Bohr frequency set")
    for w in freqs:
        if not np.any(np.abs(freqs + w) < 1e-9):
            raise ParameterError(f"frequency set not closed under negation (missing {-w})")
        if abs(w) > model.cutoff + 1e-12:
            raise ParameterError(f"frequency {w} outside the density window "
                                 f"[-{model.cutoff}, {model.cutoff}]")
    if coupling_sq <= 0:
        raise ParameterError("coupling_sq must be > 0")
    rates = np.empty_like(freqs)
    for i, w in enumerate(freqs):
        if w >= 0:
            rates[i] = coupling_sq * model.evaluate(w)
        else:
            rates[i] = (coupling_sq * model.evaluate(-w)
                        * math.exp(model.beta * w))
    if np.any(rates < 0):
        raise ParameterError("negative rate from density evaluation")
    return DaviesRateTable(frequencies=freqs, rates=rates,
                           beta=model.beta, coupling_sq=float(coupling_sq))


def kitaev_bohr_frequencies(energy_scale=1.0):
    """Bohr frequencies of one toric-code stabilizer sector: a single flip
    toggles two cells, each worth 2*energy_scale."""
    s = 4.0 * energy_scale
    return (-s, 0.0, s)


def ising_bohr_frequencies(lattice, energy_scale=1.0):
    degree = lattice.neighbors.shape[1]
    vals = sorted({2.0 * energy_scale * k for k in range(-degree, degree + 1, 2)})
    return tuple(vals)


@dataclass
class GeneratorMatrix:
    """Continuous-time Markov generator with its Gibbs stationary state.

    `matrix` is the forward generator on probability vectors (columns sum
    to zero, off-diagonals >= 0); observables evolve under its transpose.
    `flip_targets[a, s]` is the state reached from s by elementary move a,
    kept for the flip-difference quadratic forms.
    """

    dimension: int
    matrix: sp.csr_matrix
    stationary_weights: np.ndarray
    kind: str
    beta: float
    energies: np.ndarray
    flip_targets: np.ndarray | None = None
    max_rate: float = 0.0
    meta: dict = field(default_factory=dict)


def _gibbs(energies, beta):
    logw = -beta * energies
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _assemble(dim, rows, cols, rates, energies, beta, kind, flip_targets,
              max_rate, meta):
    off = sp.coo_matrix((rates, (rows, cols)), shape=(dim, dim)).tocsr()
    off.sum_duplicates()
    col_sums = np.asarray(off.sum(axis=0)).ravel()
    gen = (off - sp.diags(col_sums)).tocsr()
    return GeneratorMatrix(dimension=dim, matrix=gen,
                           stationary_weights=_gibbs(energies, beta),
                           kind=kind, beta=beta, energies=energies,
                           flip_targets=flip_targets, max_rate=max_rate,
                           meta=meta)


def _spins_from_bits(states, i):
    return 1 - 2 * ((states >> i) & 1)


def build_ising_generator(lattice, rates, beta, energy_scale=1.0,
                          state_cap=STATE_CAP):
    """Exact single-flip generator for a classical Ising lattice.

    Energy is -energy_scale * sum over bonds of s_i s_j; flipping site i
    changes it by 2*energy_scale*s_i*sum of neighbor spins, and the flip
    rate is the table rate at minus that change.
    """
    n = lattice.n_sites
    dim = 2 ** n
    if dim > state_cap:
        raise CapacityError(
            f"2**{n} states exceed the cap {state_cap}; use the kinetic "
            "Monte Carlo path in qmemlab.dynamics")
    states = np.arange(dim, dtype=np.int64)
    spins = np.stack([_spins_from_bits(states, i) for i in range(n)])
    bond_e = np.zeros(dim)
    for a, b in lattice.bonds:
        bond_e -= spins[a] * spins[b]
    energies = energy_scale * bond_e

    rate_of = {float(w): r for w, r in zip(rates.frequencies, rates.rates)}
    rows, cols, data = [], [], []
    targets = np.empty((n, dim), dtype=np.int64)
    for i in range(n):
        nbr_sum = np.zeros(dim, dtype=np.int64)
        for j in lattice.neighbors[i]:
            nbr_sum += spins[j]
        de = 2.0 * energy_scale * spins[i] * nbr_sum
        flip = states ^ (1 << i)
        targets[i] = flip
        r = np.array([rate_of[float(-d)] for d in de])
        rows.append(flip)
        cols.append(states)
        data.append(r)
    return _assemble(dim, np.concatenate(rows), np.concatenate(cols),
                     np.concatenate(data), energies, beta, CLASSICAL_SECTOR,
                     targets, rates.max_rate,
                     {"model": ISING, "n_sites": n, "energy_scale": energy_scale})


def _popcount(x):
    x = np.asarray(x, dtype=np.uint64)
    return np.bitwise_count(x).astype(np.int64)


def build_kitaev_sector_generator(lattice, rates, beta, sector=lat.PLAQUETTE,
                                  energy_scale=1.0, reduced=True,
                                  state_cap=STATE_CAP):
    """Exact generator for one classical stabilizer sector of the 2D torus.

    reduced=True (default) works on the quotient by star (resp. plaquette)
    gauge flips, whose orbits are labeled by the even syndrome pattern plus
    the two bare logical parities: 2**(L*L+1) states instead of 2**(2L*L).
    Gauge flips commute with the dynamics and leave energies and rates
    unchanged, so the lumped chain is exact for every gauge-invariant
    observable (syndrome functions, bare and dressed logicals).

    reduced=False enumerates full edge configurations, for cross-checks at
    small L.
    """
    L = lattice.L
    n_cells = lattice.n_cells
    cells = lattice.cells(sector)
    logicals = lat.canonical_logicals(lattice)
    if sector == lat.PLAQUETTE:
        line1 = logicals[(lat.ZLIKE, lat.HORIZONTAL)].support
        line2 = logicals[(lat.ZLIKE, lat.VERTICAL)].support
    else:
        line1 = logicals[(lat.XLIKE, lat.HORIZONTAL)].support
        line2 = logicals[(lat.XLIKE, lat.VERTICAL)].support

    # per-edge cell pair and logical-parity mask
    edge_cells = [[] for _ in range(lattice.n_edges)]
    for c in range(n_cells):
        for e in cells[c]:
            edge_cells[e].append(c)
    edge_cells = np.array(edge_cells, dtype=np.int64)
    lmask = np.zeros(lattice.n_edges, dtype=np.int64)
    for e in line1:
        lmask[e] ^= 2
    for e in line2:
        lmask[e] ^= 1

    rate_by_excited = np.array([rates.rate(-4.0 * energy_scale),
                                rates.rate(0.0),
                                rates.rate(4.0 * energy_scale)])
    # flipping an edge toggles its two cells; with k of them already
    # excited the energy change is 4*scale*(1-k)

    if not reduced:
        dim = 2 ** lattice.n_edges
        if dim > state_cap:
            raise CapacityError(
                f"2**{lattice.n_edges} edge configurations exceed the cap "
                f"{state_cap}; use reduced=True or the Monte Carlo path")
        states = np.arange(dim, dtype=np.int64)
        cell_masks = np.array([np.sum(1 << cells[c].astype(np.int64))
                               for c in range(n_cells)], dtype=np.int64)
        flags = np.stack([_popcount(states & m) & 1 for m in cell_masks])
        energies = energy_scale * (2.0 * flags.sum(axis=0) - n_cells)
        rows, cols, data = [], [], []
        targets = np.empty((lattice.n_edges, dim), dtype=np.int64)
        for e in range(lattice.n_edges):
            c1, c2 = edge_cells[e]
            k = flags[c1] + flags[c2]
            r = rate_by_excited[k]
            flip = states ^ (1 << e)
            targets[e] = flip
            rows.append(flip)
            cols.append(states)
            data.append(r)
        return _assemble(dim, np.concatenate(rows), np.concatenate(cols),
                         np.concatenate(data), energies, beta,
                         CLASSICAL_SECTOR, targets, rates.max_rate,
                         {"model": KITAEV_SECTOR, "L": L, "sector": sector,
                          "reduced": False, "energy_scale": energy_scale})

    n_low = n_cells - 1
    dim = 4 * 2 ** n_low
    if dim > state_cap:
        raise CapacityError(
            f"reduced sector space {dim} exceeds the cap {state_cap}; "
            "use the kinetic Monte Carlo path")
    states = np.arange(dim, dtype=np.int64)
    logical_bits = states & 3
    slow = states >> 2
    parity = _popcount(slow) & 1
    mask = slow | (parity << n_low)
    n_excited = _popcount(mask)
    energies = energy_scale * (2.0 * n_excited - n_cells)

    low_mask = (1 << n_low) - 1
    rows, cols, data = [], [], []
    targets = np.empty((lattice.n_edges, dim), dtype=np.int64)
    for e in range(lattice.n_edges):
        c1, c2 = edge_cells[e]
        b1 = (mask >> int(c1)) & 1
        b2 = (mask >> int(c2)) & 1
        k = b1 + b2
        r = rate_by_excited[k]
        new_mask = mask ^ ((1 << int(c1)) | (1 << int(c2)))
        new_state = ((new_mask & low_mask) << 2) | (logical_bits ^ lmask[e])
        targets[e] = new_state
        rows.append(new_state)
        cols.append(states)
        data.append(r)
    return _assemble(dim, np.concatenate(rows), np.concatenate(cols),
                     np.concatenate(data), energies, beta, CLASSICAL_SECTOR,
                     targets, rates.max_rate,
                     {"model": KITAEV_SECTOR, "L": L, "sector": sector,
                      "reduced": True, "energy_scale": energy_scale,
                      "n_low": n_low})


def build_classical_generator(lattice, rates, hamiltonian, beta,
                              energy_scale=1.0, state_cap=STATE_CAP,
                              sector=lat.PLAQUETTE, reduced=True):
    """Dispatch on the Hamiltonian family: 'ising' or 'kitaev-sector'."""
    if hamiltonian == ISING:
        return build_ising_generator(lattice, rates, beta,
                                     energy_scale=energy_scale,
                                     state_cap=state_cap)
    if hamiltonian == KITAEV_SECTOR:
        return build_kitaev_sector_generator(lattice, rates, beta,
                                             sector=sector,
                                             energy_scale=energy_scale,
                                             reduced=reduced,
                                             state_cap=state_cap)
    raise ParameterError(f"unknown hamiltonian family {hamiltonian!r}")


def kitaev_reduced_state_maps(gen):
    """Decode helper for reduced Kitaev states: (syndrome mask, l1, l2)."""
    n_low = gen.meta["n_low"]
    states = np.arange(gen.dimension, dtype=np.int64)
    slow = states >> 2
    parity = _popcount(slow) & 1
    mask = slow | (parity << n_low)
    l1 = 1 - 2 * ((states >> 1) & 1)
    l2 = 1 - 2 * (states & 1)
    return mask, l1, l2


@dataclass(frozen=True)
class DBReport:
    stationarity_residual: float   # ||L pi||_1
    db_max_residual: float         # max |L_ij pi_j - L_ji pi_i|

    def to_json_dict(self):
        return {"stationarity_residual": self.stationarity_residual,
                "db_max_residual": self.db_max_residual}


def check_db_stationarity(gen):
    """Residuals of Gibbs stationarity and of detailed balance."""
    pi = gen.stationary_weights
    res_stat = float(np.abs(gen.matrix @ pi).sum())
    flow = gen.matrix @ sp.diags(pi)
    asym = flow - flow.T
    res_db = float(np.max(np.abs(asym.data))) if asym.nnz else 0.0
    return DBReport(stationarity_residual=res_stat, db_max_residual=res_db)


def symmetrized(gen):
    """Gibbs square-root similarity transform of the generator.

    S = D^{-1/2} L D^{1/2} with D = diag(pi) is symmetric for reversible L
    and isospectral to it; sqrt(pi) spans its kernel.
    """
    sq = np.sqrt(gen.stationary_weights)
    s = sp.diags(1.0 / sq) @ gen.matrix @ sp.diags(sq)
    return ((s + s.T) * 0.5).tocsr()


@dataclass(frozen=True)
class SpectralReport:
    gap: float
    eigenvalues: np.ndarray
    method: str
    residuals: np.ndarray

    def to_json_dict(self):
        return {"gap": self.gap, "eigenvalues": self.eigenvalues.tolist(),
                "method": self.method, "residuals": self.residuals.tolist()}


def spectral_gap(gen, k=6, residual_tol=1e-8):
    """Lowest k eigenvalues of minus the symmetrized generator.

    Dense diagonalization below 4096 states; above that, a shifted Lanczos
    run on c*I + S (largest-eigenvalue mode, which converges for the
    extremal cluster).  Residual norms ||(-S)v - lam v|| are returned and
    must fall below `residual_tol`.
    """
    rep = check_db_stationarity(gen)
    if rep.db_max_residual > 1e-8 * max(gen.max_rate, 1.0):
        raise ParameterError("generator is not detailed-balanced; cannot symmetrize")
    s_mat = symmetrized(gen)
    neg = (-s_mat).tocsr()
    k = min(k, gen.dimension)
    if gen.dimension <= DENSE_LIMIT:
        dense = neg.toarray()
        evals, evecs = eigh(dense)
        evals_k = evals[:k]
        vecs = evecs[:, :k]
        method = "dense"
    else:
        diag = neg.diagonal()
        row_abs = np.asarray(abs(neg).sum(axis=1)).ravel()
        c = float(np.max(diag + (row_abs - np.abs(diag)))) + 1.0
        shifted = (sp.identity(gen.dimension, format="csr") * c) - neg
        try:
            vals, vecs = spla.eigsh(shifted, k=k, which="LA")
        except spla.ArpackNoConvergence as exc:
            raise NumericalFailure("Lanczos iteration did not converge",
                                   {"dimension": gen.dimension, "k": k,
                                    "arpack": str(exc)}) from exc
        order = np.argsort(c - vals)
        evals_k = (c - vals)[order]
        vecs = vecs[:, order]
        method = "iterative-sparse"
    residuals = np.array([
        float(np.linalg.norm(neg @ vecs[:, i] - evals_k[i] * vecs[:, i]))
        for i in range(k)])
    if np.any(residuals > residual_tol):
        raise NumericalFailure("eigenpair residuals exceed tolerance",
                               {"residuals": residuals.tolist(),
                                "tol": residual_tol, "method": method})
    gap = float(evals_k[1]) if k > 1 else float("nan")
    return SpectralReport(gap=gap, eigenvalues=np.asarray(evals_k),
                          method=method, residuals=residuals)


def gibbs_inner(gen, x, y):
    return float(np.sum(gen.stationary_weights * np.asarray(x) * np.asarray(y)))


def normalize_observable(gen, raw):
    """Center and normalize a classical observable in the Gibbs inner product."""
    v = np.asarray(raw, dtype=float)
    v = v - gibbs_inner(gen, np.ones_like(v), v)
    nrm = math.sqrt(gibbs_inner(gen, v, v))
    if nrm <= 0:
        raise ParameterError("observable vanishes after centering")
    return v / nrm


def random_zero_mean_observable(gen, rng):
    return normalize_observable(gen, rng.standard_normal(gen.dimension))


@dataclass(frozen=True)
class ConvexityReport:
    min_slack: float
    dirichlet: float       # -<R, L* R>_beta
    t_grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def convexity_bound_check(gen, observable, t_grid):
    """Verify <R, exp(t L*) R>_beta >= exp(t <R, L* R>_beta) on the grid.

    Requires a centered, normalized classical observable; evaluated by
    dense eigendecomposition of the symmetrized generator.
    """
    if gen.kind != CLASSICAL_SECTOR:
        raise ParameterError("convexity check implemented for classical sectors")
    if gen.dimension > DENSE_LIMIT:
        raise CapacityError("dense matrix exponential limited to 4096 states")
    r = np.asarray(observable, dtype=float)
    mean = gibbs_inner(gen, np.ones_like(r), r)
    nrm = math.sqrt(gibbs_inner(gen, r, r))
    if abs(mean) > 1e-8 * max(nrm, 1e-300):
        raise ParameterError("observable must have zero Gibbs mean")
    if abs(nrm - 1.0) > 1e-8:
        raise ParameterError("observable must be normalized: ||R||_beta = 1")
    t = np.asarray(t_grid, dtype=float)
    s_mat = symmetrized(gen).toarray()
    evals, evecs = eigh(s_mat)
    w = np.sqrt(gen.stationary_weights) * r
    comp = evecs.T @ w
    lhs = (comp[None, :] ** 2 * np.exp(np.outer(t, evals))).sum(axis=1)
    drift = float(np.sum(comp ** 2 * evals))
    rhs = np.exp(t * drift)
    slack = lhs - rhs
    return ConvexityReport(min_slack=float(np.min(slack)), dirichlet=-drift,
                           t_grid=t, lhs=lhs, rhs=rhs)


@dataclass(frozen=True)
class GapInequalityReport:
    lhs: float   # -<A, L* A>_beta
    rhs: float   # 2 max_w R(w) sum_a Q_a
    slack: float

    def to_json_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "slack": self.slack}


def gap_inequality_check(gen, observable):
    """Dirichlet form against the flip-difference bound.

    lhs = -<A, L* A>_beta from the generator matrix; rhs replaces each
    coupling commutator by the flip-difference quadratic form
    Q_a = sum_s pi_s (A(s) - A(flip_a s))**2, multiplied by twice the
    largest tabulated rate.  Classical observables automatically satisfy
    the commuting (zero-eigenspace) precondition.
    """
    if gen.kind != CLASSICAL_SECTOR:
        raise ParameterError("flip-difference form requires a classical sector")
    if gen.flip_targets is None:
        raise ParameterError("generator carries no flip structure")
    a = np.asarray(observable, dtype=float)
    if a.shape != (gen.dimension,):
        raise ParameterError("observable length does not match generator")
    pi = gen.stationary_weights
    lstar_a = gen.matrix.T @ a
    lhs = -float(np.sum(pi * a * lstar_a))
    diffs = a[gen.flip_targets] - a[None, :]
    q_sum = float(np.sum(pi[None, :] * diffs ** 2))
    rhs = 2.0 * gen.max_rate * q_sum
    return GapInequalityReport(lhs=lhs, rhs=rhs, slack=rhs - lhs)


@dataclass(frozen=True)
class GapBoundVerdict:
    condition_holds: bool
    min_quadratic_eigenvalue: float
    gap: float
    gap_bound_verified: bool


def k_squared_gap_bound(k_matrix, c, zero_tol=1e-10):
    """Check K*K - c*K >= 0 for symmetric PSD K; then gap(K) >= c.

    The gap is the smallest nonzero eigenvalue of K (eigenvalues below
    zero_tol times the largest count as zero).
    """
    k_mat = np.asarray(k_matrix, dtype=float)
    if k_mat.ndim != 2 or k_mat.shape[0] != k_mat.shape[1]:
        raise ParameterError("K must be square")
    scale = max(1.0, float(np.max(np.abs(k_mat))))
    if np.max(np.abs(k_mat - k_mat.T)) > 1e-10 * scale:
        raise ParameterError("K must be symmetric")
    evals = np.linalg.eigvalsh(k_mat)
    if evals[0] < -1e-10 * scale:
        raise ParameterError("K must be positive semidefinite")
    quad = evals ** 2 - c * evals
    min_quad = float(np.min(quad))
    holds = min_quad >= -1e-10
    nonzero = evals[evals > zero_tol * max(scale, float(evals[-1]))]
    gap = float(nonzero[0]) if nonzero.size else 0.0
    verified = bool(holds and (nonzero.size == 0 or gap >= c - 1e-10))
    return GapBoundVerdict(condition_holds=bool(holds),
                           min_quadratic_eigenvalue=min_quad,
                           gap=gap, gap_bound_verified=verified)


def exact_autocorrelation(gen, observable, t_grid):
    """Equilibrium autocorrelation <f exp(t L*) f>_beta of a classical
    observable, by dense spectral decomposition below the dense limit and
    Krylov propagation (expm_multiply) above it."""
    f = np.asarray(observable, dtype=float)
    if f.shape != (gen.dimension,):
        raise ParameterError("observable length does not match generator")
    t = np.asarray(t_grid, dtype=float)
    pi = gen.stationary_weights
    if gen.dimension <= DENSE_LIMIT:
        s_mat = symmetrized(gen).toarray()
        evals, evecs = eigh(s_mat)
        comp = evecs.T @ (np.sqrt(pi) * f)
        return (comp[None, :] ** 2 * np.exp(np.outer(t, evals))).sum(axis=1)
    lt = gen.matrix.T.tocsc()
    if t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ParameterError("sparse path needs a sorted grid starting at 0")
    out = spla.expm_multiply(lt, f, start=t[0], stop=t[-1], num=len(t),
                             endpoint=True)
    return np.array([float(np.sum(pi * f * out[i])) for i in range(len(t))])


def ising_spin_observable(n_sites, site):
    """Single-site spin as a vector over the 2**n configuration states."""
    states = np.arange(2 ** n_sites, dtype=np.int64)
    return (1 - 2 * ((states >> site) & 1)).astype(float)


def relaxation_check(gen, t=None, n_initial=20, seed=0):
    """Propagate random initial distributions and report the worst total
    variation distance from Gibbs at time t (default 50/gap)."""
    if gen.dimension > DENSE_LIMIT:
        raise CapacityError("relaxation check is dense-only")
    if t is None:
        t = 50.0 / spectral_gap(gen, k=2).gap
    s_mat = symmetrized(gen).toarray()
    evals, evecs = eigh(s_mat)
    sq = np.sqrt(gen.stationary_weights)
    rng = np.random.default_rng(seed)
    worst = 0.0
    prop = evecs @ np.diag(np.exp(evals * t)) @ evecs.T
    for _ in range(n_initial):
        p0 = rng.random(gen.dimension)
        p0 /= p0.sum()
        pt = sq * (prop @ (p0 / sq))
        tv = 0.5 * float(np.abs(pt - gen.stationary_weights).sum())
        worst = max(worst, tv)
    return worst, t


def export_generator(gen, csv_path, json_path):
    """Sparse triplet CSV plus a JSON sidecar for external cross-checks."""
    coo = gen.matrix.tocoo()
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r, c, v in zip(coo.row, coo.col, coo.data):
            writer.writerow([int(r), int(c), repr(float(v))])
    logz = float(np.log(np.sum(np.exp(-gen.beta * (gen.energies - gen.energies.min()))))
                 - gen.beta * gen.energies.min())
    sidecar = {"dimension": gen.dimension, "beta": gen.beta, "kind": gen.kind,
               "log_partition_function": logz, "meta": {
                   k: v for k, v in gen.meta.items() if isinstance(v, (int, float, str, bool))}}
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# dense quantum Davies generators: few-spin oracles


@dataclass(frozen=True)
class QuantumDavies:
    """Dense Heisenberg-picture Davies dissipator for a small system.

    lstar acts on column-stacked operators; gibbs is the stationary density
    matrix.  Built from the Hamiltonian's spectral decomposition and the
    jump components S_a(omega) of each coupling operator.
    """

    dim: int
    lstar: np.ndarray
    gibbs: np.ndarray
    bohr_frequencies: np.ndarray
    beta: float
    basis: np.ndarray   # columns: Hamiltonian eigenbasis used internally
    energies: np.ndarray


def _energy_clusters(energies, tol):
    order = np.argsort(energies)
    clusters = []
    for idx in order:
        if clusters and energies[idx] - energies[clusters[-1][0]] <= tol:
            clusters[-1].append(idx)
        else:
            clusters.append([idx])
    return clusters


def build_quantum_davies(hamiltonian, coupling_ops, model, coupling_sq=1.0,
                         degeneracy_tol=1e-9, max_dim=64):
    """Assemble the dense dissipator L* for H with the given couplings.

    Limited to Hilbert dimension max_dim (6 spins): the superoperator is
    dim**2 x dim**2.  Diagonal Hamiltonians keep the computational basis so
    classical sectors stay aligned for comparisons.
    """
    h_mat = np.asarray(hamiltonian, dtype=complex)
    dim = h_mat.shape[0]
    if dim > max_dim:
        raise CapacityError(f"quantum oracle limited to dimension {max_dim}")
    if np.max(np.abs(h_mat - np.diag(np.diag(h_mat)))) == 0.0:
        energies = np.real(np.diag(h_mat)).copy()
        basis = np.eye(dim, dtype=complex)
    else:
        energies, basis = np.linalg.eigh(h_mat)
    beta = model.beta

    clusters = _energy_clusters(energies, degeneracy_tol)
    projs = []
    for cl in clusters:
        p = np.zeros((dim, dim), dtype=complex)
        for idx in cl:
            p += np.outer(basis[:, idx], basis[:, idx].conj())
        projs.append((float(np.mean(energies[list(cl)])), p))

    eye = np.eye(dim, dtype=complex)
    lstar = np.zeros((dim * dim, dim * dim), dtype=complex)
    freqs = set()
    for s_op in coupling_ops:
        s_mat = np.asarray(s_op, dtype=complex)
        for e_a, p_a in projs:
            for e_b, p_b in projs:
                # S(omega) lowers the system energy by omega, so the
                # emission weight R(omega) lands on decay and the KMS factor
                # on absorption; this is the assignment that makes the Gibbs
                # state stationary
                omega = e_b - e_a
                s_w = p_a @ s_mat @ p_b
                if np.max(np.abs(s_w)) < 1e-14:
                    continue
                freqs.add(round(omega, 9))
                rate = coupling_sq * (
                    model.evaluate(omega) if omega >= 0
                    else model.evaluate(-omega) * math.exp(beta * omega))
                sd = s_w.conj().T
                sds = sd @ s_w
                term = (2.0 * np.kron(s_w.T, sd)
                        - np.kron(eye, sds) - np.kron(sds.T, eye))
                lstar += 0.5 * rate * term
    logw = -beta * (energies - energies.min())
    w = np.exp(logw)
    rho = basis @ np.diag(w / w.sum()) @ basis.conj().T
    return QuantumDavies(dim=dim, lstar=lstar, gibbs=rho,
                         bohr_frequencies=np.array(sorted(freqs)),
                         beta=beta, basis=basis, energies=energies)


def quantum_davies_checks(qd):
    """Stationarity, reversibility and negativity residuals for the oracle.

    Returns a dict with: stationarity (||L rho_beta|| via the
    Hilbert-Schmidt adjoint), db_residual (self-adjointness in the
    Gibbs-weighted inner product), max_symmetrized_eigenvalue (should be
    <= 0 up to roundoff).
    """
    dim = qd.dim
    # rotate the superoperator to the Hamiltonian eigenbasis, where the
    # Gibbs-weighted metric is diagonal: vec(V^dag X V) = kron(V^T, V^dag) vec(X)
    v = qd.basis
    w_rot = np.kron(v.T, v.conj().T)
    lstar = w_rot @ qd.lstar @ w_rot.conj().T
    lforward = lstar.conj().T
    logp = -qd.beta * (qd.energies - qd.energies.min())
    p = np.exp(logp)
    p /= p.sum()
    stat = float(np.linalg.norm(lforward @ np.diag(p).reshape(-1, order="F")))
    # column-stacked vec: entry (row, col) sits at row + dim*col and carries
    # weight p_col in <X, Y>_beta = sum p_col conj(X) Y
    weights = np.concatenate([p[j] * np.ones(dim) for j in range(dim)])
    g_half = np.sqrt(weights)
    k_mat = (g_half[:, None] * lstar) / g_half[None, :]
    scale = max(1.0, float(np.max(np.abs(k_mat))))
    herm_res = float(np.max(np.abs(k_mat - k_mat.conj().T)))
    sym = 0.5 * (k_mat + k_mat.conj().T)
    evals = np.linalg.eigvalsh(sym)
    return {"stationarity": stat,
            "db_residual": herm_res / scale,
            "max_symmetrized_eigenvalue": float(evals[-1])}


def quantum_classical_restriction(qd):
    """Matrix of L* restricted to diagonal observables, plus the largest
    leakage from the diagonal block (zero for commuting models)."""
    dim = qd.dim
    restricted = np.zeros((dim, dim))
    leak = 0.0
    for s in range(dim):
        basis_obs = np.zeros((dim, dim), dtype=complex)
        basis_obs[s, s] = 1.0
        out = (qd.lstar @ basis_obs.reshape(-1, order="F")).reshape(dim, dim, order="F")
        restricted[:, s] = np.real(np.diag(out))
        off = out - np.diag(np.diag(out))
        leak = max(leak, float(np.max(np.abs(off))))
    return restricted, leak
