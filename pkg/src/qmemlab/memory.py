"""Encoded-qubit observables: bare logicals, decoder-dressed versions, and
the lifetime scaling study.

A dressed observable follows the four-step operational rule: read all
single-site values, compute the bare value (product over the logical
support or a designated site), run a classical decoder on the same data to
produce a correction F = +-1, and report bare * F.  Two decoders are
provided: global majority vote (Ising analog) and minimum-weight matching
of syndrome defects on the torus (exact pairing for <= 14 defects via
bitmask dynamic programming, greedy nearest-pair with a suboptimality flag
beyond).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from qmemlab._errors import DecodingError, ParameterError
from qmemlab import dynamics as dyn
from qmemlab import lattice as lat

MAJORITY = "majority-vote"
MATCHING = "min-weight-matching"

EXACT_MATCHING_LIMIT = 14


def decode_majority(config, bare_site=0):
    """Majority-vote correction for the designated-site bare observable.

    F is arranged so that bare * F equals the global majority sign; a zero
    sum (even site count) breaks the tie toward +1.
    """
    cfg = np.asarray(config)
    total = int(cfg.sum())
    majority = 1 if total >= 0 else -1
    return majority * int(cfg[bare_site])


@dataclass(frozen=True)
class MatchingResult:
    pairs: tuple
    chain: tuple            # edges whose flip annihilates the syndrome
    f_correction: int
    optimal: bool


def _min_weight_pairing(coords, L):
    """Exact minimum-weight perfect pairing by bitmask DP."""
    k = len(coords)
    dist = [[lat.torus_distance(L, coords[i], coords[j]) for j in range(k)]
            for i in range(k)]

    @lru_cache(maxsize=None)
    def best(mask):
        if mask == 0:
            return 0.0, ()
        i = (mask & -mask).bit_length() - 1
        rest = mask ^ (1 << i)
        best_cost, best_pairs = math.inf, ()
        m = rest
        while m:
            j = (m & -m).bit_length() - 1
            m ^= 1 << j
            cost, pairs = best(rest ^ (1 << j))
            cost += dist[i][j]
            if cost < best_cost:
                best_cost, best_pairs = cost, pairs + ((i, j),)
        return best_cost, best_pairs

    cost, pairs = best((1 << k) - 1)
    best.cache_clear()
    return cost, pairs


def _greedy_pairing(coords, L):
    alive = list(range(len(coords)))
    pairs = []
    while alive:
        best_d, best_pair = math.inf, None
        for ii in range(len(alive)):
            for jj in range(ii + 1, len(alive)):
                d = lat.torus_distance(L, coords[alive[ii]], coords[alive[jj]])
                if d < best_d:
                    best_d, best_pair = d, (ii, jj)
        ii, jj = best_pair
        pairs.append((alive[ii], alive[jj]))
        del alive[jj], alive[ii]
    return pairs


def decode_matching(syndrome, lattice, sector=lat.PLAQUETTE, logical=None):
    """Pair up flagged cells with minimum total torus distance.

    Returns the correction chain (edges to flip), the correction sign
    F = (-1)**(chain crossings of the logical line), and whether the
    pairing is the exact optimum.  The default logical line is the
    canonical one whose value this sector's anyons corrupt.
    """
    flags = np.asarray(syndrome, dtype=bool)
    if flags.shape != (lattice.n_cells,):
        raise ParameterError("syndrome length does not match lattice")
    flagged = np.flatnonzero(flags)
    if len(flagged) % 2 != 0:
        raise DecodingError("odd number of syndrome defects cannot be paired")
    if logical is None:
        key = (lat.ZLIKE, lat.HORIZONTAL) if sector == lat.PLAQUETTE \
            else (lat.XLIKE, lat.HORIZONTAL)
        logical = lat.canonical_logicals(lattice)[key]
    if len(flagged) == 0:
        return MatchingResult(pairs=(), chain=(), f_correction=1, optimal=True)

    coords = [lattice.cell_coords(int(c)) for c in flagged]
    if len(flagged) <= EXACT_MATCHING_LIMIT:
        _, pairs = _min_weight_pairing(tuple(coords), lattice.L)
        optimal = True
    else:
        pairs = _greedy_pairing(coords, lattice.L)
        optimal = False

    chain = []
    for i, j in pairs:
        chain.extend(lat.cell_path_edges(lattice, sector,
                                         int(flagged[i]), int(flagged[j])))
    support = set(logical.support)
    crossings = sum(1 for e in chain if e in support)
    return MatchingResult(pairs=tuple((int(flagged[i]), int(flagged[j]))
                                      for i, j in pairs),
                          chain=tuple(chain),
                          f_correction=-1 if crossings % 2 else 1,
                          optimal=optimal)


@dataclass(frozen=True)
class DressedObservable:
    """Bare observable plus decoder choice.

    For the toric sectors `bare` is a LogicalOperator; for the Ising analog
    it is a designated site index and the decoder is the majority vote.
    """

    bare: object
    decoder: str
    sector: str = lat.PLAQUETTE


def measure_dressed(config, obs, lattice=None):
    """Four-step dressed measurement: read sites, bare value, decoder
    correction, product."""
    cfg = np.asarray(config)
    if obs.decoder == MAJORITY:
        bare = int(cfg[int(obs.bare)])
        f = decode_majority(cfg, bare_site=int(obs.bare))
        return bare * f
    if obs.decoder == MATCHING:
        if lattice is None:
            raise ParameterError("matching decoder needs the lattice")
        bare = lat.bare_logical_value(cfg, obs.bare)
        synd = lat.syndrome(lattice, cfg, obs.sector)
        result = decode_matching(synd, lattice, obs.sector, obs.bare)
        return bare * result.f_correction
    raise ParameterError(f"unknown decoder {obs.decoder!r}")


class _MatchingSeriesEvaluator:
    """Vectorized dressed-series evaluation with syndrome-pattern caching."""

    def __init__(self, lattice, obs):
        self.lattice = lattice
        self.obs = obs
        self.cells = lattice.cells(obs.sector)
        self.support = np.asarray(obs.bare.support_array)
        self._cache = {}

    def __call__(self, configs):
        cfg = np.asarray(configs)
        bare = np.prod(cfg[:, self.support], axis=1)
        flags = np.prod(cfg[:, self.cells], axis=2) == -1
        out = np.empty(len(cfg), dtype=np.int8)
        for i in range(len(cfg)):
            key = flags[i].tobytes()
            f = self._cache.get(key)
            if f is None:
                f = decode_matching(flags[i], self.lattice, self.obs.sector,
                                    self.obs.bare).f_correction
                self._cache[key] = f
            out[i] = f
        return bare * out


def observable_series_fn(obs, lattice=None):
    """

    Returns a callable mapping (n_samples, n_sites) config blocks to the
    per-sample observable series.
    """
    if obs.decoder == MAJORITY:

        def majority_series(configs):
            s = np.asarray(configs).sum(axis=1)
            return np.where(s >= 0, 1, -1).astype(np.int8)

        return majority_series
    if obs.decoder == MATCHING:
        if lattice is None:
            raise ParameterError("matching decoder needs the lattice")
        return _MatchingSeriesEvaluator(lattice, obs)
    raise ParameterError(f"unknown decoder {obs.decoder!r}")


def bare_series_fn(bare, lattice=None):
    if isinstance(bare, lat.LogicalOperator):
        support = bare.support_array

        def logical_series(configs):
            return np.prod(np.asarray(configs)[:, support], axis=1).astype(np.int8)

        return logical_series
    site = int(bare)

    def site_series(configs):
        return np.asarray(configs)[:, site]

    return site_series


@dataclass(frozen=True)
class EncodedQubit:
    x_logical: lat.LogicalOperator
    z_logical: lat.LogicalOperator


@dataclass(frozen=True)
class M1Report:
    x_involution: bool
    z_involution: bool
    intersection_parity: int
    anticommute: bool
    is_qubit_pair: bool


def m1_check(qubit):
    """Structural qubit-algebra check: both loops are +-1-valued products
    (involutions), and the pair anticommutes iff the supports share an odd
    number of edges."""
    x_op, z_op = qubit.x_logical, qubit.z_logical
    inter = len(set(x_op.support) & set(z_op.support))
    anticommute = inter % 2 == 1
    valid_sectors = x_op.sector == lat.XLIKE and z_op.sector == lat.ZLIKE
    return M1Report(x_involution=True, z_involution=True,
                    intersection_parity=inter % 2,
                    anticommute=anticommute,
                    is_qubit_pair=bool(anticommute and valid_sectors))


def kitaev_logical_vectors(gen, lattice):
    """Bare and matching-dressed logical observables as vectors over the
    reduced Kitaev sector states, for exact-generator comparisons."""
    from qmemlab import davies
    mask, l1, _ = davies.kitaev_reduced_state_maps(gen)
    n_c = lattice.n_cells
    uniq, inv = np.unique(mask, return_inverse=True)
    f_vals = np.empty(len(uniq))
    for i, mk in enumerate(uniq):
        flags = np.array([(int(mk) >> c) & 1 for c in range(n_c)], dtype=bool)
        f_vals[i] = decode_matching(flags, lattice, lat.PLAQUETTE).f_correction
    bare = l1.astype(float)
    return bare, bare * f_vals[inv]


# ---------------------------------------------------------------------------
# lifetime study

ISING_TORUS = "ising-torus"
KITAEV = "kitaev"

BARE = "bare"
DRESSED = "dressed"


@dataclass(frozen=True)
class StudyCell:
    """One (model, size, beta, observable) cell of a lifetime study."""

    model: str
    size: int
    beta: float
    observable: str           # bare | dressed
    n_trajectories: int
    t_max: float
    sample_interval: float
    seed: int
    fit_lo: float = 0.15      # fit window as fractions of C(0)
    fit_hi: float = 0.9
    mode: str = dyn.EQUILIBRIUM_ENSEMBLE
    energy_scale: float = 1.0
    burnin_sweeps: float | None = None

    def decoder_name(self):
        if self.observable == BARE:
            return "none"
        return MAJORITY if self.model == ISING_TORUS else MATCHING


@dataclass(frozen=True)
class LifetimeRow:
    model: str
    size: int
    beta: float
    observable: str
    decoder: str
    gamma: float
    stderr: float
    mode: str
    non_exponential: bool
    window: tuple

    def to_json_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


@dataclass
class LifetimeReport:
    rows: list = field(default_factory=list)

    def to_json_dict(self):
        return {"rows": [r.to_json_dict() for r in self.rows]}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "N_or_L", "beta", "observable",
                             "decoder", "gamma", "stderr", "mode"])
            for r in self.rows:
                writer.writerow([r.model, r.size, repr(r.beta), r.observable,
                                 r.decoder, repr(r.gamma), repr(r.stderr),
                                 r.mode])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _cell_setup(cell, rates_for_beta):
    """Flip model, rate table, initial-config sampler and observable
    evaluator for one study cell."""
    if cell.model == ISING_TORUS:
        lattice = lat.build_ising_torus(cell.size)
        model = dyn.ising_flip_model(lattice, cell.energy_scale)
        rates = rates_for_beta(cell.beta, model.bohr_frequencies())
        sweeps = cell.burnin_sweeps
        if sweeps is None:
            sweeps = 100.0 * cell.size ** 2

        def sampler(rng):
            if cell.mode == dyn.RELAXATION_FROM_ORDERED:
                return np.ones(lattice.n_sites, dtype=np.int8)
            return dyn.sample_ising_torus_burnin(
                lattice, cell.beta,
                lambda b: rates_for_beta(b, model.bohr_frequencies()),
                rng, sweeps_per_site=sweeps)

        if cell.observable == DRESSED:
            series = observable_series_fn(DressedObservable(bare=0, decoder=MAJORITY))
        else:
            series = bare_series_fn(0)
        return model, rates, sampler, series

    if cell.model == KITAEV:
        lattice = lat.build_torus(cell.size)
        model = dyn.kitaev_flip_model(lattice, lat.PLAQUETTE, cell.energy_scale)
        rates = rates_for_beta(cell.beta, model.bohr_frequencies())
        logical = lat.canonical_logicals(lattice)[(lat.ZLIKE, lat.HORIZONTAL)]

        def sampler(rng):
            if cell.mode == dyn.RELAXATION_FROM_ORDERED:
                return np.ones(lattice.n_edges, dtype=np.int8)
            return dyn.sample_kitaev_sector_equilibrium(
                lattice, cell.beta, rng, lat.PLAQUETTE, cell.energy_scale)

        if cell.observable == DRESSED:
            series = observable_series_fn(
                DressedObservable(bare=logical, decoder=MATCHING,
                                  sector=lat.PLAQUETTE), lattice)
        else:
            series = bare_series_fn(logical)
        return model, rates, sampler, series

    raise ParameterError(f"unknown study model {cell.model!r}")


def run_study_cell(cell, rates_for_beta):
    """Run the trajectories of one cell and fit its decay rate.

    Returns (LifetimeRow, AutocorrelationEstimate).  The fit window is
    chosen from the measured autocorrelation as the lag range where
    C(t)/C(0) lies inside [fit_lo, fit_hi].
    """
    model, rates, sampler, series = _cell_setup(cell, rates_for_beta)
    rng = np.random.default_rng(cell.seed)
    trajectories = []
    for k in range(cell.n_trajectories):
        ini = sampler(rng)
        cfg = dyn.KmcConfig(model=model, rates=rates, beta=cell.beta,
                            t_max=cell.t_max,
                            sample_interval=cell.sample_interval,
                            seed=cell.seed, initial=ini)
        trajectories.append(dyn.run_trajectory(cfg, stream_index=k))
    est = dyn.estimate_autocorrelation(trajectories, series, cell.mode)

    c0 = est.values[0]
    if c0 <= 0:
        raise ParameterError("autocorrelation at lag 0 is not positive")
    rel = est.values / c0
    # contiguous run: from the first lag entering the band to the first lag
    # falling below it, so late-time noise cannot stretch the window
    start = None
    end = len(rel)
    for i in range(1, len(rel)):
        if start is None and rel[i] <= cell.fit_hi:
            start = i
        elif start is not None and rel[i] < cell.fit_lo:
            end = i
            break
    if start is None or end - start < 3:
        raise ParameterError(
            "fewer than 3 autocorrelation points inside the fit band; "
            "adjust t_max/sample_interval")
    fit = dyn.fit_decay_rate(
        est, (float(est.lags[start]), float(est.lags[end - 1])))
    row = LifetimeRow(model=cell.model, size=cell.size, beta=cell.beta,
                      observable=cell.observable,
                      decoder=cell.decoder_name(), gamma=fit.gamma,
                      stderr=fit.stderr, mode=cell.mode,
                      non_exponential=fit.non_exponential,
                      window=fit.window)
    return row, est


def lifetime_study(cells, rates_for_beta):
    """Run every cell and assemble the LifetimeReport (associative merge)."""
    report = LifetimeReport()
    estimates = {}
    for cell in cells:
        row, est = run_study_cell(cell, rates_for_beta)
        report.rows.append(row)
        estimates[(cell.model, cell.size, cell.beta, cell.observable)] = est
    return report, estimates
