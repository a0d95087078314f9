"""Rejection-free kinetic Monte Carlo for classical stabilizer sectors.

The simulated models share one structure: spins live on sites, the energy
is -energy_scale * sum over interaction terms of the spin product inside
each term (Ising bonds, toric-code cells), and an elementary event flips a
single spin with rate table(-dE).  Sites are bucketed by their local
energy-change class, the event class is drawn with probability
proportional to (bucket size) * (class rate), and the member uniformly:
O(1) expected cost per event and exactly the Davies single-flip dynamics.

Randomness comes from a xoshiro256++ stream per trajectory.  The stream
for trajectory k is seeded from SplitMix64 initialized with
master_seed XOR (k+1)*0x9E3779B97F4A7C15, so trajectories are reproducible
and independent of scheduling order; event selection uses only integer
state and u64-derived doubles, with no float-accumulation order
dependence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, uint64

from qmemlab._errors import InsufficientDataError, ParameterError
from qmemlab import lattice as lat

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def splitmix64_next(state):
    """One SplitMix64 step; returns (new_state, output)."""
    with np.errstate(over="ignore"):
        state = np.uint64(state) + _SPLITMIX_GAMMA
        z = np.uint64(state)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return state, z


def derive_stream(master_seed, index):
    """xoshiro256++ state for trajectory `index` of a master seed."""
    with np.errstate(over="ignore"):
        s = np.uint64(master_seed) ^ (np.uint64(index + 1) * _SPLITMIX_GAMMA)
        out = np.empty(4, dtype=np.uint64)
        for i in range(4):
            s, out[i] = splitmix64_next(s)
    if not out.any():
        out[0] = np.uint64(1)  # xoshiro state must not be all zero
    return out


@njit(cache=True, inline="always")
def _rotl(x, k):
    return uint64((x << uint64(k)) | (x >> uint64(64 - k)))


@njit(cache=True, inline="always")
def _xoshiro_next(state):
    result = uint64(_rotl(state[0] + state[3], 23) + state[0])
    t = uint64(state[1] << uint64(17))
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(cache=True, inline="always")
def _next_unit(state):
    # (0, 1]: 53-bit mantissa, complemented so log() is safe
    return 1.0 - (_xoshiro_next(state) >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _kmc_core(term_sites, site_terms, spins, class_rates, t_max,
              sample_interval, n_samples, rng_state, configs_out):
    """Event loop.  Classes index the count of +1 term products around a
    site: flipping a site with local term sum k costs dE = 2*scale*k, and
    class_rates[c] with c = (k + terms_per_site)/2 already encodes the
    table rate at -dE."""
    n_sites = site_terms.shape[0]
    terms_per_site = site_terms.shape[1]
    n_classes = terms_per_site + 1

    term_val = np.empty(term_sites.shape[0], dtype=np.int8)
    for t in range(term_sites.shape[0]):
        p = 1
        for j in range(term_sites.shape[1]):
            p *= spins[term_sites[t, j]]
        term_val[t] = p

    class_of = np.empty(n_sites, dtype=np.int64)
    bucket = np.empty((n_classes, n_sites), dtype=np.int64)
    counts = np.zeros(n_classes, dtype=np.int64)
    pos = np.empty(n_sites, dtype=np.int64)
    for s in range(n_sites):
        k = 0
        for a in range(terms_per_site):
            k += term_val[site_terms[s, a]]
        c = (k + terms_per_site) >> 1
        class_of[s] = c
        bucket[c, counts[c]] = s
        pos[s] = counts[c]
        counts[c] += 1

    touched = np.empty(1 + terms_per_site * term_sites.shape[1], dtype=np.int64)

    t_now = 0.0
    isample = 0
    n_events = 0
    while isample < n_samples:
        total = 0.0
        for c in range(n_classes):
            total += counts[c] * class_rates[c]
        if total <= 0.0:
            while isample < n_samples:
                configs_out[isample] = spins
                isample += 1
            break
        dt = -math.log(_next_unit(rng_state)) / total
        t_next = t_now + dt
        while isample < n_samples and isample * sample_interval < t_next:
            configs_out[isample] = spins
            isample += 1
        t_now = t_next
        if isample >= n_samples:
            break

        u = _next_unit(rng_state) * total
        acc = 0.0
        chosen = -1
        last_nonempty = -1
        for c in range(n_classes):
            if counts[c] > 0 and class_rates[c] > 0.0:
                last_nonempty = c
                acc += counts[c] * class_rates[c]
                if u <= acc:
                    chosen = c
                    break
        if chosen < 0:
            # float rounding left u marginally above the accumulated total
            chosen = last_nonempty
        m = int(_next_unit(rng_state) * counts[chosen])
        if m >= counts[chosen]:
            m = counts[chosen] - 1
        site = bucket[chosen, m]

        spins[site] = -spins[site]
        n_touch = 0
        touched[n_touch] = site
        n_touch += 1
        for a in range(terms_per_site):
            t_idx = site_terms[site, a]
            term_val[t_idx] = -term_val[t_idx]
            for j in range(term_sites.shape[1]):
                s2 = term_sites[t_idx, j]
                dup = False
                for q in range(n_touch):
                    if touched[q] == s2:
                        dup = True
                        break
                if not dup:
                    touched[n_touch] = s2
                    n_touch += 1
        for q in range(n_touch):
            s2 = touched[q]
            k = 0
            for a in range(terms_per_site):
                k += term_val[site_terms[s2, a]]
            c_new = (k + terms_per_site) >> 1
            c_old = class_of[s2]
            if c_new != c_old:
                last = bucket[c_old, counts[c_old] - 1]
                bucket[c_old, pos[s2]] = last
                pos[last] = pos[s2]
                counts[c_old] -= 1
                bucket[c_new, counts[c_new]] = s2
                pos[s2] = counts[c_new]
                counts[c_new] += 1
                class_of[s2] = c_new
        n_events += 1
    return n_events, t_now


@dataclass(frozen=True)
class FlipModel:
    """Interaction structure driving the single-flip dynamics."""

    name: str
    n_sites: int
    term_sites: np.ndarray   # (n_terms, term_size)
    site_terms: np.ndarray   # (n_sites, terms_per_site)
    energy_scale: float = 1.0

    @property
    def terms_per_site(self):
        return self.site_terms.shape[1]

    def bohr_frequencies(self):
        k = self.terms_per_site
        return tuple(sorted(2.0 * self.energy_scale * j
                            for j in range(-k, k + 1, 2)))

    def energy(self, config):
        cfg = np.asarray(config)
        return -self.energy_scale * float(
            np.sum(np.prod(cfg[self.term_sites], axis=1)))


def _site_terms_from(term_sites, n_sites):
    lists = [[] for _ in range(n_sites)]
    for t, sites in enumerate(term_sites):
        for s in sites:
            lists[int(s)].append(t)
    width = {len(l) for l in lists}
    if len(width) != 1:
        raise ParameterError("sites participate in unequal numbers of terms")
    return np.array(lists, dtype=np.int32)


def ising_flip_model(lattice, energy_scale=1.0):
    term_sites = lattice.bonds.astype(np.int32)
    return FlipModel(name=f"ising-{lattice.dimension}d-{lattice.size}",
                     n_sites=lattice.n_sites, term_sites=term_sites,
                     site_terms=_site_terms_from(term_sites, lattice.n_sites),
                     energy_scale=energy_scale)


def kitaev_flip_model(lattice, sector=lat.PLAQUETTE, energy_scale=1.0):
    term_sites = lattice.cells(sector).astype(np.int32)
    return FlipModel(name=f"kitaev-{sector}-L{lattice.L}",
                     n_sites=lattice.n_edges, term_sites=term_sites,
                     site_terms=_site_terms_from(term_sites, lattice.n_edges),
                     energy_scale=energy_scale)


def class_rates_for(model, rates):
    """Flip rate per local class: class c has term sum k = 2c - terms_per_site
    and energy change dE = 2*scale*k, so it draws the table rate at -dE."""
    k_vals = [2 * c - model.terms_per_site
              for c in range(model.terms_per_site + 1)]
    return np.array([rates.rate(-2.0 * model.energy_scale * k) for k in k_vals])


@dataclass(frozen=True)
class KmcConfig:
    """One trajectory specification: model, rates, time box and seed."""

    model: FlipModel
    rates: object              # DaviesRateTable
    beta: float
    t_max: float
    sample_interval: float
    seed: int
    initial: np.ndarray

    def __post_init__(self):
        if self.t_max <= 0:
            raise ParameterError("t_max must be > 0")
        if self.sample_interval <= 0:
            raise ParameterError("sample_interval must be > 0")
        if abs(self.rates.beta - self.beta) > 1e-12:
            raise ParameterError("rate table beta does not match config beta")
        ini = np.asarray(self.initial, dtype=np.int8)
        if ini.shape != (self.model.n_sites,):
            raise ParameterError("initial config length does not match model")
        if not np.all(np.abs(ini) == 1):
            raise ParameterError("initial config must be +-1 valued")
        object.__setattr__(self, "initial", ini)


@dataclass(frozen=True)
class Trajectory:
    """Sampled configurations of one run; times are k*sample_interval."""

    seed: int
    times: np.ndarray
    configs: np.ndarray        # (n_samples, n_sites) int8
    final_config: np.ndarray
    n_events: int

    def observable_series(self, values_fn):
        return values_fn(self.configs)


def run_trajectory(config, stream_index=0):
    """Simulate one trajectory; deterministic in (seed, stream_index)."""
    n_samples = int(math.floor(config.t_max / config.sample_interval)) + 1
    configs = np.empty((n_samples, config.model.n_sites), dtype=np.int8)
    spins = config.initial.copy()
    state = derive_stream(config.seed, stream_index)
    rates_by_class = class_rates_for(config.model, config.rates)
    n_events, _ = _kmc_core(config.model.term_sites.astype(np.int32),
                            config.model.site_terms.astype(np.int32),
                            spins, rates_by_class, config.t_max,
                            config.sample_interval, n_samples, state, configs)
    times = np.arange(n_samples) * config.sample_interval
    return Trajectory(seed=config.seed, times=times, configs=configs,
                      final_config=spins.copy(), n_events=int(n_events))


def run_trajectories(config, n_trajectories, initial_for=None, threads=1):
    """Run independent trajectories with streams derived from
    (config.seed, index); results are index-ordered, so the output is
    identical for any thread count.

    initial_for(k) may supply a per-trajectory start; default reuses
    config.initial.
    """
    def one(k):
        if initial_for is None:
            cfg = config
        else:
            cfg = KmcConfig(model=config.model, rates=config.rates,
                            beta=config.beta, t_max=config.t_max,
                            sample_interval=config.sample_interval,
                            seed=config.seed, initial=initial_for(k))
        return run_trajectory(cfg, stream_index=k)

    if threads <= 1:
        return [one(k) for k in range(n_trajectories)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_trajectories)))


# binary record layout per sample: time as little-endian float64, then one
# int8 sign per observable
RECORD_TIME = np.dtype("<f8")


def write_trajectory_records(path, trajectory, series_map):
    """Append fixed-width records (t: <f8, observables: int8 each) for the
    named observable series; returns the ordered observable names."""
    names = sorted(series_map)
    columns = [np.asarray(series_map[name], dtype=np.int8) for name in names]
    n = len(trajectory.times)
    for col in columns:
        if col.shape != (n,):
            raise ParameterError("series length does not match sample times")
    rec = np.dtype([("t", "<f8")] + [(name, "i1") for name in names])
    out = np.empty(n, dtype=rec)
    out["t"] = trajectory.times
    for name, col in zip(names, columns):
        out[name] = col
    with open(path, "ab") as fh:
        fh.write(out.tobytes())
    return names


def read_trajectory_records(path, observable_names):
    """Read back fixed-width records written by write_trajectory_records."""
    rec = np.dtype([("t", "<f8")] + [(n, "i1") for n in observable_names])
    raw = np.fromfile(path, dtype=rec)
    return raw["t"].copy(), {n: raw[n].copy() for n in observable_names}


def write_trajectory_csv(path, trajectory, series_map):
    """Plain-text dump for small runs."""
    import csv as _csv
    names = sorted(series_map)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t"] + names)
        for i, t in enumerate(trajectory.times):
            writer.writerow([repr(float(t))]
                            + [int(series_map[n][i]) for n in names])


# ---------------------------------------------------------------------------
# equilibrium starts


def sample_ising_ring_equilibrium(n, beta, rng):
    """Exact Gibbs sample of the 1D Ising ring by transfer-matrix
    conditionals."""
    t_mat = np.array([[math.exp(beta), math.exp(-beta)],
                      [math.exp(-beta), math.exp(beta)]])
    powers = [np.eye(2)]
    for _ in range(n):
        powers.append(powers[-1] @ t_mat)
    spins = np.empty(n, dtype=np.int8)
    p_first = np.diag(powers[n]) / np.trace(powers[n])
    s0 = 0 if rng.random() < p_first[0] else 1
    spins[0] = 1 - 2 * s0
    prev = s0
    for k in range(1, n):
        w = t_mat[prev, :] * powers[n - k][:, s0]
        p_up = w[0] / w.sum()
        cur = 0 if rng.random() < p_up else 1
        spins[k] = 1 - 2 * cur
        prev = cur
    return spins


def sample_kitaev_sector_equilibrium(lattice, beta, rng, sector=lat.PLAQUETTE,
                                     energy_scale=1.0):
    """Exact Gibbs sample of one stabilizer sector.

    Cell excitations are independent Bernoulli with the two-level Gibbs
    weight, conditioned on even total parity (rejection); a representative
    config is built by pairing excited cells with connecting paths, then
    gauge and both logical windings are randomized uniformly.
    """
    n_c = lattice.n_cells
    p_exc = 1.0 / (1.0 + math.exp(2.0 * beta * energy_scale))
    while True:
        flags = rng.random(n_c) < p_exc
        if int(flags.sum()) % 2 == 0:
            break
    cfg = np.ones(lattice.n_edges, dtype=np.int8)
    excited = np.flatnonzero(flags)
    for a, b in zip(excited[0::2], excited[1::2]):
        cfg = lat.apply_flips(cfg, lat.cell_path_edges(lattice, sector,
                                                       int(a), int(b)))
    gauge_cells = lattice.stars if sector == lat.PLAQUETTE else lattice.plaquettes
    picks = np.flatnonzero(rng.random(lattice.n_cells) < 0.5)
    for c in picks:
        cfg = lat.apply_flips(cfg, gauge_cells[c])
    logs = lat.canonical_logicals(lattice)
    if sector == lat.PLAQUETTE:
        loops = (logs[(lat.XLIKE, lat.HORIZONTAL)], logs[(lat.XLIKE, lat.VERTICAL)])
    else:
        loops = (logs[(lat.ZLIKE, lat.HORIZONTAL)], logs[(lat.ZLIKE, lat.VERTICAL)])
    for loop in loops:
        if rng.random() < 0.5:
            cfg = lat.apply_flips(cfg, loop.support)
    return cfg


def sample_ising_torus_burnin(lattice, beta, rates_builder, rng,
                              sweeps_per_site=100.0, n_stages=8,
                              symmetrize=True):
    """Annealed burn-in start for the 2D Ising torus.

    Runs KMC stages from beta ~ 0 up to the target, `sweeps_per_site`
    expected flips per site in total; at the end the global spin sign is
    randomized, which restores the +-m symmetry of the finite-volume Gibbs
    state.  This is an equilibrium proxy, not an exact sampler; callers
    must record it as such.
    """
    model = ising_flip_model(lattice)
    cfg = np.where(rng.random(lattice.n_sites) < 0.5, 1, -1).astype(np.int8)
    betas = np.linspace(beta / n_stages, beta, n_stages)
    for stage_beta in betas:
        rates = rates_builder(stage_beta)
        crates = class_rates_for(model, rates)
        mean_rate = float(np.mean(crates))
        t_stage = (sweeps_per_site / n_stages) / max(mean_rate, 1e-12)
        kc = KmcConfig(model=model, rates=rates, beta=stage_beta,
                       t_max=t_stage, sample_interval=t_stage,
                       seed=int(rng.integers(2 ** 63)), initial=cfg)
        cfg = run_trajectory(kc).final_config
    if symmetrize and rng.random() < 0.5:
        cfg = -cfg
    return cfg


# ---------------------------------------------------------------------------
# estimators

EQUILIBRIUM_ENSEMBLE = "equilibrium-ensemble"
RELAXATION_FROM_ORDERED = "relaxation-from-ordered"


@dataclass(frozen=True)
class AutocorrelationEstimate:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_trajectories: int
    mode: str
    origin_spacing: float = 0.0

    def to_json_dict(self):
        return {"lags": self.lags.tolist(), "values": self.values.tolist(),
                "stderr": self.stderr.tolist(),
                "n_trajectories": self.n_trajectories, "mode": self.mode,
                "origin_spacing": self.origin_spacing}


def _pilot_rate(times, series_list, n_lags=24):
    """Rough decay rate from the earliest lags, for origin spacing."""
    lags = np.arange(1, min(n_lags, len(times) - 1))
    c0 = np.mean([np.mean(s * s) for s in series_list])
    vals = []
    for lag in lags:
        acc = [np.mean(s[:-lag] * s[lag:]) for s in series_list]
        vals.append(np.mean(acc))
    vals = np.array(vals)
    good = vals > 0.05 * c0
    if not np.any(good):
        return 1.0 / (times[1] - times[0])
    idx = np.flatnonzero(good)[-1]
    c_end = vals[idx] / c0
    t_end = lags[idx] * (times[1] - times[0])
    if c_end >= 1.0 or t_end <= 0:
        return 1.0 / times[-1]
    return -math.log(c_end) / t_end


def estimate_autocorrelation(trajectories, observable_values, mode,
                             lag_grid=None, origin_spacing="auto"):
    """Autocorrelation of one observable across trajectories.

    observable_values maps a (n_samples, n_sites) config block to a 1-d
    series.  In equilibrium mode, <x(t0) x(t0+lag)> is averaged over time
    origins (spaced by >= 1/gamma_rough unless overridden) and
    trajectories; standard errors come from the spread across
    trajectories.  In relaxation mode the plain mean <x(t)> from the
    ordered start is returned and flagged by the mode field.
    """
    if len(trajectories) < 20:
        raise InsufficientDataError(
            f"need >= 20 trajectories, got {len(trajectories)}")
    times = trajectories[0].times
    dt = float(times[1] - times[0])
    series = [np.asarray(observable_values(tr.configs), dtype=float)
              for tr in trajectories]
    n_t = len(times)

    if mode == RELAXATION_FROM_ORDERED:
        stack = np.stack(series)
        if lag_grid is None:
            lag_idx = np.arange(n_t)
        else:
            lag_idx = np.unique(np.clip(np.round(np.asarray(lag_grid) / dt
                                                 ).astype(int), 0, n_t - 1))
        vals = stack[:, lag_idx]
        return AutocorrelationEstimate(
            lags=times[lag_idx], values=vals.mean(axis=0),
            stderr=vals.std(axis=0, ddof=1) / math.sqrt(len(series)),
            n_trajectories=len(series), mode=mode)

    if mode != EQUILIBRIUM_ENSEMBLE:
        raise ParameterError(f"unknown autocorrelation mode {mode!r}")

    if lag_grid is None:
        lag_idx = np.unique(np.linspace(0, n_t // 2, 200).astype(int))
    else:
        lag_idx = np.unique(np.clip(np.round(np.asarray(lag_grid) / dt
                                             ).astype(int), 0, n_t - 1))
    if origin_spacing == "auto":
        gamma_rough = _pilot_rate(times, series[:max(4, len(series) // 5)])
        spacing_idx = max(1, int(round((1.0 / gamma_rough) / dt)))
    else:
        spacing_idx = max(1, int(round(float(origin_spacing) / dt)))
    # keep a floor of ~20 origins per trajectory even when the pilot decay
    # time exceeds the box; origin correlation is absorbed by the
    # across-trajectory standard error
    max_lag = int(lag_idx[-1])
    spacing_idx = min(spacing_idx, max(1, (n_t - max_lag) // 20))

    per_traj = np.empty((len(series), len(lag_idx)))
    for i, s in enumerate(series):
        for j, lag in enumerate(lag_idx):
            origins = np.arange(0, n_t - lag, spacing_idx)
            per_traj[i, j] = float(np.mean(s[origins] * s[origins + lag]))
    vals = per_traj.mean(axis=0)
    err = per_traj.std(axis=0, ddof=1) / math.sqrt(len(series))
    return AutocorrelationEstimate(lags=times[lag_idx], values=vals,
                                   stderr=err, n_trajectories=len(series),
                                   mode=mode,
                                   origin_spacing=spacing_idx * dt)


@dataclass(frozen=True)
class DecayFit:
    gamma: float
    stderr: float
    non_exponential: bool
    reduced_chi2: float
    window: tuple

    def to_json_dict(self):
        return {"gamma": self.gamma, "stderr": self.stderr,
                "non_exponential": self.non_exponential,
                "reduced_chi2": self.reduced_chi2,
                "window": list(self.window)}


def fit_decay_rate(est, window):
    """Weighted least squares of log C(t) on [t_lo, t_hi].

    Weights follow from var(log C) = (stderr/C)**2; zero-stderr estimates
    (noiseless synthetic input) fall back to uniform weights.  The
    non_exponential flag fires on a large reduced chi-square or when a
    quadratic term improves the residual decisively.
    """
    t_lo, t_hi = window
    sel = (est.lags >= t_lo) & (est.lags <= t_hi)
    t = np.asarray(est.lags, dtype=float)[sel]
    c = np.asarray(est.values, dtype=float)[sel]
    se = np.asarray(est.stderr, dtype=float)[sel]
    if t.size < 3:
        raise ParameterError("fewer than 3 autocorrelation points in window")
    if np.any(c <= 0):
        raise ParameterError("nonpositive autocorrelation values in fit window")
    y = np.log(c)
    sigma = np.where(se > 0, se / c, 0.0)
    if np.all(sigma == 0):
        w = np.ones_like(y)
        have_errors = False
    else:
        sigma = np.where(sigma > 0, sigma, np.min(sigma[sigma > 0]))
        w = 1.0 / sigma ** 2
        have_errors = True

    design = np.vstack([np.ones_like(t), t]).T
    wd = design * w[:, None]
    cov = np.linalg.inv(design.T @ wd)
    coef = cov @ (wd.T @ y)
    resid = y - design @ coef
    gamma = -coef[1]
    gamma_err = math.sqrt(max(cov[1, 1], 0.0))

    dof = max(len(t) - 2, 1)
    if have_errors:
        chi2 = float(np.sum(w * resid ** 2)) / dof
    else:
        chi2 = 0.0
    design_q = np.vstack([np.ones_like(t), t, t ** 2]).T
    coef_q, *_ = np.linalg.lstsq(design_q * np.sqrt(w)[:, None],
                                 y * np.sqrt(w), rcond=None)
    resid_q = y - design_q @ coef_q
    sse_lin = float(np.sum(w * resid ** 2))
    sse_q = float(np.sum(w * resid_q ** 2))
    curved = sse_lin > 1e-20 and (sse_q < 0.5 * sse_lin)
    non_exp = bool((have_errors and chi2 > 4.0) or curved)
    if not have_errors:
        rms = math.sqrt(sse_lin / len(t))
        non_exp = bool(curved and rms > 1e-8)
    return DecayFit(gamma=float(gamma), stderr=float(gamma_err),
                    non_exponential=non_exp, reduced_chi2=chi2,
                    window=(float(t_lo), float(t_hi)))
