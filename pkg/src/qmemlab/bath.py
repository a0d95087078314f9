"""Thermal-bath spectral densities and their correlation functions.

Working units: hbar = k_B = 1, so the inverse temperature beta carries time
units and all frequencies are angular.  A bath is summarized by its spectral
density R(omega) >= 0, constrained by the KMS condition

    R(-omega) = exp(-beta*omega) * R(omega),   omega > 0,

and the correlation function is its inverse Fourier transform under the
convention R(omega) = (1/2pi) int F(t) exp(-i omega t) dt, i.e.

    F(t) = int R(omega) exp(+i omega t) domega.

Built-in density kinds:

* ``flat_kms``     -- R(omega) = R for omega >= 0, R*exp(beta*omega) below.
* ``power_ansatz`` -- R(omega) = C * omega**d * exp(-omega/cutoff) for
                      omega >= 0, extended to omega < 0 by KMS.
* ``tabulated``    -- piecewise-linear interpolation of (omega, R) samples,
                      KMS-checked within a tolerance.

Evaluation is restricted to the window [-cutoff, +cutoff] (zero outside);
the flat density's derivative kink of size beta*R at omega = 0 is what
produces the slow ~beta*R/t**2 tail of |F(t)|, while the hard window edge
adds an oscillation at the cutoff frequency that the tail fit demodulates
away (see ``tail_fit``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from qmemlab._errors import InsufficientDataError, NumericalFailure, ParameterError

FLAT_KMS = "flat_kms"
POWER_ANSATZ = "power_ansatz"
TABULATED = "tabulated"

_KINDS = (FLAT_KMS, POWER_ANSATZ, TABULATED)

# Gauss-Legendre nodes per quadrature panel; panels are sized so the phase
# advance omega*t stays below _PHASE_PER_PANEL, where a 16-point rule is
# accurate to well below 1e-12.
_GL_POINTS = 16
_PHASE_PER_PANEL = 8.0
_MAX_QUAD_NODES = 4_000_000


@dataclass(frozen=True)
class SpectralDensityModel:
    """Parametric bath spectral density; source of all thermal rates.

    amplitude is R (flat) or C (power ansatz); cutoff is the angular
    frequency window edge; exponent is the power-ansatz d (None otherwise).
    Tabulated models carry their sample arrays and a KMS tolerance.
    """

    kind: str
    amplitude: float
    cutoff: float
    beta: float
    exponent: float | None = None
    table_omega: np.ndarray | None = field(default=None, repr=False)
    table_r: np.ndarray | None = field(default=None, repr=False)
    kms_tolerance: float = 1e-6

    def evaluate(self, omega):
        """Vectorized R(omega); zero outside [-cutoff, cutoff]."""
        return evaluate_density(self, omega)


def build_spectral_density(kind, *, amplitude=None, cutoff=None, beta=None,
                           exponent=None, table_omega=None, table_r=None,
                           kms_tolerance=1e-6):
    """Construct and validate a spectral density model.

    Raises ParameterError for nonpositive amplitude/cutoff/beta, for a
    power-ansatz exponent below 1, and for tabulated samples that violate
    positivity or KMS beyond the tolerance.
    """
    if kind not in _KINDS:
        raise ParameterError(f"unknown spectral density kind {kind!r}")
    if beta is None or beta <= 0:
        raise ParameterError("beta must be > 0")

    if kind == TABULATED:
        if table_omega is None or table_r is None:
            raise ParameterError("tabulated model needs table_omega and table_r")
        om = np.asarray(table_omega, dtype=float)
        rv = np.asarray(table_r, dtype=float)
        if om.ndim != 1 or om.shape != rv.shape or om.size < 3:
            raise ParameterError("tabulated samples must be 1-d arrays of equal length >= 3")
        if np.any(np.diff(om) <= 0):
            raise ParameterError("tabulated omega samples must be strictly increasing")
        if np.any(rv < 0):
            raise ParameterError("tabulated density has negative samples")
        if cutoff is None:
            cutoff = float(max(om[-1], -om[0]))
        model = SpectralDensityModel(kind=TABULATED, amplitude=float(np.max(rv)),
                                     cutoff=float(cutoff), beta=float(beta),
                                     table_omega=om, table_r=rv,
                                     kms_tolerance=float(kms_tolerance))
        violation = _kms_violation_tabulated(model)
        if violation > kms_tolerance:
            raise ParameterError(
                f"tabulated density violates KMS by {violation:.3g} "
                f"(tolerance {kms_tolerance:.3g})")
        return model

    if amplitude is None or amplitude <= 0:
        raise ParameterError("amplitude must be > 0")
    if cutoff is None or cutoff <= 0:
        raise ParameterError("cutoff must be > 0")
    if kind == POWER_ANSATZ:
        if exponent is None or exponent < 1:
            raise ParameterError("power ansatz requires exponent d >= 1")
    else:
        exponent = None
    return SpectralDensityModel(kind=kind, amplitude=float(amplitude),
                                cutoff=float(cutoff), beta=float(beta),
                                exponent=None if exponent is None else float(exponent))


def read_tabulated_csv(path, beta, kms_tolerance=1e-6):
    """Read a two-column (omega, R) CSV with one header line."""
    om, rv = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParameterError(f"{path}: empty CSV")
        for row in reader:
            if not row:
                continue
            try:
                om.append(float(row[0]))
                rv.append(float(row[1]))
            except (IndexError, ValueError) as exc:
                raise ParameterError(f"{path}: malformed row {row!r}") from exc
    return build_spectral_density(TABULATED, table_omega=np.array(om),
                                  table_r=np.array(rv), beta=beta,
                                  kms_tolerance=kms_tolerance)


def evaluate_density(model, omega):
    """R(omega) on the window [-cutoff, cutoff], zero outside."""
    om = np.asarray(omega, dtype=float)
    scalar = om.ndim == 0
    om = np.atleast_1d(om)
    out = np.zeros_like(om)
    inside = np.abs(om) <= model.cutoff
    if model.kind == FLAT_KMS:
        pos = inside & (om >= 0)
        neg = inside & (om < 0)
        out[pos] = model.amplitude
        out[neg] = model.amplitude * np.exp(model.beta * om[neg])
    elif model.kind == POWER_ANSATZ:
        d = model.exponent
        pos = inside & (om >= 0)
        neg = inside & (om < 0)
        out[pos] = model.amplitude * om[pos] ** d * np.exp(-om[pos] / model.cutoff)
        a = np.abs(om[neg])
        # KMS extension: R(-a) = exp(-beta*a) * R(a)
        out[neg] = (model.amplitude * a ** d * np.exp(-a / model.cutoff)
                    * np.exp(-model.beta * a))
    else:
        lo, hi = model.table_omega[0], model.table_omega[-1]
        inside &= (om >= lo) & (om <= hi)
        out[inside] = np.interp(om[inside], model.table_omega, model.table_r)
    return float(out[0]) if scalar else out


def _kms_violation_tabulated(model, n_grid=200):
    grid = np.linspace(0.0, min(model.cutoff, model.table_omega[-1],
                                -model.table_omega[0]), n_grid + 1)[1:]
    r_pos = evaluate_density(model, grid)
    r_neg = evaluate_density(model, -grid)
    scale = np.maximum(r_pos, 1e-300)
    return float(np.max(np.abs(r_neg - np.exp(-model.beta * grid) * r_pos) / scale))


def kms_max_violation(model, n_grid=400):
    """max over sampled omega in (0, cutoff] of |R(-w)exp(beta w)/R(w) - 1|."""
    grid = np.geomspace(1e-6 * model.cutoff, model.cutoff, n_grid)
    r_pos = np.asarray(evaluate_density(model, grid))
    r_neg = np.asarray(evaluate_density(model, -grid))
    ok = r_pos > 0
    if not np.any(ok):
        return math.inf
    return float(np.max(np.abs(r_neg[ok] * np.exp(model.beta * grid[ok]) / r_pos[ok] - 1.0)))


def density_integral(model):
    """int R(omega) domega over the window, by adaptive quadrature.

    Split at omega = 0 where the KMS constraint kinks the density.
    """
    lo = -model.cutoff
    if model.kind == TABULATED:
        lo = max(lo, float(model.table_omega[0]))
        hi = min(model.cutoff, float(model.table_omega[-1]))
    else:
        hi = model.cutoff
    total = 0.0
    for a, b in ((lo, 0.0), (0.0, hi)):
        if b <= a:
            continue
        pts = None
        if model.kind == TABULATED:
            interior = model.table_omega[(model.table_omega > a) & (model.table_omega < b)]
            pts = interior.tolist() or None
        val, _ = integrate.quad(lambda w: evaluate_density(model, w), a, b,
                                points=pts, limit=400)
        total += val
    return total


@dataclass(frozen=True)
class CorrelationFunction:
    """Samples of F(t) = int R(omega) exp(i omega t) domega on t >= 0."""

    t_grid: np.ndarray
    values: np.ndarray
    f_zero: float
    provenance: dict

    @property
    def cutoff(self):
        return self.provenance.get("cutoff")


def _panel_nodes(breakpoints, t_max, refine):
    """Gauss-Legendre nodes/weights over panels between the breakpoints.

    Panels subdivide each breakpoint interval so that |omega_panel * t_max|
    stays below the per-panel phase budget; `refine` doubles panel counts.
    """
    x, w = leggauss(_GL_POINTS)
    nodes, weights = [], []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        span = b - a
        if span <= 0:
            continue
        n_pan = max(1, int(math.ceil(span * max(t_max, 1e-30) / _PHASE_PER_PANEL)))
        n_pan *= 2 ** refine
        edges = np.linspace(a, b, n_pan + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def _breakpoints(model):
    """Panel boundaries for the density: window edges, the kink at 0, and
    every tabulated sample point."""
    if model.kind == TABULATED:
        lo = max(-model.cutoff, float(model.table_omega[0]))
        hi = min(model.cutoff, float(model.table_omega[-1]))
        pts = [lo] + [float(v) for v in model.table_omega if lo < v < hi] + [hi]
        if 0.0 not in pts and lo < 0.0 < hi:
            pts.append(0.0)
        return np.array(sorted(set(pts)))
    return np.array([-model.cutoff, 0.0, model.cutoff])


def _oscillatory_transform(model, t_grid, nodes, weights):
    dens = evaluate_density(model, nodes) * weights
    out = np.empty(len(t_grid), dtype=complex)
    steps = np.diff(t_grid)
    uniform = len(t_grid) > 32 and steps.size > 0 and np.all(
        np.abs(steps - steps[0]) < 1e-9 * max(steps[0], 1e-300))
    if uniform:
        # phase recurrence along the uniform grid avoids one exp per entry;
        # |step factor| = 1 so the drift stays ~n*eps, far below rel_tol
        row = np.exp(1j * t_grid[0] * nodes) * dens
        step = np.exp(1j * steps[0] * nodes)
        for k in range(len(t_grid)):
            out[k] = row.sum()
            row *= step
        return out
    chunk = max(1, int(4e6 // max(len(nodes), 1)))
    for start in range(0, len(t_grid), chunk):
        ts = t_grid[start:start + chunk]
        out[start:start + chunk] = np.exp(1j * np.outer(ts, nodes)) @ dens
    return out


def correlation_function(model, t_grid, rel_tol=1e-8):
    """Evaluate F(t) by oscillatory-aware panel quadrature.

    The window is partitioned into Gauss-Legendre panels small enough to
    resolve exp(i omega t) at the largest requested t; panel counts double
    until successive estimates agree to `rel_tol` in the sup norm (relative
    to the largest |F|), else NumericalFailure.

    Parameters
    ----------
    model : SpectralDensityModel
    t_grid : array_like, nonnegative, sorted ascending
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ParameterError("t_grid must be a nonempty 1-d array")
    if np.any(t < 0):
        raise ParameterError("t_grid must be nonnegative")
    if np.any(np.diff(t) < 0):
        raise ParameterError("t_grid must be sorted ascending")

    breaks = _breakpoints(model)
    t_max = float(t[-1])
    prev = None
    for refine in range(0, 8):
        nodes, weights = _panel_nodes(breaks, t_max, refine)
        if len(nodes) > _MAX_QUAD_NODES:
            raise NumericalFailure(
                "correlation quadrature did not converge within the node cap",
                {"nodes": len(nodes), "refine": refine,
                 "last_rel_change": None if prev is None else rel_change})
        vals = _oscillatory_transform(model, t, nodes, weights)
        if prev is not None:
            scale = float(np.max(np.abs(vals)))
            rel_change = float(np.max(np.abs(vals - prev)) / max(scale, 1e-300))
            if rel_change <= rel_tol:
                f_zero = density_integral(model)
                prov = {"cutoff": model.cutoff, "kind": model.kind,
                        "gl_points": _GL_POINTS, "refine": refine,
                        "n_nodes": int(len(nodes)), "rel_change": rel_change,
                        "rel_tol": rel_tol}
                return CorrelationFunction(t_grid=t, values=vals,
                                           f_zero=f_zero, provenance=prov)
        prev = vals
    raise NumericalFailure("correlation quadrature did not converge",
                           {"refine_limit": 8, "last_rel_change": rel_change})


def tail_window_grid(cutoff, t_min, t_max, samples_per_window=16):
    """Time grid for tail fitting: consecutive cutoff-period windows, each
    holding `samples_per_window` equally spaced samples.

    Equal spacing over one full period 2*pi/cutoff makes the sample mean
    annihilate the exp(i*cutoff*t) window-edge oscillation exactly.
    """
    period = 2 * math.pi / cutoff
    n_windows = int(math.floor((t_max - t_min) / period))
    if n_windows < 1:
        raise ParameterError("tail window shorter than one cutoff period")
    k = np.arange(n_windows * samples_per_window)
    return t_min + (k + 0.5) * (period / samples_per_window)


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit of the demodulated |F| to a/t**p."""

    exponent: float
    amplitude: float
    residual_rms: float
    non_power_law: bool
    n_points: int
    window: tuple


def tail_fit(corr, t_min, t_max, samples_per_window=16):
    """Fit |F(t)| ~ a / t**p on [t_min, t_max].

    If the correlation function carries a cutoff, samples are first
    coarse-grained by a complex mean over each cutoff period: the hard
    window edge at the cutoff contributes a pure oscillation of magnitude
    ~R/t that would otherwise bury the thermal 1/t**2 component, and a full-
    period mean removes it while preserving the slow part.  The t_min
    precondition t_min*cutoff >= 20 keeps the fit past transient rings.

    Returns a TailFit; flags non_power_law when the log-log residual is
    large or an exponential model fits decisively better.
    """
    t = np.asarray(corr.t_grid, dtype=float)
    f = np.asarray(corr.values)
    sel = (t >= t_min) & (t <= t_max)
    if int(np.count_nonzero(sel)) < 8:
        raise InsufficientDataError(
            f"only {int(np.count_nonzero(sel))} samples inside [{t_min}, {t_max}]")
    t, f = t[sel], f[sel]

    cutoff = corr.cutoff
    if cutoff is not None and t_min * cutoff < 20:
        raise ParameterError("t_min too small: require t_min * cutoff >= 20")

    if cutoff is not None:
        period = 2 * math.pi / cutoff
        # nudge avoids misassigning window-boundary samples to the previous
        # window through float rounding, which would break the exact
        # equal-spacing cancellation of the cutoff oscillation
        idx = np.floor((t - t[0]) / period + 1e-9).astype(int)
        n_win = idx[-1] + 1
        t_bar, f_bar = [], []
        for k in range(n_win):
            msk = idx == k
            if np.count_nonzero(msk) >= max(8, samples_per_window // 2):
                t_bar.append(np.mean(t[msk]))
                f_bar.append(np.mean(f[msk]))
        if len(t_bar) < 8:
            raise InsufficientDataError(
                f"only {len(t_bar)} usable cutoff-period windows in the fit range")
        ts = np.array(t_bar)
        ys = np.abs(np.array(f_bar))
    else:
        ts = t
        ys = np.abs(f)

    pos = ys > 0
    if np.count_nonzero(pos) < 8:
        raise InsufficientDataError("fewer than 8 positive envelope points")
    ts, ys = ts[pos], ys[pos]
    ly = np.log(ys)

    design = np.vstack([np.ones_like(ts), np.log(ts)]).T
    coef, res_pow, *_ = np.linalg.lstsq(design, ly, rcond=None)
    fit_pow = design @ coef
    sse_pow = float(np.sum((ly - fit_pow) ** 2))
    rms = math.sqrt(sse_pow / len(ts))

    design_exp = np.vstack([np.ones_like(ts), ts]).T
    coef_exp, *_ = np.linalg.lstsq(design_exp, ly, rcond=None)
    sse_exp = float(np.sum((ly - design_exp @ coef_exp) ** 2))

    non_power = rms > 0.15 or (sse_pow > 1e-12 * len(ts) and sse_exp < 0.25 * sse_pow)
    return TailFit(exponent=float(-coef[1]), amplitude=float(math.exp(coef[0])),
                   residual_rms=rms, non_power_law=bool(non_power),
                   n_points=len(ts), window=(float(t_min), float(t_max)))


@dataclass(frozen=True)
class BathConditionsReport:
    """Audit of the nontriviality conditions for one density model."""

    kms_max_violation: float
    r2_constant: float
    r2_satisfied: bool
    r2_threshold: float
    gate_error_floor_omega: np.ndarray
    gate_error_floor: np.ndarray
    flags: tuple = ()
    tail_exponent: float | None = None
    tail_amplitude: float | None = None

    def to_json_dict(self):
        d = {
            "kms_max_violation": self.kms_max_violation,
            "r2_constant": self.r2_constant,
            "r2_satisfied": self.r2_satisfied,
            "r2_threshold": self.r2_threshold,
            "flags": list(self.flags),
        }
        if self.tail_exponent is not None:
            d["tail_exponent"] = self.tail_exponent
            d["tail_amplitude"] = self.tail_amplitude
        return d


def check_conditions(model, r2_threshold=1e-3, n_grid=400):
    """Evaluate the KMS residual and the lower-bound constant of R2.

    eta = inf over omega in (0, cutoff] of R(omega)/omega, sampled on a log
    grid of `n_grid` points down to 1e-6*cutoff, sharpened by the analytic
    endpoint where the built-in kinds make it available.  R(omega)/omega is
    also the per-gate error floor tau*R at tau = 1/omega, returned as
    samples.
    """
    grid = np.geomspace(1e-6 * model.cutoff, model.cutoff, n_grid)
    ratio = np.asarray(evaluate_density(model, grid)) / grid
    eta = float(np.min(ratio))
    flags = []
    if model.kind == FLAT_KMS:
        # R/omega is strictly decreasing; the infimum sits at the cutoff.
        eta = model.amplitude / model.cutoff
    elif model.kind == POWER_ANSATZ:
        if model.exponent > 1:
            # ratio ~ C omega**(d-1) -> 0 at the origin; grid value stands in
            # for the vanishing infimum.
            flags.append("r2-infimum-vanishes-at-zero-frequency")
        else:
            # d = 1: the ratio C*exp(-omega/cutoff) is bounded below on the
            # window, so this ansatz is not R2-violating on (0, cutoff].
            eta = model.amplitude * math.exp(-1.0)
            flags.append("power-ansatz-d1-ratio-bounded-below")
    return BathConditionsReport(
        kms_max_violation=kms_max_violation(model),
        r2_constant=eta,
        r2_satisfied=bool(eta > r2_threshold),
        r2_threshold=float(r2_threshold),
        gate_error_floor_omega=grid,
        gate_error_floor=ratio,
        flags=tuple(flags),
    )


PRIVATE = "private"
COLLECTIVE = "collective"


@dataclass(frozen=True)
class CorrelationMatrixSpec:
    """Multi-qubit bath correlation matrix: a 3x3 single-qubit block, either
    replicated on the diagonal (private baths) or across all qubit pairs
    (collective coupling to one bath)."""

    n_qubits: int
    base_matrix: np.ndarray
    coupling: str = PRIVATE

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ParameterError("n_qubits must be >= 1")
        if self.coupling not in (PRIVATE, COLLECTIVE):
            raise ParameterError(f"unknown coupling {self.coupling!r}")
        base = np.asarray(self.base_matrix, dtype=float)
        if base.shape != (3, 3):
            raise ParameterError("base_matrix must be 3x3")
        if not np.allclose(base, base.T, atol=1e-12):
            raise ParameterError("base_matrix must be symmetric")
        evals = np.linalg.eigvalsh(base)
        if evals[0] < -1e-10 * max(1.0, evals[-1]):
            raise ParameterError("base_matrix must be positive semidefinite")
        object.__setattr__(self, "base_matrix", base)


def expand_correlation_matrix(spec):
    """The 3N x 3N correlation matrix for the given coupling structure."""
    n = spec.n_qubits
    if spec.coupling == COLLECTIVE:
        return np.kron(np.ones((n, n)), spec.base_matrix)
    return np.kron(np.eye(n), spec.base_matrix)


def collective_rank(spec, omega=0.0):
    """Numerical rank of the expanded correlation matrix.

    Eigenvalues above 1e-10 times the largest count toward the rank.  For
    collective coupling this equals rank(base), independent of N: all other
    eigenvalues vanish, which is the decoherence-free-subspace mechanism.
    """
    mat = expand_correlation_matrix(spec)
    evals = np.linalg.eigvalsh(mat)
    top = float(evals[-1])
    if top <= 0:
        return 0
    return int(np.count_nonzero(evals > 1e-10 * top))


@dataclass(frozen=True)
class GateTimeBound:
    """Largest gate time consistent with (1/2) eta cutoff**2 <= eps**2/tau**2."""

    tau_max: float
    eta: float
    cutoff: float
    epsilon: float
    lhs: float            # (1/2) eta cutoff**2
    rhs_at_tau_max: float  # eps**2 / tau_max**2

    def to_json_dict(self):
        return {"tau_max": self.tau_max, "eta": self.eta, "cutoff": self.cutoff,
                "epsilon": self.epsilon, "lhs": self.lhs,
                "rhs_at_tau_max": self.rhs_at_tau_max}


def tb_gate_time_bound(eta, cutoff, epsilon):
    """Cutoff-dependent gate-time bound tau_max = eps*sqrt(2/eta)/cutoff."""
    if eta <= 0 or cutoff <= 0 or epsilon <= 0:
        raise ParameterError("eta, cutoff, epsilon must all be > 0")
    if epsilon >= 1:
        raise ParameterError("epsilon must be < 1")
    tau_max = epsilon * math.sqrt(2.0 / eta) / cutoff
    lhs = 0.5 * eta * cutoff ** 2
    return GateTimeBound(tau_max=tau_max, eta=float(eta), cutoff=float(cutoff),
                         epsilon=float(epsilon), lhs=lhs,
                         rhs_at_tau_max=epsilon ** 2 / tau_max ** 2)
