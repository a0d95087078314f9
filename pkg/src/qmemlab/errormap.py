"""Born-approximation audit of the error-locality assumption.

A single-site coupling operator evolved in the Heisenberg picture of an
interacting chain spreads over more sites as time passes; combined with a
bath correlation tail |F(t)|, second-order error contributions on n sites
inherit weight ~ |F(t_n)| at the time t_n when the support reaches n.  The
audit measures the support growth exactly (dense few-qubit evolution),
assembles the per-size magnitudes

    m_n = sum_t |F(t)| w_n(t) dt,

and tests them against the exponential locality law m_n <= C * eta**n:
accepted only when a log-linear fit is tight (R**2 >= 0.98) with eta < 1.
Power-law bath tails produce power-law m_n and fail the fit, which is the
point of the audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from qmemlab._errors import CapacityError, InsufficientDataError, ParameterError

MAX_CHAIN_QUBITS = 10

_PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class ChainModel:
    """Open transverse-field Ising chain: H = J sum z_i z_{i+1} + g sum x_i."""

    n_qubits: int
    coupling: float
    field: float

    def __post_init__(self):
        if self.n_qubits < 2:
            raise ParameterError("chain needs at least 2 qubits")
        if self.n_qubits > MAX_CHAIN_QUBITS:
            raise CapacityError(
                f"dense support evolution limited to {MAX_CHAIN_QUBITS} qubits")
        if not (math.isfinite(self.coupling) and math.isfinite(self.field)):
            raise ParameterError("couplings must be finite")


def site_operator(n, site, kind):
    ops = [_PAULI["i"]] * n
    ops[site] = _PAULI[kind]
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def chain_hamiltonian(chain):
    n = chain.n_qubits
    h = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for i in range(n - 1):
        h += chain.coupling * (site_operator(n, i, "z") @ site_operator(n, i + 1, "z"))
    for i in range(n):
        h += chain.field * site_operator(n, i, "x")
    return h


def pauli_coefficients(op, n):
    """Coefficients of op in the normalized Pauli basis, as a length-4**n
    array indexed base-4 per site (0=I, 1=X, 2=Y, 3=Z).

    Computed by applying the per-qubit change of basis to the (bra, ket)
    index pair of each site: O(n * 4**n) instead of 4**n separate traces.
    """
    # single-qubit map M[p, (r, c)] = conj(P_p[r, c]) / 2 so that
    # c_p = sum_rc M[p, rc] * A[r, c] = Tr(P_p A) / 2
    m = np.empty((4, 4), dtype=complex)
    for p, key in enumerate("ixyz"):
        m[p] = _PAULI[key].conj().reshape(-1) / 2.0
    a = np.asarray(op, dtype=complex).reshape((2,) * (2 * n))
    # interleave (row_i, col_i) axis pairs per site
    order = [axis for i in range(n) for axis in (i, n + i)]
    a = a.transpose(order).reshape((4,) * n)
    for axis in range(n):
        a = np.tensordot(m, a, axes=([1], [axis]))
        # tensordot moves the contracted axis to the front; rotate back
        a = np.moveaxis(a, 0, axis)
    return a.reshape(-1)


def _support_sizes(n):
    idx = np.arange(4 ** n)
    sizes = np.zeros(4 ** n, dtype=np.int64)
    for _ in range(n):
        sizes += (idx % 4) != 0
        idx //= 4
    return sizes


@dataclass(frozen=True)
class SupportSpectrum:
    """Fraction of squared Pauli magnitude on each support size at one time."""

    time: float
    weights: np.ndarray    # index n-1 holds support size n

    @property
    def total(self):
        return float(self.weights.sum())


def evolve_support(chain, site, t_grid, operator_kind="z"):
    """Exact Heisenberg evolution of one site coupling operator, decomposed
    into support-size weights at each requested time.

    Unitarity keeps the summed weight at 1 for all t.
    """
    n = chain.n_qubits
    if not 0 <= site < n:
        raise ParameterError("site outside the chain")
    h = chain_hamiltonian(chain)
    evals, evecs = np.linalg.eigh(h)
    a0 = site_operator(n, site, operator_kind)
    a0_eig = evecs.conj().T @ a0 @ evecs
    sizes = _support_sizes(n)
    out = []
    for t in np.asarray(t_grid, dtype=float):
        phase = np.exp(1j * evals * t)
        a_t = evecs @ (np.outer(phase, phase.conj()) * a0_eig) @ evecs.conj().T
        coeff = pauli_coefficients(a_t, n)
        mags = np.abs(coeff) ** 2
        total = mags.sum()
        weights = np.bincount(sizes, weights=mags, minlength=n + 1)[1:]
        out.append(SupportSpectrum(time=float(t), weights=weights / total))
    return out


@dataclass(frozen=True)
class ErrorWeightEstimate:
    sizes: np.ndarray
    magnitudes: np.ndarray
    normalization: float

    def to_json_dict(self):
        return {"sizes": self.sizes.tolist(),
                "magnitudes": self.magnitudes.tolist(),
                "normalization": self.normalization}


def born_error_weights(spectra, corr, tau_map=None):
    """Combine support spectra with the bath correlation magnitude.

    m_n = sum over spectrum times of |F(tau)| * w_n(t) * dt, with
    tau = tau_map(t) (identity by default); |F| is interpolated from the
    correlation samples, which must cover the mapped times.
    """
    if len(spectra) < 2:
        raise InsufficientDataError("need at least 2 support spectra")
    times = np.array([s.time for s in spectra])
    if np.any(np.diff(times) <= 0):
        raise ParameterError("spectra times must be strictly increasing")
    taus = times if tau_map is None else np.array([tau_map(t) for t in times])
    t_corr = np.asarray(corr.t_grid, dtype=float)
    if taus.min() < t_corr.min() - 1e-12 or taus.max() > t_corr.max() + 1e-12:
        raise ParameterError("correlation grid does not cover the mapped times")
    f_abs = np.interp(taus, t_corr, np.abs(corr.values))
    dt = np.gradient(times)
    w = np.stack([s.weights for s in spectra])   # (n_t, n_sizes)
    mags = (f_abs * dt) @ w
    return ErrorWeightEstimate(sizes=np.arange(1, w.shape[1] + 1),
                               magnitudes=mags,
                               normalization=float(mags.sum()))


@dataclass(frozen=True)
class A2Verdict:
    accepted: bool
    prefactor: float       # C
    error_per_gate: float  # eta
    r_squared: float
    n_points: int

    def to_json_dict(self):
        return {"accepted": self.accepted, "prefactor": self.prefactor,
                "error_per_gate": self.error_per_gate,
                "r_squared": self.r_squared, "n_points": self.n_points}


def a2_fit(est, r2_threshold=0.98):
    """Fit log m_n = log C + n log eta; accept only a tight exponential law.

    Rejection (power-law or slower tails) is reported as accepted=False,
    matching the audit's purpose: only exponentially clustered error
    weights satisfy the locality hypothesis.
    """
    sel = est.magnitudes > 0
    n = est.sizes[sel].astype(float)
    y = np.log(est.magnitudes[sel])
    if len(n) < 4:
        raise InsufficientDataError("need >= 4 nonzero error-weight sizes")
    design = np.vstack([np.ones_like(n), n]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    eta = math.exp(coef[1])
    accepted = bool(r2 >= r2_threshold and eta < 1.0)
    return A2Verdict(accepted=accepted, prefactor=math.exp(coef[0]),
                     error_per_gate=eta, r_squared=r2, n_points=len(n))
