import numpy as np
import pytest

from qmemlab import bath, davies, lattice


@pytest.fixture(scope="session")
def flat_bath():
    return bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                       cutoff=10.0, beta=1.0)


@pytest.fixture(scope="session")
def power_bath():
    return bath.build_spectral_density(bath.POWER_ANSATZ, amplitude=1.0,
                                       cutoff=1.0, beta=1.0, exponent=2)


@pytest.fixture(scope="session")
def torus3():
    return lattice.build_torus(3)


@pytest.fixture(scope="session")
def torus4():
    return lattice.build_torus(4)


def flat_rates(beta, freqs, amplitude=1.0, cutoff=10.0, coupling_sq=1.0):
    model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=amplitude,
                                        cutoff=cutoff, beta=max(beta, 1e-12))
    return davies.build_rates(model, freqs, coupling_sq)


@pytest.fixture(scope="session")
def rates_factory():
    return flat_rates


def simpson_density_integral(model, n=200001):
    """Independent quadrature oracle: dense composite Simpson over the
    window, split at the KMS kink."""
    total = 0.0
    for a, b in ((-model.cutoff, 0.0), (0.0, model.cutoff)):
        xs = np.linspace(a, b, n)
        ys = np.asarray(model.evaluate(xs))
        h = xs[1] - xs[0]
        total += h / 3.0 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum()
                            + 2 * ys[2:-1:2].sum())
    return total


def simpson_correlation(model, t, n=200001):
    """Oscillatory transform by brute-force Simpson, independent of the
    panel quadrature."""
    total = 0.0 + 0.0j
    for a, b in ((-model.cutoff, 0.0), (0.0, model.cutoff)):
        xs = np.linspace(a, b, n)
        ys = np.asarray(model.evaluate(xs)) * np.exp(1j * xs * t)
        h = xs[1] - xs[0]
        total += h / 3.0 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum()
                            + 2 * ys[2:-1:2].sum())
    return total
