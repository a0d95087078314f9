"""qmemlab: numerical laboratory for thermal stability of quantum memories.

Subpackages
-----------
bath      KMS-constrained spectral densities, correlation functions, tail fits
lattice   toric-code geometry, Ising lattices, syndromes, logical loops
davies    thermal Markov generators: construction, structure checks, spectra
dynamics  kinetic Monte Carlo, autocorrelation estimation, decay fitting
memory    bare/dressed encoded observables, decoders, lifetime studies
errormap  Heisenberg support growth and the exponential-locality audit
cli       configuration-driven experiment runner
"""

from qmemlab._errors import (
    CapacityError,
    DecodingError,
    InsufficientDataError,
    NumericalFailure,
    ParameterError,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DecodingError",
    "InsufficientDataError",
    "NumericalFailure",
    "ParameterError",
    "__version__",
]
