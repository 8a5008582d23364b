"""Shared numerical tolerances.

Library code and tests import these from one place so an adjustment here
propagates everywhere consistently.
"""

# Algebraic identities (Hermiticity, traces, commutation relations).
ALGEBRAIC_ATOL = 1e-10

# Spectral slack: eigenvalue-based checks (positivity, variances) tolerate
# slightly negative values from finite-precision eigensolves.
SPECTRAL_ATOL = 1e-9

# Radicands in Bures-type distances may round to tiny negatives for states
# numerically indistinguishable from the target projector.
RADICAND_ATOL = 1e-12
