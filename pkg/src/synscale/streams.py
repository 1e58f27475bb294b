"""Reproducible random number streams.

Every stochastic routine draws from a Philox (counter-based) generator keyed
by (seed, replica, role).  Streams for distinct replicas are statistically
independent and do not depend on execution order, so ensemble statistics are
identical whether replicas run serially or on a thread pool.
"""

import numpy as np

# role ids are part of the stream key; renumbering breaks byte-reproducibility
ROLES = {
    "presyn": 0,
    "thinning": 1,
    "discrete-clocks": 2,
    "limit-jumps": 3,
}


def stream(seed: int, replica: int = 0, role: str = "presyn") -> np.random.Generator:
    """Return the generator for one (seed, replica, role) triple."""
    key = np.random.SeedSequence([int(seed), int(replica), ROLES[role]])
    return np.random.Generator(np.random.Philox(key))
