"""Per-component random generators derived from one root seed."""

import zlib

import numpy as np


def component_rng(seed, component):
    """Generator for ``component`` that depends only on (seed, component name)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(component.encode())]))


def component_seed(seed, component):
    return int(np.random.SeedSequence([int(seed), zlib.crc32(component.encode())]).generate_state(1)[0])
