import numpy as np
from hypothesis import assume
from hypothesis import strategies as st

from lagspec.errors import DegenerateError, ResolutionError, StructureError
from lagspec.scenarios import random_fold_family
from lagspec.spectral import analyze


@st.composite
def generic_fold(draw):
    """A seeded fold family whose front is generic at the default resolution."""
    H = random_fold_family(np.random.default_rng(draw(st.integers(0, 10_000))))
    try:
        analyze(H)
    except (DegenerateError, ResolutionError, StructureError):
        assume(False)
    return H
