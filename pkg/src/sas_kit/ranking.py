"""Deterministic ranking helpers.

Every ordering decision in the package goes through these functions. Keys are
rounded to ``KEY_DECIMALS`` before comparison and ties always resolve to the
smallest index, so orderings agree across platforms and survive the rounding
noise introduced by rigid transforms.
"""

import numpy as np

KEY_DECIMALS = 10


def rounded(values: np.ndarray, decimals: int = KEY_DECIMALS) -> np.ndarray:
    """Round sort keys so that noise-level differences compare equal."""
    out = np.round(np.asarray(values, dtype=np.float64), decimals)
    # -0.0 and 0.0 must compare equal
    return out + 0.0


def stable_argsort(values: np.ndarray, descending: bool = False) -> np.ndarray:
    """Argsort of a 1-D key vector; equal keys keep ascending index order."""
    keys = rounded(values)
    if descending:
        keys = -keys
    return np.argsort(keys, kind="stable")


def argmin_first(values: np.ndarray) -> int:
    """Index of the smallest key, smallest index on ties."""
    return int(np.argmin(rounded(values)))


def argmax_first(values: np.ndarray) -> int:
    """Index of the largest key, smallest index on ties."""
    return int(np.argmax(rounded(values)))


def smallest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest keys in ascending key order."""
    return stable_argsort(values)[:k]


def largest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest keys in descending key order."""
    return stable_argsort(values, descending=True)[:k]


def ranks(permutation: np.ndarray) -> np.ndarray:
    """Inverse permutation: ``ranks(p)[p[r]] == r``."""
    permutation = np.asarray(permutation, dtype=np.int64)
    inverse = np.empty_like(permutation)
    inverse[permutation] = np.arange(permutation.size)
    return inverse


def is_permutation(values: np.ndarray, size: int) -> bool:
    """True when ``values`` is a bijection on ``0..size-1``."""
    values = np.asarray(values)
    if values.shape != (size,):
        return False
    return bool(np.array_equal(np.sort(values), np.arange(size)))


def stable_argsort_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise ascending argsort with the same rounding and tie rule."""
    return np.argsort(rounded(matrix), axis=1, kind="stable")
