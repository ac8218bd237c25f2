"""Log-space and information-theoretic primitives.

Every function accumulates in float64 regardless of the input dtype. Inputs are
treated as read-only; callers get fresh arrays back.
"""

from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import special

from codert.exceptions import NumericsError, ValidationError

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

ENTROPY_SUM_TOLERANCE = 1e-4


def _as_vector(v: npt.ArrayLike) -> FloatArray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"expected a vector, got shape {arr.shape}")
    return arr


def log_sum_exp(v: npt.ArrayLike) -> float:
    """Return log(sum(exp(v))) using a max shift.

    Args:
        v: Non-empty vector of finite values.

    Returns:
        The reduction as a Python float. A single element is returned unchanged.

    Raises:
        NumericsError: If ``v`` is empty or has non-finite entries.
    """
    arr = _as_vector(v)
    if arr.size == 0:
        raise NumericsError("empty reduction")
    if not np.all(np.isfinite(arr)):
        raise NumericsError("log_sum_exp requires finite entries")
    if arr.size == 1:
        return float(arr[0])
    return float(special.logsumexp(arr))


def softmax(v: npt.ArrayLike, axis: int = -1) -> FloatArray:
    """Numerically stable softmax along ``axis``."""
    arr = np.asarray(v, dtype=np.float64)
    result: FloatArray = special.softmax(arr, axis=axis)
    return result


def log_softmax(v: npt.ArrayLike, axis: int = -1) -> FloatArray:
    """Numerically stable log-softmax along ``axis``."""
    arr = np.asarray(v, dtype=np.float64)
    result: FloatArray = special.log_softmax(arr, axis=axis)
    return result


def entropy(p: npt.ArrayLike) -> float:
    """Shannon entropy in nats with 0·ln 0 := 0.

    Args:
        p: Probability vector (non-negative, sums to 1 within 1e-4).

    Returns:
        Entropy in [0, ln(len(p))].

    Raises:
        NumericsError: If an entry is negative or the vector is not normalized.
    """
    arr = _as_vector(p)
    if arr.size == 0:
        raise NumericsError("empty reduction")
    if np.any(arr < 0):
        raise NumericsError("probability vector has a negative entry")
    total = float(arr.sum())
    if abs(total - 1.0) > ENTROPY_SUM_TOLERANCE:
        raise NumericsError(f"probability vector sums to {total}, expected 1")
    return float(np.clip(special.entr(arr).sum(), 0.0, np.log(arr.size)))


def softmax_entropy(logits: npt.ArrayLike, axis: int = -1) -> FloatArray:
    """Entropy (nats) of softmax(logits) along ``axis``, vectorized."""
    log_p = log_softmax(logits, axis=axis)
    ent: FloatArray = -(np.exp(log_p) * log_p).sum(axis=axis)
    return np.clip(ent, 0.0, np.log(np.shape(logits)[axis]))


def top_k_indices(v: npt.ArrayLike, k: int) -> IntArray:
    """Indices of the ``k`` largest entries, ranked, ties to the lower index.

    Args:
        v: Vector of values.
        k: Number of indices, 1 ≤ k ≤ len(v).

    Returns:
        int64 array of length ``k`` ordered from largest to smallest value.

    Raises:
        ValidationError: If ``k`` is out of range.
    """
    arr = _as_vector(v)
    if not 1 <= k <= arr.size:
        raise ValidationError(f"k={k} out of range [1, {arr.size}]")
    order = np.argsort(-arr, kind="stable")
    return order[:k].astype(np.int64)


def top_k_mask(logits: npt.NDArray[Any], k: int) -> npt.NDArray[np.bool_]:
    """Boolean mask selecting the top-``k`` entries of every row of a 2-D array."""
    arr = np.asarray(logits, dtype=np.float64)
    if not 1 <= k <= arr.shape[-1]:
        raise ValidationError(f"k={k} out of range [1, {arr.shape[-1]}]")
    order = np.argsort(-arr, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(arr.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask
