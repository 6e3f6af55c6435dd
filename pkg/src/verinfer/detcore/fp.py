"""Canonical-order float32 arithmetic.

Every routine here is built only from IEEE-754 elementwise operations
(add, multiply, divide, rint, ldexp, nextafter) that numpy evaluates with
round-to-nearest-even and no cross-element reassociation. Results therefore
depend only on the inputs and on the reduction order selected by the profile,
never on array shape, batch size or SIMD path.

Tree order: adjacent pairs are summed level by level; at a level with an odd
number of nodes the trailing node is promoted unchanged. For eight inputs this
is ((v0+v1)+(v2+v3))+((v4+v5)+(v6+v7)).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

f32 = np.float32
f64 = np.float64


class ReductionOrder(str, enum.Enum):
    CANONICAL_TREE = "canonical_tree"
    SEQUENTIAL = "sequential"


class FmaMode(str, enum.Enum):
    FUSED = "fused"
    SPLIT = "split"


@dataclass(frozen=True)
class ArchProfile:
    """Emulated hardware arithmetic: accumulation order plus FMA behaviour."""

    name: str
    reduction_order: ReductionOrder
    fma_emulation: FmaMode


class NonFiniteInput(ValueError):
    pass


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(x.ravel()))
        raise NonFiniteInput(f"{what}: non-finite value at flat index {int(bad[0])}")


def as_f32(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype != f32:
        arr = arr.astype(f32)
    return arr


def fma32(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Correctly rounded float32 a*b + c (single rounding).

    The float32 product is exact in float64. The float64 sum is made
    round-to-odd using the TwoSum error term, which makes the final
    conversion to float32 free of double rounding (53 >= 24 + 2).
    """
    p = np.asarray(a, dtype=f64) * np.asarray(b, dtype=f64)
    c64 = np.asarray(c, dtype=f64)
    s = p + c64
    bb = s - p
    err = (p - (s - bb)) + (c64 - bb)
    bits = s.view(np.int64)
    fix = (err != 0) & ((bits & 1) == 0)
    # s != 0 whenever err != 0; step the bit pattern one ulp toward s + err
    step = np.where((err > 0) == (s > 0), 1, -1)
    s = (bits + fix * step).view(f64)
    return s.astype(f32)


def _tree_sum_last(x: np.ndarray) -> np.ndarray:
    while x.shape[-1] > 1:
        n = x.shape[-1]
        h = n // 2
        s = x[..., 0 : 2 * h : 2] + x[..., 1 : 2 * h : 2]
        if n % 2:
            s = np.concatenate([s, x[..., n - 1 : n]], axis=-1)
        x = s
    return x[..., 0]


def _sequential_sum_last(x: np.ndarray) -> np.ndarray:
    # starts from the first element so a singleton keeps its sign bit
    acc = x[..., 0]
    for j in range(1, x.shape[-1]):
        acc = acc + x[..., j]
    return acc


def reduce_last_axis(x: np.ndarray, order: ReductionOrder) -> np.ndarray:
    x = as_f32(x)
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1], dtype=f32)
    if order is ReductionOrder.CANONICAL_TREE:
        return _tree_sum_last(x)
    return _sequential_sum_last(x)


def canonical_reduce(values: Sequence[float], profile: ArchProfile) -> np.float32:
    """Sum float32 values in the order fixed by ``profile``.

    ``fma_emulation`` plays no role here: there are no products.
    """
    x = as_f32(values).ravel()
    _check_finite(x, "canonical_reduce")
    return f32(reduce_last_axis(x, profile.reduction_order))


def tree_sum(values) -> np.float32:
    x = as_f32(values).ravel()
    return f32(reduce_last_axis(x, ReductionOrder.CANONICAL_TREE))


def _dot_last(a: np.ndarray, b: np.ndarray, profile: ArchProfile) -> np.ndarray:
    """Dot products over the last axis of broadcast float32 operands."""
    k = a.shape[-1]
    if k == 0:
        return np.zeros(np.broadcast_shapes(a.shape, b.shape)[:-1], dtype=f32)
    fused = profile.fma_emulation is FmaMode.FUSED
    if profile.reduction_order is ReductionOrder.SEQUENTIAL:
        acc = a[..., 0] * b[..., 0]
        for j in range(1, k):
            if fused:
                acc = fma32(a[..., j], b[..., j], acc)
            else:
                acc = acc + a[..., j] * b[..., j]
        return acc
    if not fused or k == 1:
        return _tree_sum_last(a * b)
    # fused: the first tree level is fma(a_even, b_even, round(a_odd * b_odd))
    h = k // 2
    odd = a[..., 1 : 2 * h : 2] * b[..., 1 : 2 * h : 2]
    level = fma32(a[..., 0 : 2 * h : 2], b[..., 0 : 2 * h : 2], odd)
    if k % 2:
        level = np.concatenate([level, a[..., k - 1 : k] * b[..., k - 1 : k]], axis=-1)
    return _tree_sum_last(level)


def det_matvec(matrix, vector, profile: ArchProfile) -> np.ndarray:
    """``matrix @ vector`` with every row reduced in the profile's order.

    ``vector`` may also be a (batch, k) stack; the result is then (batch, m).
    Each output element is bit-identical to the unbatched computation.
    """
    m = as_f32(matrix)
    v = as_f32(vector)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if v.ndim not in (1, 2) or v.shape[-1] != m.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {m.shape} vs vector {v.shape}")
    _check_finite(m, "det_matvec matrix")
    _check_finite(v, "det_matvec vector")
    return matvec_unchecked(m, v, profile)


def matvec_unchecked(m: np.ndarray, v: np.ndarray, profile: ArchProfile) -> np.ndarray:
    """``det_matvec`` without validation, for float32 operands known finite."""
    if v.ndim == 1:
        return _dot_last(m, v[None, :], profile)
    return _dot_last(m[None, :, :], v[:, None, :], profile)


# exp(x) = 2**n * exp(r), r = x - n*ln2, |r| <= ln2/2; Cody-Waite split of ln2
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e00
_EXP_COEFFS = [1.0 / math.factorial(i) for i in range(14)]


def det_exp(x) -> np.ndarray:
    """float32 exp using only elementwise float64 arithmetic.

    Avoids libm/SIMD exp, whose last-bit behaviour may vary with the code
    path. Accurate to well under one float32 ulp before the final rounding.
    """
    x64 = np.clip(np.asarray(x, dtype=f64), -200.0, 88.0)
    n = np.rint(x64 * _INV_LN2)
    r = (x64 - n * _LN2_HI) - n * _LN2_LO
    acc = np.full_like(r, _EXP_COEFFS[-1])
    for c in reversed(_EXP_COEFFS[:-1]):
        acc = acc * r + c
    return np.ldexp(acc, n.astype(np.int64)).astype(f32)


def det_softmax(logits) -> np.ndarray:
    """Max-subtracted softmax normalised by a canonical tree sum."""
    z = as_f32(logits).ravel()
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    _check_finite(z, "det_softmax")
    return softmax_unchecked(z)


def softmax_unchecked(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    e = det_exp(shifted)
    total = _tree_sum_last(e)
    return e / total
