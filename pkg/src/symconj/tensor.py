"""Dense float64 tensor kernels.

Everything here is a pure function over numpy float64 arrays: einsum
contraction, the elementwise special functions used by log densities,
one-hot encoding, stable log-sum-exp, and the matrix kernels backing
Gaussian families (Cholesky, inverse, log-determinant).

Kernels with a restricted domain validate their inputs and raise
:class:`NumericDomainError` instead of silently propagating NaNs.
Broadcasting is never implicit in einsum: shared indices must have equal
extents across operands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special as _special

from .errors import (
    ContractionError,
    EncodingError,
    FactorizationError,
    NumericDomainError,
)

INDEX_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def as_tensor(value) -> np.ndarray:
    """Coerce to a float64 ndarray (scalars become rank-0 tensors)."""
    return np.asarray(value, dtype=np.float64)


@dataclass(frozen=True)
class EinsumSpec:
    """Parsed contraction formula of the form ``"sub1,sub2,...->out"``.

    Indices are single lowercase letters a-z. Repeated indices within one
    operand denote diagonal extraction; indices absent from the output are
    summed over. Every output index must appear in some operand.
    """

    formula: str
    operand_subscripts: tuple[str, ...] = field(init=False)
    output: str = field(init=False)

    def __post_init__(self):
        if self.formula.count("->") != 1:
            raise ContractionError(
                f"formula {self.formula!r} must contain exactly one '->'")
        lhs, out = self.formula.split("->")
        operands = tuple(lhs.split(","))
        letters = set("".join(operands) + out)
        bad = sorted(letters - set(INDEX_ALPHABET))
        if bad:
            raise ContractionError(
                f"formula {self.formula!r}: indices must be lowercase a-z, "
                f"got {bad}")
        if len(letters) > len(INDEX_ALPHABET):
            raise ContractionError(
                f"formula {self.formula!r} uses more than 26 distinct indices")
        if len(set(out)) != len(out):
            raise ContractionError(
                f"formula {self.formula!r}: output indices must be distinct")
        in_letters = set("".join(operands))
        for idx in out:
            if idx not in in_letters:
                raise ContractionError(
                    f"formula {self.formula!r}: output index '{idx}' appears "
                    f"in no operand")
        object.__setattr__(self, "operand_subscripts", operands)
        object.__setattr__(self, "output", out)

    @property
    def operand_count(self) -> int:
        return len(self.operand_subscripts)


def _index_extents(spec: EinsumSpec, operands) -> dict[str, int]:
    extents: dict[str, int] = {}
    for pos, (subs, op) in enumerate(zip(spec.operand_subscripts, operands)):
        if op.ndim != len(subs):
            raise ContractionError(
                f"operand {pos} has rank {op.ndim} but subscript "
                f"{subs!r} expects rank {len(subs)}")
        for idx, extent in zip(subs, op.shape):
            if extents.setdefault(idx, extent) != extent:
                raise ContractionError(
                    f"index '{idx}' has conflicting extents "
                    f"{extents[idx]} and {extent}")
    return extents


def einsum_output_shape(spec: EinsumSpec, operand_shapes) -> tuple[int, ...]:
    """Output shape of a contraction, validating ranks and extents."""
    if len(operand_shapes) != spec.operand_count:
        raise ContractionError(
            f"formula {spec.formula!r} expects {spec.operand_count} operands, "
            f"got {len(operand_shapes)}")
    extents: dict[str, int] = {}
    for pos, (subs, shape) in enumerate(
            zip(spec.operand_subscripts, operand_shapes)):
        if len(shape) != len(subs):
            raise ContractionError(
                f"operand {pos} has rank {len(shape)} but subscript "
                f"{subs!r} expects rank {len(subs)}")
        for idx, extent in zip(subs, shape):
            known = extents.setdefault(idx, extent)
            if known != extent:
                raise ContractionError(
                    f"index '{idx}' has conflicting extents {known} and "
                    f"{extent}")
    return tuple(extents[i] for i in spec.output)


def einsum(spec, operands) -> np.ndarray:
    """Evaluate a contraction per the nested-loop sum-of-products
    definition.

    Multi-operand contractions are evaluated pairwise left to right,
    summing out each index as soon as no later operand or the output needs
    it, so the cost stays polynomial in the operand sizes; each pairwise
    step is delegated to numpy after validation. There is no
    contraction-order optimizer.
    """
    if isinstance(spec, str):
        spec = EinsumSpec(spec)
    ops = [as_tensor(x) for x in operands]
    if len(ops) != spec.operand_count:
        raise ContractionError(
            f"formula {spec.formula!r} expects {spec.operand_count} operands, "
            f"got {len(ops)}")
    _index_extents(spec, ops)
    subs = list(spec.operand_subscripts)
    out = spec.output
    if len(ops) <= 2:
        return np.einsum(spec.formula, *ops, optimize=False)
    acc, acc_sub = ops[0], subs[0]
    for k in range(1, len(ops)):
        later = set(out).union(*subs[k + 1:]) if k + 1 < len(ops) else set(out)
        merged = []
        for ch in acc_sub + subs[k]:
            if ch not in merged:
                merged.append(ch)
        target = "".join(ch for ch in merged if ch in later)
        if k == len(ops) - 1:
            target = out
        acc = np.einsum(f"{acc_sub},{subs[k]}->{target}", acc, ops[k],
                        optimize=False)
        acc_sub = target
    return acc


def _check_domain(name, x, mask):
    bad = np.flatnonzero(~np.asarray(mask).ravel())
    if bad.size:
        i = int(bad[0])
        raise NumericDomainError(
            f"{name}: domain violation at flat index {i} "
            f"(value {x.ravel()[i]!r})")


def _logistic(x):
    return _special.expit(x)


# name -> (kernel, domain predicate or None)
UNARY_FNS = {
    "log": (np.log, lambda x: x > 0),
    "log1p": (np.log1p, lambda x: x > -1),
    "exp": (np.exp, None),
    "sqrt": (np.sqrt, lambda x: x >= 0),
    "square": (np.square, None),
    "reciprocal": (lambda x: 1.0 / x, lambda x: x != 0),
    "logistic": (_logistic, None),
    "log_gamma": (_special.gammaln, lambda x: x > 0),
    "digamma": (_special.psi, lambda x: x > 0),
    "negate": (np.negative, None),
}


def map_unary(fn: str, x) -> np.ndarray:
    """Apply a named elementwise function, checking its domain first."""
    if fn not in UNARY_FNS:
        raise NumericDomainError(f"unknown unary function {fn!r}")
    kernel, domain = UNARY_FNS[fn]
    x = as_tensor(x)
    if domain is not None:
        _check_domain(fn, x, domain(x))
    with np.errstate(over="ignore"):
        out = kernel(x)
    if not np.all(np.isfinite(out)):
        _check_domain(fn, x, np.isfinite(out))
    return out


def one_hot(indices, depth: int) -> np.ndarray:
    """Encode integer indices as unit basis vectors along a new last axis."""
    idx = np.asarray(indices)
    if depth <= 0:
        raise EncodingError(f"depth must be positive, got {depth}")
    rounded = np.round(idx)
    if not np.all(rounded == idx):
        raise EncodingError("one_hot indices must be integral")
    rounded = rounded.astype(np.int64)
    if rounded.size and (rounded.min() < 0 or rounded.max() >= depth):
        raise EncodingError(
            f"one_hot index out of range [0, {depth}): "
            f"min={rounded.min() if rounded.size else None}, "
            f"max={rounded.max() if rounded.size else None}")
    return (rounded[..., None] == np.arange(depth)).astype(np.float64)


def logsumexp(x, axis: int) -> np.ndarray:
    """Numerically stable log-sum-exp along one axis (max-shifted)."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise NumericDomainError(
            f"logsumexp axis {axis} out of bounds for rank {x.ndim}")
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def cholesky(a) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric PD matrix.

    Raises :class:`FactorizationError` with the failing pivot index when the
    matrix is not positive definite. Symmetry is required up to 1e-10
    relative to the matrix scale.
    """
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FactorizationError(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise FactorizationError("cholesky input is not symmetric")
    n = a.shape[0]
    tol = 1e-12 * max(1.0, float(np.trace(a)) / max(n, 1))
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d <= tol:
            raise FactorizationError(
                f"matrix not positive definite at pivot {j}", pivot=j)
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def inverse(a) -> np.ndarray:
    """Matrix inverse over the trailing two axes."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise FactorizationError(f"inverse needs square trailing axes, got {a.shape}")
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"singular matrix: {exc}") from exc


def logdet(a) -> np.ndarray:
    """log |det A| over the trailing two axes; A must have positive determinant."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise FactorizationError(f"logdet needs square trailing axes, got {a.shape}")
    sign, ld = np.linalg.slogdet(a)
    if not np.all(sign > 0):
        raise NumericDomainError("logdet: determinant is not positive")
    return ld
