"""Dense complex-operator substrate.

Operators are plain ``numpy`` arrays of ``complex128``; the classes in this
module only add the bookkeeping that the rest of the package relies on
(subsystem dimension labels, outcome alphabets, ensemble weights) together
with validation of the defining invariants.  Every function is pure and every
value is immutable after construction, so everything here is safe to call
concurrently.

Conventions
-----------
* logarithms are base 2 throughout; entropies are in bits,
* eigenvalues below ``EIG_CUTOFF`` relative to the largest one are treated as
  zero (support convention for pseudo-inverses and entropies),
* operators are Hermitian-symmetrized, ``(A + A^dag)/2``, before any
  eigendecomposition to suppress accumulated asymmetric rounding,
* dimension labels travel with every state; there is no implicit reshaping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import InvariantError

DEFAULT_TOL = 1e-9
EIG_CUTOFF = 1e-12  # relative to the largest eigenvalue

#: outcome label appended by :func:`complete_sub_povm` for the deficit operator
COMPLETION_OUTCOME = "__rest__"


# ---------------------------------------------------------------------------
# basic matrix helpers
# ---------------------------------------------------------------------------

def as_operator(entries) -> np.ndarray:
    """Coerce input to a square complex128 matrix."""
    a = np.asarray(entries, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvariantError(f"expected a square matrix, got shape {a.shape}")
    return a


def hermitize(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^dag)/2."""
    return 0.5 * (a + a.conj().T)


def is_hermitian(a: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T)) <= tol)


def close(a: np.ndarray, b: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """Entrywise equality within an explicit absolute tolerance."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and bool(np.max(np.abs(a - b)) <= tol)


def tensor(*ops) -> np.ndarray:
    """Kronecker product of one or more operators.

    Dimension labels concatenate: an operator on dims ``(a,)`` tensored with
    one on dims ``(b,)`` lives on dims ``(a, b)``.
    """
    mats = [np.asarray(o, dtype=np.complex128) for o in ops]
    return reduce(np.kron, mats)


def partial_trace(op, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Reduced operator over the kept subsystems.

    Parameters
    ----------
    op : array, square, side length ``prod(dims)``
    dims : subsystem dimensions, in tensor order
    keep : indices (into ``dims``) of the subsystems to retain, in order

    Returns
    -------
    The reduced operator on ``prod(dims[k] for k in keep)`` dimensions (a
    scalar-valued 1x1 matrix when ``keep`` is empty).  Trace is preserved.
    """
    a = np.asarray(op, dtype=np.complex128)
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    total = int(np.prod(dims))
    if a.shape != (total, total):
        raise InvariantError(
            f"operator side {a.shape} does not match dims product {total}")
    keep = tuple(int(k) for k in keep)
    if any(k < 0 or k >= n for k in keep):
        raise InvariantError(f"keep indices {keep} out of range for {n} dims")
    traced = [i for i in range(n) if i not in keep]
    t = a.reshape(dims + dims)
    # contract each traced subsystem pairwise (row index against column index)
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + (t.ndim // 2))
    kept_dim = int(np.prod([dims[k] for k in keep])) if keep else 1
    t = t.reshape(kept_dim, kept_dim)
    if keep and list(keep) != sorted(keep):
        # reorder the kept subsystems to the requested order
        sorted_keep = sorted(keep)
        perm = [sorted_keep.index(k) for k in keep]
        kd = [dims[k] for k in sorted_keep]
        t = t.reshape(kd + kd)
        t = np.transpose(t, perm + [len(kd) + p for p in perm])
        t = t.reshape(kept_dim, kept_dim)
    return t


def permute_subsystems(op, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors of a square operator: new factor i is old factor order[i]."""
    a = np.asarray(op, dtype=np.complex128)
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(n)):
        raise InvariantError(f"order {order} is not a permutation of {n} subsystems")
    total = int(np.prod(dims))
    t = a.reshape(dims + dims)
    t = np.transpose(t, order + tuple(n + i for i in order))
    return t.reshape(total, total)


# ---------------------------------------------------------------------------
# spectra, norms, functional calculus
# ---------------------------------------------------------------------------

def eigh_desc(op: np.ndarray):
    """Eigendecomposition of a Hermitian operator, eigenvalues descending."""
    vals, vecs = np.linalg.eigh(hermitize(np.asarray(op, dtype=np.complex128)))
    idx = np.argsort(vals)[::-1]
    return vals[idx], vecs[:, idx]


def trace_norm(op) -> float:
    """Sum of singular values, ||A||_1 = Tr |A|."""
    a = np.asarray(op, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvariantError("trace_norm expects a square matrix")
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def operator_norm(op) -> float:
    """Largest singular value, ||A||_inf."""
    a = np.asarray(op, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvariantError("operator_norm expects a square matrix")
    if a.shape[0] == 0:
        return 0.0
    return float(np.max(np.linalg.svd(a, compute_uv=False)))


def matrix_sqrt_and_pinv_sqrt(op, cutoff: float = EIG_CUTOFF):
    """Square root and pseudo-inverse square root of a PSD operator.

    Eigenvalues at or below ``cutoff`` times the largest eigenvalue are
    treated as zero: they are dropped from the pseudo-inverse, so that
    ``sqrt(A) @ pinv_sqrt(A)`` is the projector onto the support of ``A``.

    Returns
    -------
    (sqrt, pinv_sqrt) : pair of arrays
    """
    a = np.asarray(op, dtype=np.complex128)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not is_hermitian(a, tol=1e-6 * scale):
        raise InvariantError("matrix square root expects a Hermitian operator")
    vals, vecs = eigh_desc(a)
    top = float(vals[0]) if vals.size else 0.0
    floor = cutoff * max(top, 0.0)
    if np.any(vals < -max(floor, DEFAULT_TOL)):
        raise InvariantError("matrix square root expects a PSD operator")
    vals = np.clip(vals, 0.0, None)
    root = np.sqrt(vals)
    inv_root = np.where(vals > floor, 1.0 / np.where(vals > floor, root, 1.0), 0.0)
    sqrt = (vecs * root) @ vecs.conj().T
    pinv = (vecs * inv_root) @ vecs.conj().T
    return sqrt, pinv


def von_neumann_entropy(rho, cutoff: float = EIG_CUTOFF) -> float:
    """Entropy -sum lambda_i log2 lambda_i over eigenvalues above the cutoff.

    Accepts a raw PSD array or a :class:`DensityOperator`.  Unnormalized
    inputs are allowed (the formula is applied to the eigenvalues as given);
    callers that need S of a conditional block normalize first.
    """
    a = rho.mat if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=np.complex128)
    vals = np.linalg.eigvalsh(hermitize(a))
    top = float(np.max(vals)) if vals.size else 0.0
    floor = cutoff * max(top, 0.0)
    pos = vals[vals > floor]
    if pos.size == 0:
        return 0.0
    return float(-np.sum(pos * np.log2(pos)))


def shannon_entropy(p, cutoff: float = EIG_CUTOFF) -> float:
    """Classical -sum p log2 p with the same cutoff convention."""
    v = np.asarray(p, dtype=float).ravel()
    top = float(np.max(v)) if v.size else 0.0
    pos = v[v > cutoff * max(top, 0.0)]
    if pos.size == 0:
        return 0.0
    return float(-np.sum(pos * np.log2(pos)))


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityOperator:
    """PSD unit-trace operator with subsystem dimension labels.

    Parameters
    ----------
    mat : square complex matrix
    dims : ordered subsystem dimensions; their product must equal the side
    tol : validation tolerance (Hermiticity, eigenvalue floor, trace)
    """
    mat: np.ndarray
    dims: tuple
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        m = as_operator(self.mat)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "dims", dims)
        if int(np.prod(dims)) != m.shape[0]:
            raise InvariantError(f"dims {dims} do not factor side {m.shape[0]}")
        if not is_hermitian(m, self.tol):
            raise InvariantError("density operator is not Hermitian within tol")
        vals = np.linalg.eigvalsh(hermitize(m))
        if float(np.min(vals)) < -self.tol:
            raise InvariantError(f"density operator has eigenvalue {np.min(vals):.3e} < -tol")
        if abs(float(np.real(np.trace(m))) - 1.0) > self.tol:
            raise InvariantError(f"density operator trace {np.trace(m):.12f} != 1 within tol")

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def marginal(self, keep: Iterable[int]) -> "DensityOperator":
        keep = tuple(keep)
        red = partial_trace(self.mat, self.dims, keep)
        return DensityOperator(hermitize(red), tuple(self.dims[k] for k in keep), tol=self.tol)

    def power(self, n: int) -> "DensityOperator":
        """n-fold tensor power, dims repeated copy by copy."""
        m = tensor(*([self.mat] * n)) if n > 1 else self.mat
        return DensityOperator(m, self.dims * n, tol=max(self.tol, 1e-8))


@dataclass(frozen=True)
class PureBipartiteState:
    """Unit vector on reference x system, remembering which state it purifies."""
    vector: np.ndarray
    dims: tuple  # (reference dim, system dim)
    target: DensityOperator | None = None
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.complex128).ravel()
        object.__setattr__(self, "vector", v)
        dims = (int(self.dims[0]), int(self.dims[1]))
        object.__setattr__(self, "dims", dims)
        if v.size != dims[0] * dims[1]:
            raise InvariantError("vector length does not match dims")
        if abs(np.linalg.norm(v) - 1.0) > self.tol:
            raise InvariantError("purification vector is not unit norm within tol")
        if self.target is not None:
            red = partial_trace(np.outer(v, v.conj()), dims, keep=(1,))
            if not close(red, self.target.mat, max(self.tol, 1e-10)):
                raise InvariantError("purification does not reduce to its target state")

    def projector(self) -> np.ndarray:
        return np.outer(self.vector, self.vector.conj())


def purify(rho: DensityOperator) -> PureBipartiteState:
    """Canonical eigen-purification.

    Writes rho = sum_i lambda_i |v_i><v_i| (eigenvalues descending) and returns
    |Psi> = sum_i sqrt(lambda_i) |i>_R |v_i>, with the reference first.  The
    reference dimension is the rank padded up to the system dimension, so the
    reference and system sides always have equal size.
    """
    vals, vecs = eigh_desc(rho.mat)
    vals = np.clip(vals, 0.0, None)
    d = rho.dim
    vec = np.zeros(d * d, dtype=np.complex128)
    for i in range(d):
        if vals[i] <= 0.0:
            continue
        vec[i * d:(i + 1) * d] = math.sqrt(float(vals[i])) * vecs[:, i]
    vec /= np.linalg.norm(vec)
    return PureBipartiteState(vec, (d, d), target=rho)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubPovm:
    """Indexed family of PSD operators summing to at most the identity."""
    outcomes: tuple
    operators: tuple
    tol: float = DEFAULT_TOL
    _complete: bool = field(default=False, repr=False)

    def __post_init__(self):
        outs = tuple(self.outcomes)
        ops = tuple(as_operator(o) for o in self.operators)
        object.__setattr__(self, "outcomes", outs)
        object.__setattr__(self, "operators", ops)
        if len(outs) != len(ops):
            raise InvariantError("outcomes and operators must be parallel")
        if len(set(outs)) != len(outs):
            raise InvariantError("duplicate outcome labels")
        if not ops:
            raise InvariantError("a measurement needs at least one outcome")
        d = ops[0].shape[0]
        for x, op in zip(outs, ops):
            if op.shape[0] != d:
                raise InvariantError("operators act on inconsistent dimensions")
            if not is_hermitian(op, self.tol):
                raise InvariantError(f"operator for outcome {x!r} is not Hermitian")
            if float(np.min(np.linalg.eigvalsh(hermitize(op)))) < -self.tol:
                raise InvariantError(f"operator for outcome {x!r} is not PSD within tol")
        gap = np.eye(d) - self.total()
        lo = float(np.min(np.linalg.eigvalsh(hermitize(gap))))
        if lo < -self.tol:
            raise InvariantError(f"operator sum exceeds identity by {-lo:.3e}")
        if self._complete and float(np.max(np.abs(gap))) > self.tol:
            raise InvariantError("operators do not resolve the identity within tol")

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    def op(self, outcome) -> np.ndarray:
        return self.operators[self.outcomes.index(outcome)]

    def total(self) -> np.ndarray:
        return np.sum(self.operators, axis=0)

    def items(self):
        return zip(self.outcomes, self.operators)


class Povm(SubPovm):
    """SubPovm whose operators resolve the identity."""

    def __init__(self, outcomes, operators, tol: float = DEFAULT_TOL):
        super().__init__(tuple(outcomes), tuple(operators), tol, _complete=True)


def complete_sub_povm(m: SubPovm, label=COMPLETION_OUTCOME) -> Povm:
    """Complete a sub-POVM by appending the deficit operator I - sum.

    The deficit must be PSD within tolerance (it is, for any valid SubPovm);
    tiny negative eigenvalues from rounding are clipped.
    """
    gap = hermitize(np.eye(m.dim) - m.total())
    lo = float(np.min(np.linalg.eigvalsh(gap)))
    if lo < -m.tol:
        raise InvariantError(f"completion operator not PSD: min eigenvalue {lo:.3e}")
    if lo < 0.0:
        vals, vecs = eigh_desc(gap)
        gap = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    if label in m.outcomes:
        raise InvariantError(f"completion label {label!r} collides with an outcome")
    return Povm(m.outcomes + (label,), m.operators + (gap,), tol=max(m.tol, 1e-8))


def tensor_povm(a: SubPovm, b: SubPovm) -> SubPovm:
    """Product measurement with paired outcome labels (x, y)."""
    outs = tuple((x, y) for x in a.outcomes for y in b.outcomes)
    ops = tuple(tensor(a.op(x), b.op(y)) for x in a.outcomes for y in b.outcomes)
    cls = Povm if (isinstance(a, Povm) and isinstance(b, Povm)) else SubPovm
    tol = max(a.tol, b.tol, 1e-8)
    if cls is Povm:
        return Povm(outs, ops, tol=tol)
    return SubPovm(outs, ops, tol=tol)


# ---------------------------------------------------------------------------
# ensembles and entropic functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ensemble:
    """Weighted family of density operators on a common dimension.

    ``outcomes`` optionally labels the members (canonical ensembles keep the
    POVM outcome labels); ``dropped`` records labels removed for having weight
    below the cutoff.
    """
    weights: np.ndarray
    states: tuple
    outcomes: tuple | None = None
    dropped: tuple = ()
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "weights", w)
        sts = tuple(self.states)
        object.__setattr__(self, "states", sts)
        if len(sts) != w.size:
            raise InvariantError("weights and states must be parallel")
        if self.outcomes is not None:
            object.__setattr__(self, "outcomes", tuple(self.outcomes))
            if len(self.outcomes) != w.size:
                raise InvariantError("outcomes and weights must be parallel")
        if w.size == 0:
            raise InvariantError("empty ensemble")
        if float(np.min(w)) < -self.tol:
            raise InvariantError("negative ensemble weight")
        if abs(float(np.sum(w)) - 1.0) > self.tol:
            raise InvariantError(f"ensemble weights sum to {np.sum(w)} != 1")
        d = sts[0].dim
        for s in sts:
            if not isinstance(s, DensityOperator) or s.dim != d:
                raise InvariantError("ensemble states must be DensityOperators of common dim")

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def average(self) -> np.ndarray:
        return np.sum([w * s.mat for w, s in zip(self.weights, self.states)], axis=0)

    def state(self, outcome) -> DensityOperator:
        if self.outcomes is None:
            raise InvariantError("ensemble has no outcome labels")
        return self.states[self.outcomes.index(outcome)]

    def weight(self, outcome) -> float:
        if self.outcomes is None:
            raise InvariantError("ensemble has no outcome labels")
        return float(self.weights[self.outcomes.index(outcome)])


def quantum_mutual_information(rho: DensityOperator, cut: Iterable[int]) -> float:
    """I(A;B) = S(A) + S(B) - S(AB) for the bipartition selected by ``cut``.

    ``cut`` lists the subsystem indices forming the first side; the rest form
    the second.
    """
    cut = tuple(sorted(set(int(i) for i in cut)))
    rest = tuple(i for i in range(len(rho.dims)) if i not in cut)
    if not cut or not rest:
        raise InvariantError("cut must be a proper nonempty bipartition")
    sa = von_neumann_entropy(partial_trace(rho.mat, rho.dims, cut))
    sb = von_neumann_entropy(partial_trace(rho.mat, rho.dims, rest))
    return sa + sb - von_neumann_entropy(rho.mat)


def holevo_information(ens: Ensemble) -> float:
    """chi = S(sum_i p_i rho_i) - sum_i p_i S(rho_i), nonnegative."""
    avg = von_neumann_entropy(ens.average())
    cond = float(np.sum([w * von_neumann_entropy(s.mat)
                         for w, s in zip(ens.weights, ens.states)]))
    return avg - cond
