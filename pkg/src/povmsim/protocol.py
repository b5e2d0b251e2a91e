"""Finite-blocklength random-coding simulation of distributed measurements.

The pipeline mirrors the achievability construction: draw codebooks from the
pruned typical distributions, rescale the compressed sequence operators into
per-sender approximating sub-POVMs, bin their outcomes uniformly, decode bin
pairs back to the unique jointly typical codeword pair, and push the decoded
pairs through the integration channel.  The resulting joint family is scored
against the tensor-power target measurement.

Scoring never materializes the simulated operators in full: every trace norm
is evaluated inside the support of the input state, where a cell operator
Gamma_i x Gamma_j turns into an r^n x r^n sandwich (r the state's rank).
Everything is deterministic given (params, seed); randomness flows through
counter-based substreams, one per random object.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Mapping

import numpy as np

from .errors import InvariantError
from .measurement import (
    SeparableDecomposition,
    canonical_ensemble,
    compose_decomposition,
    faithfulness_distance,
)
from .operators import (
    DEFAULT_TOL,
    EIG_CUTOFF,
    DensityOperator,
    SubPovm,
    eigh_desc,
    hermitize,
    matrix_sqrt_and_pinv_sqrt,
    operator_norm,
    partial_trace,
    tensor,
    tensor_povm,
    trace_norm,
)
from .typicality import (
    PrunedDistribution,
    TypicalSet,
    _check_dim_cap,
    _check_seq_cap,
    all_sequences,
    build_projector_bundle,
    lambda_operators,
    pruned_distribution,
    typical_set,
)

# substream tags: every random object owns one counter-based stream
STREAM_CODEBOOK_A = 0
STREAM_CODEBOOK_B = 1
STREAM_BINS_A = 2
STREAM_BINS_B = 3
STREAM_PACKING_A = 4
STREAM_PACKING_B = 5
STREAM_SOFT = 6

# out-of-alphabet sentinel letter, used when every sequence is typical;
# its image under any integration is the all-void string
VOID_LETTER = "__void__"

# diagnostics that enumerate pairs of typical sets stop above this count
ENUM_CAP = 4096


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one random object of one trial."""
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _count_for_rate(n: int, rate: float) -> int:
    return max(1, round(2.0 ** (n * rate)))


# ---------------------------------------------------------------------------
# parameters and random protocol objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolParams:
    """Knobs of one finite-blocklength protocol.

    Rt1/Rt2 are the codebook (covering) rates, R1/R2 the bin (transmission)
    rates, N1/N2 the common-randomness sizes per sender.  Counts are
    2^{n rate} rounded to the nearest integer and floored at 1.
    """
    n: int
    Rt1: float
    Rt2: float
    R1: float
    R2: float
    N1: int = 1
    N2: int = 1
    eta: float = 0.1
    delta: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvariantError("blocklength must be at least 1")
        if not (self.Rt1 >= self.R1 >= 0.0):
            raise InvariantError("need Rt1 >= R1 >= 0")
        if not (self.Rt2 >= self.R2 >= 0.0):
            raise InvariantError("need Rt2 >= R2 >= 0")
        if self.N1 < 1 or self.N2 < 1:
            raise InvariantError("common-randomness sizes must be at least 1")
        if not 0.0 < self.eta < 1.0:
            raise InvariantError("eta must lie in (0, 1)")
        if self.delta <= 0.0:
            raise InvariantError("delta must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvariantError("seed must be a nonnegative integer")

    @property
    def L1(self) -> int:
        return _count_for_rate(self.n, self.Rt1)

    @property
    def L2(self) -> int:
        return _count_for_rate(self.n, self.Rt2)

    @property
    def bins1(self) -> int:
        return _count_for_rate(self.n, self.R1)

    @property
    def bins2(self) -> int:
        return _count_for_rate(self.n, self.R2)


@dataclass(frozen=True)
class Codebook:
    """Per-mu codeword lists for both senders, duplicates kept."""
    u_lists: tuple
    v_lists: tuple

    def __post_init__(self):
        object.__setattr__(self, "u_lists",
                           tuple(tuple(tuple(s) for s in lst) for lst in self.u_lists))
        object.__setattr__(self, "v_lists",
                           tuple(tuple(tuple(s) for s in lst) for lst in self.v_lists))

    def counts_u(self, mu: int) -> Counter:
        return Counter(self.u_lists[mu])

    def counts_v(self, mu: int) -> Counter:
        return Counter(self.v_lists[mu])


def generate_codebooks(params: ProtocolParams, pruned_U: PrunedDistribution,
                       pruned_V: PrunedDistribution) -> Codebook:
    """Draw the per-mu codeword lists from the pruned typical distributions."""
    u_lists = tuple(
        tuple(pruned_U.sample(substream(params.seed, STREAM_CODEBOOK_A, mu), params.L1))
        for mu in range(params.N1))
    v_lists = tuple(
        tuple(pruned_V.sample(substream(params.seed, STREAM_CODEBOOK_B, mu), params.L2))
        for mu in range(params.N2))
    return Codebook(u_lists, v_lists)


@dataclass(frozen=True)
class BinMap:
    """Uniform random bin assignment over the full typical set, one per mu."""
    typical: TypicalSet
    assignments: tuple
    nbins: int

    def __post_init__(self):
        object.__setattr__(self, "assignments",
                           tuple(dict(a) for a in self.assignments))
        members = set(self.typical.members)
        for a in self.assignments:
            if set(a) != members:
                raise InvariantError("bin assignment must cover the typical set exactly")
            for b in a.values():
                if not 1 <= b <= self.nbins:
                    raise InvariantError(f"bin index {b} outside [1, {self.nbins}]")

    def bin_of(self, mu: int, seq) -> int:
        return self.assignments[mu][tuple(seq)]

    def spread(self) -> int:
        """Largest minus smallest bin occupancy across all mu, empties included."""
        worst = 0
        for a in self.assignments:
            sizes = np.zeros(self.nbins, dtype=int)
            for b in a.values():
                sizes[b - 1] += 1
            worst = max(worst, int(sizes.max() - sizes.min()))
        return worst


def generate_bin_maps(params: ProtocolParams, typical_A: TypicalSet,
                      typical_B: TypicalSet):
    """Independent uniform bin indices for every typical sequence, per mu."""
    def draw(tag, tset, n_mu, nbins):
        assignments = []
        for mu in range(n_mu):
            rng = substream(params.seed, tag, mu)
            idx = rng.integers(1, nbins + 1, size=len(tset.members))
            assignments.append({seq: int(b) for seq, b in zip(tset.members, idx)})
        return BinMap(tset, tuple(assignments), nbins)

    return (draw(STREAM_BINS_A, typical_A, params.N1, params.bins1),
            draw(STREAM_BINS_B, typical_B, params.N2, params.bins2))


# ---------------------------------------------------------------------------
# approximating operators, binning, decoding
# ---------------------------------------------------------------------------

def _kron_power(mat: np.ndarray, n: int) -> np.ndarray:
    return reduce(np.kron, [mat] * n) if n > 1 else np.asarray(mat)


def build_approx_operators(codebook: Codebook, rho: DensityOperator, ens, bundle,
                           params: ProtocolParams, side: str = "A"):
    """Approximating sub-POVM candidates, one family per common-randomness index.

    Each drawn codeword value receives
        gamma * pinv_sqrt(rho^{(x)n}) Lambda_seq pinv_sqrt(rho^{(x)n})
    with gamma = count * (1 - eps) / ((1 + eta) * L); values never drawn get
    the zero operator and are simply absent from the family.
    """
    if side not in ("A", "B"):
        raise InvariantError("side must be 'A' or 'B'")
    lists = codebook.u_lists if side == "A" else codebook.v_lists
    L = params.L1 if side == "A" else params.L2
    eps = bundle.params["eps"]
    _, pinv1 = matrix_sqrt_and_pinv_sqrt(rho.mat)
    pinv = _kron_power(pinv1, params.n)
    scale = (1.0 - eps) / ((1.0 + params.eta) * L)
    families = []
    for lst in lists:
        fam = {}
        for seq, c in Counter(lst).items():
            _, lam = lambda_operators(rho, ens, seq, bundle)
            fam[seq] = hermitize((c * scale) * (pinv @ lam @ pinv))
        families.append(fam)
    return families


def check_sub_povm(ops, tol: float = DEFAULT_TOL):
    """Whether a family of PSD operators sums below the identity.

    Returns (valid, excess) with excess = max(0, lambda_max(sum) - 1); the
    empty family is vacuously valid.
    """
    ops = list(ops)
    if not ops:
        return True, 0.0
    total = ops[0].astype(np.complex128, copy=True)
    for op in ops[1:]:
        total += op
    lmax = float(eigh_desc(hermitize(total))[0][0])
    excess = max(0.0, lmax - 1.0)
    return excess <= tol, excess


def bin_povm(ops: Mapping, assignment: Mapping, nbins: int) -> dict:
    """Merge operators whose outcomes share a bin; the total sum is unchanged.

    ``assignment`` must map every outcome of ``ops`` to a bin in [1, nbins].
    Empty bins get explicit zero operators so decoder cells stay addressable.
    """
    dim = None
    binned = {}
    for seq, op in ops.items():
        b = assignment.get(tuple(seq))
        if b is None:
            raise InvariantError(f"operator at {seq} has no bin assignment")
        if not 1 <= b <= nbins:
            raise InvariantError(f"bin index {b} outside [1, {nbins}]")
        dim = op.shape[0]
        if b in binned:
            binned[b] = binned[b] + op
        else:
            binned[b] = op.astype(np.complex128, copy=True)
    if dim is not None:
        zero = np.zeros((dim, dim), dtype=np.complex128)
        for b in range(1, nbins + 1):
            binned.setdefault(b, zero)
    return {b: binned[b] for b in sorted(binned)}


def sentinel_sequence(tset: TypicalSet) -> tuple:
    """Lexicographically smallest atypical sequence, in alphabet order.

    Falls back to the reserved out-of-alphabet letter when every sequence is
    typical, which keeps the choice deterministic.
    """
    for row in all_sequences(len(tset.alphabet), tset.n):
        seq = tuple(tset.alphabet[i] for i in row)
        if seq not in tset:
            return seq
    return (VOID_LETTER,) * tset.n


@dataclass(frozen=True)
class DecoderTable:
    """Bin-pair decoding tables, one per (mu1, mu2).

    ``cells`` holds only the uniquely decodable cells, keyed
    (mu1, mu2, i, j); every other cell, and any cell with a zero bin index,
    decodes to the sentinel pair.
    """
    cells: Mapping
    sentinel: tuple
    bins1: int
    bins2: int
    n_mu: tuple
    collisions: int
    occupied: int

    def __post_init__(self):
        object.__setattr__(self, "cells", dict(self.cells))
        object.__setattr__(self, "sentinel",
                           (tuple(self.sentinel[0]), tuple(self.sentinel[1])))

    def lookup(self, mu1: int, mu2: int, i: int, j: int) -> tuple:
        if i == 0 or j == 0:
            return self.sentinel
        return self.cells.get((mu1, mu2, i, j), self.sentinel)


def build_decoder(codebook: Codebook, binmaps, joint_typical: TypicalSet,
                  sentinel: tuple | None = None) -> DecoderTable:
    """Populate each cell with its unique jointly typical codeword pair.

    Candidate pairs are the distinct codeword values of the two mu-indexed
    books whose zipped letter pairs are jointly typical; a cell whose
    candidate set is empty or holds several distinct pairs decodes to the
    sentinel.
    """
    bm1, bm2 = binmaps
    if sentinel is None:
        sentinel = (sentinel_sequence(bm1.typical), sentinel_sequence(bm2.typical))
    cell_pairs = {}
    for mu1, ulist in enumerate(codebook.u_lists):
        u_distinct = list(dict.fromkeys(ulist))  # dedupe, draw order kept
        for mu2, vlist in enumerate(codebook.v_lists):
            v_distinct = list(dict.fromkeys(vlist))
            for u in u_distinct:
                i = bm1.bin_of(mu1, u)
                for v in v_distinct:
                    if tuple(zip(u, v)) in joint_typical:
                        j = bm2.bin_of(mu2, v)
                        cell_pairs.setdefault((mu1, mu2, i, j), []).append((u, v))
    cells = {}
    collisions = 0
    for key, pairs in cell_pairs.items():
        distinct = list(dict.fromkeys(pairs))
        if len(distinct) == 1:
            cells[key] = distinct[0]
        else:
            collisions += 1
    return DecoderTable(cells, tuple(sentinel), bm1.nbins, bm2.nbins,
                        (len(codebook.u_lists), len(codebook.v_lists)),
                        collisions, len(cell_pairs))


# ---------------------------------------------------------------------------
# the simulated joint measurement
# ---------------------------------------------------------------------------

def _z_images(pair, integration: SeparableDecomposition):
    """(z-string, weight) pairs the integration assigns to a decoded pair.

    Deterministic integrations yield a single string with weight 1; a pair
    carrying the reserved letter maps to the all-void string.
    """
    u, v = pair
    n = len(u)
    if VOID_LETTER in u or VOID_LETTER in v:
        yield (VOID_LETTER,) * n, 1.0
        return
    zalpha = integration.z_alphabet
    supports = []
    for ui, vi in zip(u, v):
        row = integration.row(ui, vi)
        supports.append([(zalpha[k], float(row[k])) for k in np.flatnonzero(row > 0.0)])
    for combo in itertools.product(*supports):
        weight = 1.0
        for _, w in combo:
            weight *= w
        yield tuple(z for z, _ in combo), weight


def _image_weight_total(pair, integration: SeparableDecomposition) -> float:
    u, v = pair
    if VOID_LETTER in u or VOID_LETTER in v:
        return 1.0
    total = 1.0
    for ui, vi in zip(u, v):
        row = integration.row(ui, vi)
        total *= float(np.sum(row[row > 0.0]))
    return total


def overall_povm(binned_A, binned_B, decoder: DecoderTable,
                 integration: SeparableDecomposition) -> dict:
    """Average the decoded cell operators into the simulated joint family.

    Cells run over bin indices i, j >= 1; each contributes its operator
    Gamma_i x Gamma_j to the strings the integration assigns to the decoded
    pair.  This materializes one full operator per output string, which is
    fine at desk scale; faithfulness_trial scores through rank-reduced
    sandwiches instead and never calls it.
    """
    N1, N2 = decoder.n_mu
    w_mu = 1.0 / (N1 * N2)
    acc = {}
    for mu1 in range(N1):
        for mu2 in range(N2):
            for i in range(1, decoder.bins1 + 1):
                ga = binned_A[mu1][i]
                for j in range(1, decoder.bins2 + 1):
                    cell = w_mu * np.kron(ga, binned_B[mu2][j])
                    for z, w in _z_images(decoder.lookup(mu1, mu2, i, j), integration):
                        if z in acc:
                            acc[z] = acc[z] + w * cell
                        else:
                            acc[z] = w * cell
    return acc


# ---------------------------------------------------------------------------
# rank-reduced sandwich frame
# ---------------------------------------------------------------------------

def _support_factor(rho_AB: DensityOperator) -> np.ndarray:
    """d x r factor C with rho = C C^dag, columns scaled eigenvectors."""
    vals, vecs = eigh_desc(rho_AB.mat)
    top = max(float(vals[0]), 0.0)
    keep = vals > EIG_CUTOFF * max(top, 1e-300)
    return vecs[:, keep] * np.sqrt(np.clip(vals[keep], 0.0, None))


def _side_major_rows(c_copy: np.ndarray, dA: int, dB: int, n: int) -> np.ndarray:
    """Reorder kron-power rows from copy-major (A1 B1 A2 B2 ...) to side-major."""
    rn = c_copy.shape[1]
    t = c_copy.reshape([dA, dB] * n + [rn])
    order = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)) + [2 * n]
    return np.ascontiguousarray(np.transpose(t, order)).reshape(
        (dA ** n) * (dB ** n), rn)


def _left_factor(op: np.ndarray, cperm3: np.ndarray) -> np.ndarray:
    # conj((Op x I) C) for Hermitian Op, ready to close against a right factor
    return np.tensordot(op, cperm3, axes=(1, 0)).conj()


def _right_factor(op: np.ndarray, cperm3: np.ndarray) -> np.ndarray:
    # (I x Op) C
    return np.tensordot(op, cperm3, axes=(1, 1)).transpose(1, 0, 2)


def _close_sandwich(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    # C^dag (X x Y) C from the two factors; X, Y must be Hermitian
    return np.tensordot(left, right, axes=([0, 1], [0, 1]))


def _tn(block: np.ndarray) -> float:
    """Trace norm of a small Hermitian block."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(block)))))


def _kron_power_blocks(blocks) -> np.ndarray:
    return reduce(np.kron, blocks) if len(blocks) > 1 else blocks[0]


def _pair_table(rho_AB: DensityOperator, d: SeparableDecomposition):
    """Outcome-pair alphabet and its joint distribution on the input state."""
    pairs, probs = [], []
    for u, lu in d.povm_A.items():
        for v, lv in d.povm_B.items():
            pairs.append((u, v))
            probs.append(max(0.0, float(np.real(np.trace(tensor(lu, lv) @ rho_AB.mat)))))
    return tuple(pairs), np.asarray(probs, dtype=float)


# ---------------------------------------------------------------------------
# the faithfulness trial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialReport:
    """Everything one protocol realization produced.

    Validity tuples carry one entry per common-randomness index and side.
    resummation_error measures how far the simulated family's total strays
    from the product of the averaged per-sender binned totals; it is taken
    cell by cell on the full matrices up to dimension 2048 and per mu pair
    above that.  Diagnostics hold gamma/zeta statistics, bin spreads, the
    leakage split, and the covering/binning error split (s1, s2) when the
    typical sets are small enough to enumerate in pairs.
    """
    params: ProtocolParams
    faithfulness_G: float
    sub_povm_valid_A: tuple
    sub_povm_valid_B: tuple
    excess_A: tuple
    excess_B: tuple
    collisions: int
    occupied: int
    resummation_error: float
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.faithfulness_G < 0.0:
            raise InvariantError("faithfulness distance cannot be negative")
        object.__setattr__(self, "diagnostics", dict(self.diagnostics))

    @property
    def sub_povm_valid(self) -> bool:
        return all(self.sub_povm_valid_A) and all(self.sub_povm_valid_B)

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.occupied if self.occupied else 0.0


def _bypass_report(params: ProtocolParams, rho_AB: DensityOperator,
                   d: SeparableDecomposition) -> TrialReport:
    # score the target against itself through two independent sandwich routes:
    # full tensor-power conjugation vs letterwise factorized blocks
    n = params.n
    target = compose_decomposition(d)
    _check_seq_cap(len(target.outcomes), n)
    c1 = _support_factor(rho_AB)
    c_copy = _kron_power(c1, n)
    blocks1 = {z: c1.conj().T @ target.op(z) @ c1 for z in target.outcomes}
    probs1 = {z: max(0.0, float(np.real(np.trace(blocks1[z]))))
              for z in target.outcomes}
    g_val = 0.0
    support_mass = 0.0
    covered = 0.0
    for zseq in itertools.product(target.outcomes, repeat=n):
        full = tensor(*(target.op(z) for z in zseq))
        m1 = c_copy.conj().T @ full @ c_copy
        m2 = _kron_power_blocks([blocks1[z] for z in zseq])
        g_val += _tn(m2 - m1)
        support_mass += float(np.prod([probs1[z] for z in zseq]))
        covered += float(np.real(np.trace(m1)))
    g_val += max(0.0, 1.0 - support_mass) + max(0.0, 1.0 - covered)
    return TrialReport(params, g_val, (), (), (), (), 0, 0, 0.0,
                       {"bypass": True, "support_mass": support_mass})


def _gamma_values(lists, eps: float, eta: float, L: int):
    scale = (1.0 - eps) / ((1.0 + eta) * L)
    vals = []
    for lst in lists:
        for c in Counter(lst).values():
            vals.append(c * scale)
    return vals


def _stats(prefix: str, vals) -> dict:
    arr = np.asarray(vals, dtype=float)
    return {f"{prefix}_mean": float(arr.mean()),
            f"{prefix}_min": float(arr.min()),
            f"{prefix}_max": float(arr.max())}


RESUM_FULL_DIM = 2048  # above this, check the resummation per mu pair only


def _resummation_error(binned_A, binned_B, decoder: DecoderTable,
                       integration: SeparableDecomposition, dim: int) -> float:
    N1, N2 = decoder.n_mu
    w_mu = 1.0 / (N1 * N2)
    sums_A = []
    for fam in binned_A:
        total = np.zeros_like(next(iter(fam.values())))
        for b in sorted(fam):
            total = total + fam[b]
        sums_A.append(total)
    sums_B = []
    for fam in binned_B:
        total = np.zeros_like(next(iter(fam.values())))
        for b in sorted(fam):
            total = total + fam[b]
        sums_B.append(total)
    product = np.kron(sum(sums_A) / N1, sum(sums_B) / N2)
    acc = np.zeros((dim, dim), dtype=np.complex128)
    if dim <= RESUM_FULL_DIM:
        for mu1 in range(N1):
            for mu2 in range(N2):
                for i in range(1, decoder.bins1 + 1):
                    ga = binned_A[mu1][i]
                    for j in range(1, decoder.bins2 + 1):
                        w = _image_weight_total(
                            decoder.lookup(mu1, mu2, i, j), integration)
                        acc += (w_mu * w) * np.kron(ga, binned_B[mu2][j])
    else:
        for mu1 in range(N1):
            for mu2 in range(N2):
                acc += w_mu * np.kron(sums_A[mu1], sums_B[mu2])
    return float(np.max(np.abs(acc - product)))


def faithfulness_trial(params: ProtocolParams, rho_AB: DensityOperator,
                       d: SeparableDecomposition, bypass: bool = False) -> TrialReport:
    """Run one random protocol realization and score it against the target.

    The score is the faithfulness distance between the tensor-power composed
    measurement and the simulated joint family on the tensor-power state: a
    sum of per-string sandwich trace norms, plus the target mass sitting on
    strings the simulation never emits, plus the simulated family's leakage.
    With ``bypass`` the protocol is skipped and the target is scored against
    itself through an independent evaluation route.

    Memory scales with rank(rho_AB)^{2n}; the dimension cap bounds the rest.
    """
    dA, dB = d.dims
    n = params.n
    _check_dim_cap(dA * dB, n)
    if rho_AB.dims != (dA, dB):
        raise InvariantError("state and decomposition dimensions disagree")
    if bypass:
        return _bypass_report(params, rho_AB, d)

    rho_A = rho_AB.marginal((0,))
    rho_B = rho_AB.marginal((1,))
    ens_A = canonical_ensemble(rho_A, d.povm_A)
    ens_B = canonical_ensemble(rho_B, d.povm_B)
    bundle_A = build_projector_bundle(rho_A, ens_A, n, params.delta)
    bundle_B = build_projector_bundle(rho_B, ens_B, n, params.delta)

    codebook = generate_codebooks(params, bundle_A.pruned, bundle_B.pruned)
    fams_A = build_approx_operators(codebook, rho_A, ens_A, bundle_A, params, side="A")
    fams_B = build_approx_operators(codebook, rho_B, ens_B, bundle_B, params, side="B")
    checks_A = [check_sub_povm(f.values()) for f in fams_A]
    checks_B = [check_sub_povm(f.values()) for f in fams_B]

    binmaps = generate_bin_maps(params, bundle_A.typical, bundle_B.typical)
    binned_A = [bin_povm(fam, binmaps[0].assignments[mu], params.bins1)
                for mu, fam in enumerate(fams_A)]
    binned_B = [bin_povm(fam, binmaps[1].assignments[mu], params.bins2)
                for mu, fam in enumerate(fams_B)]

    pair_alphabet, pair_probs = _pair_table(rho_AB, d)
    joint = typical_set(pair_probs, n, params.delta, alphabet=pair_alphabet)
    decoder = build_decoder(codebook, binmaps, joint)

    # sandwich frame on the support of the tensor-power state
    c1 = _support_factor(rho_AB)
    c_perm = _side_major_rows(_kron_power(c1, n), dA, dB, n)
    cperm3 = c_perm.reshape(dA ** n, dB ** n, c_perm.shape[1])

    # decoded-pair blocks: one r^n sandwich per cell, averaged over mu pairs
    N1, N2 = params.N1, params.N2
    w_mu = 1.0 / (N1 * N2)
    lefts = [{i: _left_factor(binned_A[mu1][i], cperm3)
              for i in range(1, params.bins1 + 1)} for mu1 in range(N1)]
    rights = [{j: _right_factor(binned_B[mu2][j], cperm3)
               for j in range(1, params.bins2 + 1)} for mu2 in range(N2)]
    pair_blocks = {}
    covered = 0.0
    for mu1 in range(N1):
        for mu2 in range(N2):
            for i in range(1, params.bins1 + 1):
                li = lefts[mu1][i]
                for j in range(1, params.bins2 + 1):
                    s_cell = w_mu * _close_sandwich(li, rights[mu2][j])
                    covered += float(np.real(np.trace(s_cell)))
                    pair = decoder.lookup(mu1, mu2, i, j)
                    if pair in pair_blocks:
                        pair_blocks[pair] = pair_blocks[pair] + s_cell
                    else:
                        pair_blocks[pair] = s_cell

    # push decoded pairs through the integration
    m1_blocks = {}
    for pair, block in pair_blocks.items():
        for z, w in _z_images(pair, d):
            if z in m1_blocks:
                m1_blocks[z] = m1_blocks[z] + w * block
            else:
                m1_blocks[z] = w * block

    # letterwise target blocks of the composed measurement
    target = compose_decomposition(d)
    tblocks1 = {z: c1.conj().T @ target.op(z) @ c1 for z in target.outcomes}
    tprobs1 = {z: max(0.0, float(np.real(np.trace(tblocks1[z]))))
               for z in target.outcomes}

    g_val = 0.0
    support_mass = 0.0
    for z, block in m1_blocks.items():
        if VOID_LETTER in z:
            g_val += _tn(block)
            continue
        m2 = _kron_power_blocks([tblocks1[s] for s in z])
        g_val += _tn(m2 - block)
        support_mass += float(np.prod([tprobs1[s] for s in z]))
    leakage = max(0.0, 1.0 - covered)
    missed = max(0.0, 1.0 - support_mass)
    g_val += missed + leakage

    diagnostics = {
        "eps_A": float(bundle_A.params["eps"]),
        "eps_B": float(bundle_B.params["eps"]),
        "bin_spread_A": binmaps[0].spread(),
        "bin_spread_B": binmaps[1].spread(),
        "leakage": leakage,
        "missed_mass": missed,
        "support_mass": support_mass,
    }
    diagnostics.update(_stats("gamma", _gamma_values(
        codebook.u_lists, bundle_A.params["eps"], params.eta, params.L1)))
    diagnostics.update(_stats("zeta", _gamma_values(
        codebook.v_lists, bundle_B.params["eps"], params.eta, params.L2)))

    n_pairs = len(bundle_A.typical.members) * len(bundle_B.typical.members)
    if n_pairs <= ENUM_CAP:
        s1, s2 = _error_split(d, fams_A, fams_B, bundle_A, bundle_B,
                              pair_alphabet, pair_probs, c1, cperm3, w_mu,
                              pair_blocks)
        diagnostics["s1"] = s1
        diagnostics["s2"] = s2

    resum = _resummation_error(binned_A, binned_B, decoder, d, (dA * dB) ** n)
    return TrialReport(params, g_val,
                       tuple(v for v, _ in checks_A),
                       tuple(v for v, _ in checks_B),
                       tuple(e for _, e in checks_A),
                       tuple(e for _, e in checks_B),
                       decoder.collisions, decoder.occupied, resum, diagnostics)


def _error_split(d, fams_A, fams_B, bundle_A, bundle_B, pair_alphabet,
                 pair_probs, c1, cperm3, w_mu, pair_blocks):
    """Covering/binning split of the trial error, reported not asserted.

    s1 scores the mu-averaged unbinned product family against the target on
    all typical sequence pairs; s2 is the norm-sum gap between that family
    and the decoded blocks.
    """
    int_blocks = {}
    int_covered = 0.0
    for fam_a in fams_A:
        la = {u: _left_factor(op, cperm3) for u, op in fam_a.items()}
        for fam_b in fams_B:
            for v, op_b in fam_b.items():
                rb = _right_factor(op_b, cperm3)
                for u, lu in la.items():
                    blk = w_mu * _close_sandwich(lu, rb)
                    int_covered += float(np.real(np.trace(blk)))
                    key = (u, v)
                    if key in int_blocks:
                        int_blocks[key] = int_blocks[key] + blk
                    else:
                        int_blocks[key] = blk

    ppair = dict(zip(pair_alphabet, pair_probs))
    tpair1 = {(u, v): c1.conj().T @ tensor(d.povm_A.op(u), d.povm_B.op(v)) @ c1
              for (u, v) in pair_alphabet}
    s1 = 0.0
    joint_mass = 0.0
    for useq in bundle_A.typical.members:
        for vseq in bundle_B.typical.members:
            letters = list(zip(useq, vseq))
            t_blk = _kron_power_blocks([tpair1[p] for p in letters])
            blk = int_blocks.get((useq, vseq))
            s1 += _tn(t_blk - blk) if blk is not None else _tn(t_blk)
            joint_mass += float(np.prod([ppair[p] for p in letters]))
    s1 += max(0.0, 1.0 - joint_mass) + max(0.0, 1.0 - int_covered)

    s2 = 0.0
    keys = list(int_blocks) + [p for p in pair_blocks if p not in int_blocks]
    for p in keys:
        a = int_blocks.get(p)
        b = pair_blocks.get(p)
        if a is None:
            s2 += _tn(b)
        elif b is None:
            s2 += _tn(a)
        else:
            s2 += _tn(a - b)
    return s1, s2


# ---------------------------------------------------------------------------
# standalone checks
# ---------------------------------------------------------------------------

def mutual_covering_check(rho_AB: DensityOperator, sub_A: SubPovm, sub_B: SubPovm,
                          target_A: SubPovm, target_B: SubPovm):
    """Faithfulness of two marginal approximations and of their product.

    Returns (F_A, F_B, F_joint); the joint error never exceeds the sum of
    the marginal errors.
    """
    rho_A = rho_AB.marginal((0,))
    rho_B = rho_AB.marginal((1,))
    f_a = faithfulness_distance(rho_A, target_A, sub_A)
    f_b = faithfulness_distance(rho_B, target_B, sub_B)
    f_joint = faithfulness_distance(rho_AB, tensor_povm(target_A, target_B),
                                    tensor_povm(sub_A, sub_B))
    return f_a, f_b, f_joint


def separate_check(rho_AB: DensityOperator, gamma_A: np.ndarray, povm_B: SubPovm):
    """Both sides of the product-sandwich reduction identity.

    Returns (lhs, rhs) where lhs sums the joint sandwich norms of
    gamma_A x Lambda_y and rhs is the single-sided sandwich norm of gamma_A
    on the A marginal; they agree whenever povm_B resolves the identity.
    """
    sq_ab, _ = matrix_sqrt_and_pinv_sqrt(rho_AB.mat)
    lhs = 0.0
    for _, op in povm_B.items():
        lhs += trace_norm(sq_ab @ tensor(gamma_A, op) @ sq_ab)
    rho_A = rho_AB.marginal((0,))
    sq_a, _ = matrix_sqrt_and_pinv_sqrt(rho_A.mat)
    rhs = trace_norm(sq_a @ np.asarray(gamma_A, dtype=np.complex128) @ sq_a)
    return lhs, rhs


# ---------------------------------------------------------------------------
# packing, binning and covering statistics
# ---------------------------------------------------------------------------

def _diagonal_vectors(povm: SubPovm):
    """Real diagonals of an all-diagonal POVM, or None if any off-diagonal."""
    vecs = {}
    for z, op in povm.items():
        scale = max(1.0, float(np.max(np.abs(op))))
        off = op - np.diag(np.diagonal(op))
        if np.max(np.abs(off)) > 1e-12 * scale:
            return None
        vecs[z] = np.real(np.diagonal(op)).copy()
    return vecs


def _pair_index_set(p: np.ndarray, n: int, delta: float, outA, outB) -> TypicalSet:
    pair_alpha = tuple((a, b) for a in outA for b in outB)
    return typical_set(p.ravel(), n, delta, alphabet=pair_alpha)


def packing_norm_trial(povm_A: SubPovm, povm_B: SubPovm, p_uv, n: int,
                       r1: float, r2: float, delta: float, seed: int) -> float:
    """Operator norm of the jointly typical slab of a random product codebook.

    Codewords are drawn i.i.d. from the unpruned marginals of p_uv; each
    distinct sequence contributes its draw count times the tensor-power POVM
    element, and only jointly typical pairs enter the sum.  All-diagonal
    POVM pairs take a vector fast path, so larger blocklengths stay inside
    the caps.
    """
    p = np.asarray(p_uv, dtype=float)
    if p.ndim != 2 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise InvariantError("p_uv must be a joint distribution matrix")
    outA = tuple(povm_A.outcomes)
    outB = tuple(povm_B.outcomes)
    if p.shape != (len(outA), len(outB)):
        raise InvariantError("p_uv shape must match the POVM outcome counts")
    pU = np.clip(p.sum(axis=1), 0.0, None)
    pV = np.clip(p.sum(axis=0), 0.0, None)
    L1 = _count_for_rate(n, r1)
    L2 = _count_for_rate(n, r2)
    idxU = substream(seed, STREAM_PACKING_A).choice(len(outA), size=(L1, n),
                                                    p=pU / pU.sum())
    idxV = substream(seed, STREAM_PACKING_B).choice(len(outB), size=(L2, n),
                                                    p=pV / pV.sum())
    countsU = Counter(tuple(outA[k] for k in row) for row in idxU)
    countsV = Counter(tuple(outB[k] for k in row) for row in idxV)
    joint = _pair_index_set(p, n, delta, outA, outB)
    dA = povm_A.dim
    dB = povm_B.dim

    vecsA = _diagonal_vectors(povm_A)
    vecsB = _diagonal_vectors(povm_B)
    if vecsA is not None and vecsB is not None and (dA * dB) ** n <= 2 ** 20:
        distinct_u = list(countsU)
        distinct_v = list(countsV)
        du = np.stack([reduce(np.kron, [vecsA[s] for s in u]) for u in distinct_u])
        dv = np.stack([reduce(np.kron, [vecsB[s] for s in v]) for v in distinct_v])
        w = np.zeros((len(distinct_u), len(distinct_v)))
        for a, u in enumerate(distinct_u):
            for b, v in enumerate(distinct_v):
                if tuple(zip(u, v)) in joint:
                    w[a, b] = countsU[u] * countsV[v]
        acc = du.T @ w @ dv
        return max(0.0, float(acc.max()))

    _check_dim_cap(dA * dB, n)
    acc = np.zeros(((dA * dB) ** n,) * 2, dtype=np.complex128)
    opsU = {u: _kron_power_blocks([povm_A.op(s) for s in u]) for u in countsU}
    opsV = {v: _kron_power_blocks([povm_B.op(s) for s in v]) for v in countsV}
    hit = False
    for u, cu in countsU.items():
        for v, cv in countsV.items():
            if tuple(zip(u, v)) in joint:
                acc += (cu * cv) * np.kron(opsU[u], opsV[v])
                hit = True
    return operator_norm(acc) if hit else 0.0


def packing_union_proxy(p_uv, n: int, r1: float, r2: float, delta: float) -> float:
    """Union-bound proxy: L1 L2 times the product-marginal mass of the
    jointly typical set."""
    p = np.asarray(p_uv, dtype=float)
    pU = p.sum(axis=1)
    pV = p.sum(axis=0)
    joint = _pair_index_set(p, n, delta, range(p.shape[0]), range(p.shape[1]))
    mass = 0.0
    for member in joint.members:
        q = 1.0
        for (a, b) in member:
            q *= pU[a] * pV[b]
        mass += q
    return _count_for_rate(n, r1) * _count_for_rate(n, r2) * mass


def binning_collision_rate(params: ProtocolParams, p_uv, seeds) -> float:
    """Fraction of occupied decoder cells holding several typical pairs.

    Runs the classical half of the protocol only: codebooks from the pruned
    marginals of p_uv, uniform bins, joint-typicality decoding.  Pools the
    counts over all seeds.
    """
    p = np.asarray(p_uv, dtype=float)
    if p.ndim != 2 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise InvariantError("p_uv must be a joint distribution matrix")
    pU = np.clip(p.sum(axis=1), 0.0, None)
    pV = np.clip(p.sum(axis=0), 0.0, None)
    t_u = typical_set(pU, params.n, params.delta)
    t_v = typical_set(pV, params.n, params.delta)
    joint = _pair_index_set(p, params.n, params.delta,
                            range(p.shape[0]), range(p.shape[1]))
    pruned_u = pruned_distribution(t_u)
    pruned_v = pruned_distribution(t_v)
    collisions = 0
    occupied = 0
    for s in seeds:
        pp = replace(params, seed=int(s))
        codebook = generate_codebooks(pp, pruned_u, pruned_v)
        binmaps = generate_bin_maps(pp, t_u, t_v)
        decoder = build_decoder(codebook, binmaps, joint)
        collisions += decoder.collisions
        occupied += decoder.occupied
    return collisions / occupied if occupied else 0.0


def soft_covering_trial(ens, n: int, rate_sum: float, seed: int,
                        delta: float = 0.2, eta: float = 0.1) -> float:
    """Trace-norm obfuscation error of one random pruned codebook.

    Compares the tensor power of the ensemble average against the scaled
    empirical average of roughly 2^{n rate_sum} codeword states drawn from
    the pruned typical distribution of the weights.
    """
    _check_dim_cap(ens.dim, n)
    weights = np.asarray(ens.weights, dtype=float)
    tset = typical_set(weights, n, delta, alphabet=tuple(ens.outcomes))
    pruned = pruned_distribution(tset)
    eps = max(0.0, 1.0 - tset.mass)
    M = _count_for_rate(n, rate_sum)
    draws = pruned.sample(substream(seed, STREAM_SOFT), M)
    target = _kron_power(ens.average(), n)
    acc = np.zeros_like(target)
    for seq, c in Counter(tuple(s) for s in draws).items():
        acc += c * tensor(*(ens.state(s).mat for s in seq))
    scale = (1.0 - eps) / ((1.0 + eta) * M)
    return trace_norm(target - scale * acc)


# ---------------------------------------------------------------------------
# distortion of the decoded protocol
# ---------------------------------------------------------------------------

def distortion_of_protocol(binned_A, binned_B, decoder: DecoderTable, recon,
                           delta_obs, rho_AB: DensityOperator) -> float:
    """Average per-letter distortion of the measure-and-reconstruct channel.

    Every decoder cell, completion bins included, contributes its reference
    block together with the letterwise reconstruction of its decoded pair;
    the observable delta_obs acts on reference x reconstruction (reference
    first, matching the canonical purification) and is averaged over the n
    letter positions.  The reference block of a cell is the transpose of
    the cell sandwich in the eigenbasis of the input state, padded back to
    the full reference dimension.  Letters carrying the reserved
    out-of-alphabet sentinel reconstruct to the maximally mixed state.
    """
    dA, dB = rho_AB.dims
    dim_ref = dA * dB
    n = len(decoder.sentinel[0])
    _check_dim_cap(dA * dB, n)
    states = {}
    for key, value in recon.items():
        mat = value.mat if isinstance(value, DensityOperator) else np.asarray(
            value, dtype=np.complex128)
        states[key] = mat
    if not states:
        raise InvariantError("need at least one reconstruction state")
    xdim = next(iter(states.values())).shape[0]
    for mat in states.values():
        if mat.shape != (xdim, xdim):
            raise InvariantError("reconstruction states must share a dimension")
    obs = np.asarray(delta_obs, dtype=np.complex128)
    if obs.shape != (dim_ref * xdim, dim_ref * xdim):
        raise InvariantError("observable must act on reference x reconstruction")
    mixed = np.eye(xdim, dtype=np.complex128) / xdim

    def letter_state(a, b):
        if a == VOID_LETTER or b == VOID_LETTER:
            return mixed
        try:
            return states[(a, b)]
        except KeyError:
            raise InvariantError(f"no reconstruction state for pair {(a, b)}")

    c1 = _support_factor(rho_AB)
    r = c1.shape[1]
    c_perm = _side_major_rows(_kron_power(c1, n), dA, dB, n)
    cperm3 = c_perm.reshape(dA ** n, dB ** n, c_perm.shape[1])

    N1, N2 = decoder.n_mu
    w_mu = 1.0 / (N1 * N2)
    eye_A = np.eye(dA ** n, dtype=np.complex128)
    eye_B = np.eye(dB ** n, dtype=np.complex128)
    full_A = []
    for fam in binned_A:
        comp = eye_A.copy()
        for b in sorted(fam):
            comp = comp - fam[b]
        full_A.append({0: hermitize(comp), **fam})
    full_B = []
    for fam in binned_B:
        comp = eye_B.copy()
        for b in sorted(fam):
            comp = comp - fam[b]
        full_B.append({0: hermitize(comp), **fam})

    total = 0.0
    for mu1 in range(N1):
        lefts = {i: _left_factor(op, cperm3) for i, op in full_A[mu1].items()}
        for mu2 in range(N2):
            rights = {j: _right_factor(op, cperm3) for j, op in full_B[mu2].items()}
            for i in sorted(lefts):
                for j in sorted(rights):
                    s_cell = w_mu * _close_sandwich(lefts[i], rights[j])
                    rblock = s_cell.T
                    useq, vseq = decoder.lookup(mu1, mu2, i, j)
                    for pos in range(n):
                        f = partial_trace(rblock, [r] * n, (pos,)) if n > 1 else rblock
                        ref = np.zeros((dim_ref, dim_ref), dtype=np.complex128)
                        ref[:r, :r] = f
                        joint_op = np.kron(ref, letter_state(useq[pos], vseq[pos]))
                        total += float(np.real(np.trace(obs @ joint_op)))
    return total / n
