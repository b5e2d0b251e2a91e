"""Typical sets, pruned distributions, and typicality projectors."""

import itertools

import numpy as np
import pytest

from povmsim import fixtures
from povmsim.errors import CapExceededError, InvariantError
from povmsim.measurement import canonical_ensemble
from povmsim.operators import DensityOperator, Ensemble
from povmsim.typicality import (
    all_sequences,
    build_projector_bundle,
    conditional_typical_projector,
    cutoff_projector,
    pruned_distribution,
    rho_hat_seq,
    typical_projector,
    typical_set,
)

KET0 = np.array([1.0, 0.0])
KETP = np.array([1.0, 1.0]) / np.sqrt(2)


def _proj(v):
    return np.outer(v, v.conj())


def _brute_typical(probs, n, delta):
    """Set of typical index strings and their total mass, by full enumeration."""
    k = len(probs)
    members = set()
    mass = 0.0
    for seq in itertools.product(range(k), repeat=n):
        ok = True
        for i, p in enumerate(probs):
            if abs(seq.count(i) / n - p) > delta * p + 1e-9:
                ok = False
                break
        if ok:
            members.add(seq)
            mass += float(np.prod([probs[s] for s in seq]))
    return members, mass


# ---------------------------------------------------------------------------
# classical typical sets
# ---------------------------------------------------------------------------

def test_typical_set_matches_bruteforce():
    probs = (0.3, 0.7)
    want_members, want_mass = _brute_typical(probs, 6, 0.5)
    t = typical_set(probs, 6, 0.5)
    assert set(t.members) == want_members
    assert abs(t.mass - want_mass) < 1e-12
    for m in t.members:
        assert m in t
    assert (0, 0, 0, 0, 0, 0) not in t


def test_typical_mass_grows_with_blocklength():
    early = typical_set((0.3, 0.7), 4, 0.4).mass
    late = typical_set((0.3, 0.7), 14, 0.4).mass
    assert early < late


def test_typical_set_carries_alphabet_labels():
    t = typical_set((0.5, 0.5), 2, 0.6, alphabet=("a", "b"))
    assert set(t.members) == {("a", "b"), ("b", "a")}


def test_typical_set_validation():
    with pytest.raises(InvariantError):
        typical_set((0.3, 0.7), 4, 0.0)
    with pytest.raises(InvariantError):
        typical_set((0.3, 0.8), 4, 0.5)
    with pytest.raises(InvariantError):
        typical_set((0.3, 0.7), 0, 0.5)


def test_pruned_distribution_is_conditioned_product():
    t = typical_set((0.3, 0.7), 6, 0.5)
    pruned = pruned_distribution(t)
    assert abs(float(np.sum(pruned.probs)) - 1.0) < 1e-12
    for seq, q in zip(t.members, pruned.probs):
        assert abs(q - t.prob(seq) / t.mass) < 1e-12
    assert pruned.prob((0,) * 6) == 0.0


def test_pruned_sampling_deterministic():
    t = typical_set((0.3, 0.7), 6, 0.5)
    pruned = pruned_distribution(t)
    a = pruned.sample(np.random.default_rng(42), 20)
    b = pruned.sample(np.random.default_rng(42), 20)
    assert a == b


def test_pruning_empty_set_raises():
    # four-letter uniform marginals admit no typical strings at n=2, delta=0.5
    t = typical_set((0.25,) * 4, 2, 0.5)
    assert len(t.members) == 0
    with pytest.raises(InvariantError):
        pruned_distribution(t)


# ---------------------------------------------------------------------------
# quantum projectors
# ---------------------------------------------------------------------------

def test_typical_projector_diagonal_indicator():
    probs = (0.6, 0.4)
    rho = DensityOperator(np.diag(probs), (2,))
    n, delta = 6, 0.5
    proj = typical_projector(rho, n, delta)
    members, mass = _brute_typical(probs, n, delta)
    want = np.zeros((2 ** n, 2 ** n))
    for seq in members:
        idx = int("".join(map(str, seq)), 2)
        want[idx, idx] = 1.0
    assert np.allclose(proj, want, atol=1e-10)
    assert np.allclose(proj @ proj, proj, atol=1e-10)
    rho_n = rho.power(n).mat
    assert np.allclose(proj @ rho_n, rho_n @ proj, atol=1e-12)
    assert abs(np.trace(proj @ rho_n).real - mass) < 1e-10


def test_typical_projector_mass_basis_invariant():
    theta = 0.7
    u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    rho = DensityOperator(u @ np.diag([0.6, 0.4]) @ u.T, (2,))
    proj = typical_projector(rho, 6, 0.5)
    _, mass = _brute_typical((0.6, 0.4), 6, 0.5)
    assert abs(np.trace(proj @ rho.power(6).mat).real - mass) < 1e-10


def test_conditional_projector_pure_states():
    ens = Ensemble((0.5, 0.5),
                   (DensityOperator(_proj(KET0), (2,)),
                    DensityOperator(_proj(KETP), (2,))),
                   outcomes=("0", "+"))
    proj = conditional_typical_projector(ens, ("0", "+"), 0.4)
    assert np.allclose(proj, _proj(np.kron(KET0, KETP)), atol=1e-10)


def test_rho_hat_seq_is_kron_of_states():
    ens = Ensemble((0.5, 0.5),
                   (DensityOperator(_proj(KET0), (2,)),
                    DensityOperator(_proj(KETP), (2,))),
                   outcomes=("0", "+"))
    got = rho_hat_seq(ens, ("+", "0"))
    assert np.allclose(got, np.kron(_proj(KETP), _proj(KET0)), atol=1e-12)


def test_cutoff_projector_thresholds():
    op = np.diag([0.5, 0.3, 1e-18])
    support = np.diag([1.0, 1.0, 0.0])
    assert np.allclose(cutoff_projector(op, 0.0), support, atol=1e-12)
    assert np.allclose(cutoff_projector(op, 0.4), np.diag([1.0, 0.0, 0.0]), atol=1e-12)


def test_projector_bundle_binary_fixture_diagonal_oracle():
    inst = fixtures.load_fixture("binary-correlated")
    rho_a = inst.state.marginal((0,))
    ens = canonical_ensemble(rho_a, inst.decomposition.povm_A)
    bundle = build_projector_bundle(rho_a, ens, 2, 0.6)
    # degenerate spectrum of I/2 makes every eigen-string typical
    assert np.allclose(bundle.pi_rho, np.eye(4), atol=1e-12)
    assert set(bundle.typical.members) == {("0", "1"), ("1", "0")}
    assert abs(bundle.params["eps"] - 0.5) < 1e-12
    assert np.allclose(bundle.conditional(("0", "1")), np.diag([0, 1, 0, 0]), atol=1e-12)
    # pruned average is diag(0, 1/2, 1/2, 0); both nonzero modes clear the cutoff
    assert np.allclose(bundle.pi_hat, np.diag([0.0, 1.0, 1.0, 0.0]), atol=1e-10)


def test_sequence_and_dimension_caps():
    with pytest.raises(CapExceededError):
        all_sequences(2, 25)
    rho = DensityOperator(np.eye(2) / 2, (2,))
    with pytest.raises(CapExceededError):
        typical_projector(rho, 13, 0.5)
