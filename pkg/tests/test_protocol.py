"""Finite-blocklength protocol pieces and their statistical checks."""

import dataclasses

import numpy as np
import pytest

from conftest import random_density, random_povm, random_sub_povm
from povmsim import fixtures
from povmsim.errors import InvariantError
from povmsim.measurement import canonical_ensemble
from povmsim.operators import DensityOperator, Ensemble, Povm, operator_norm, tensor
from povmsim.protocol import (
    BinMap,
    Codebook,
    ProtocolParams,
    TrialReport,
    VOID_LETTER,
    bin_povm,
    binning_collision_rate,
    build_approx_operators,
    build_decoder,
    check_sub_povm,
    distortion_of_protocol,
    faithfulness_trial,
    generate_bin_maps,
    generate_codebooks,
    mutual_covering_check,
    overall_povm,
    packing_norm_trial,
    packing_union_proxy,
    sentinel_sequence,
    separate_check,
    soft_covering_trial,
    substream,
)
from povmsim.typicality import build_projector_bundle, pruned_distribution, typical_set

PUV_DIAG = np.array([[0.5, 0.0], [0.0, 0.5]])


def _binary_pieces(seed=0):
    """The protocol objects of one binary-correlated trial, built stepwise."""
    inst = fixtures.load_fixture("binary-correlated")
    params = dataclasses.replace(inst.params, seed=seed)
    d = inst.decomposition
    rho_A = inst.state.marginal((0,))
    rho_B = inst.state.marginal((1,))
    ens_A = canonical_ensemble(rho_A, d.povm_A)
    ens_B = canonical_ensemble(rho_B, d.povm_B)
    bundle_A = build_projector_bundle(rho_A, ens_A, params.n, params.delta)
    bundle_B = build_projector_bundle(rho_B, ens_B, params.n, params.delta)
    codebook = generate_codebooks(params, bundle_A.pruned, bundle_B.pruned)
    fams_A = build_approx_operators(codebook, rho_A, ens_A, bundle_A, params, side="A")
    fams_B = build_approx_operators(codebook, rho_B, ens_B, bundle_B, params, side="B")
    binmaps = generate_bin_maps(params, bundle_A.typical, bundle_B.typical)
    binned_A = [bin_povm(f, binmaps[0].assignments[mu], params.bins1)
                for mu, f in enumerate(fams_A)]
    binned_B = [bin_povm(f, binmaps[1].assignments[mu], params.bins2)
                for mu, f in enumerate(fams_B)]
    joint = typical_set((0.5, 0.0, 0.0, 0.5), params.n, params.delta,
                        alphabet=(("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")))
    decoder = build_decoder(codebook, binmaps, joint)
    return inst, params, codebook, fams_A, fams_B, binned_A, binned_B, decoder


# ---------------------------------------------------------------------------
# random streams and parameters
# ---------------------------------------------------------------------------

def test_substream_deterministic_and_separated():
    a = substream(7, 2, 0).integers(0, 1 << 30, size=8)
    b = substream(7, 2, 0).integers(0, 1 << 30, size=8)
    c = substream(7, 2, 1).integers(0, 1 << 30, size=8)
    d = substream(8, 2, 0).integers(0, 1 << 30, size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_params_counts_round_rates():
    p = ProtocolParams(n=2, Rt1=1.25, Rt2=1.15, R1=0.8, R2=0.5)
    assert p.L1 == round(2 ** 2.5) == 6
    assert p.L2 == round(2 ** 2.3) == 5
    assert p.bins1 == round(2 ** 1.6) == 3
    assert p.bins2 == 2


def test_params_validation():
    with pytest.raises(InvariantError):
        ProtocolParams(n=0, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5)
    with pytest.raises(InvariantError):
        ProtocolParams(n=2, Rt1=0.4, Rt2=1.0, R1=0.5, R2=0.5)
    with pytest.raises(InvariantError):
        ProtocolParams(n=2, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5, eta=2.0)
    with pytest.raises(InvariantError):
        ProtocolParams(n=2, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5, delta=0.0)
    with pytest.raises(InvariantError):
        ProtocolParams(n=2, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5, seed=-1)


def test_codebooks_typical_and_seeded():
    t = typical_set((0.5, 0.5), 6, 0.6, alphabet=("0", "1"))
    pruned = pruned_distribution(t)
    p0 = ProtocolParams(n=6, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5, delta=0.6, seed=0)
    c0 = generate_codebooks(p0, pruned, pruned)
    assert len(c0.u_lists) == p0.N1 and len(c0.u_lists[0]) == p0.L1
    for seq in c0.u_lists[0]:
        assert seq in t
    again = generate_codebooks(p0, pruned, pruned)
    assert c0.u_lists == again.u_lists and c0.v_lists == again.v_lists
    c1 = generate_codebooks(dataclasses.replace(p0, seed=1), pruned, pruned)
    assert c0.u_lists != c1.u_lists


# ---------------------------------------------------------------------------
# bin maps and binned families
# ---------------------------------------------------------------------------

def test_bin_maps_cover_typical_set():
    t = typical_set((0.5, 0.5), 4, 0.6, alphabet=("0", "1"))
    p = ProtocolParams(n=4, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5, delta=0.6, seed=3)
    bm1, bm2 = generate_bin_maps(p, t, t)
    assert set(bm1.assignments[0]) == set(t.members)
    for seq in t.members:
        assert 1 <= bm1.bin_of(0, seq) <= p.bins1
    assert bm1.spread() >= 0
    again, _ = generate_bin_maps(p, t, t)
    assert bm1.assignments == again.assignments


def test_bin_map_validation():
    t = typical_set((0.5, 0.5), 2, 0.6, alphabet=("0", "1"))
    with pytest.raises(InvariantError):
        BinMap(t, ({("0", "1"): 1},), 2)  # misses a typical member
    full = {("0", "1"): 1, ("1", "0"): 5}
    with pytest.raises(InvariantError):
        BinMap(t, (full,), 2)  # bin index out of range


def test_bin_povm_merges_and_pads():
    a = np.diag([0.3, 0.0])
    b = np.diag([0.0, 0.4])
    binned = bin_povm({("x",): a, ("y",): b}, {("x",): 1, ("y",): 1}, 2)
    assert set(binned) == {1, 2}
    assert np.allclose(binned[1], a + b, atol=1e-15)
    assert np.allclose(binned[2], 0.0, atol=1e-15)
    with pytest.raises(InvariantError):
        bin_povm({("x",): a}, {}, 2)
    with pytest.raises(InvariantError):
        bin_povm({("x",): a}, {("x",): 3}, 2)


# ---------------------------------------------------------------------------
# approximating operators
# ---------------------------------------------------------------------------

def test_approx_operators_closed_form_binary():
    # with rho_A = I/2 everything is diagonal: the sandwich inflates each
    # drawn codeword projector by 2^n and gamma = count (1 - eps) / ((1+eta) L)
    inst, params, codebook, fams_A, _, _, _, _ = _binary_pieces(seed=0)
    eps = 0.5
    scale = (1.0 - eps) / ((1.0 + params.eta) * params.L1)
    fam = fams_A[0]
    counts = codebook.counts_u(0)
    assert set(fam) == set(counts)
    for seq, c in counts.items():
        idx = int("".join(seq), 2)
        want = np.zeros((4, 4))
        want[idx, idx] = c * scale * 4.0
        assert np.allclose(fam[seq], want, atol=1e-12)


def test_check_sub_povm():
    ok, excess = check_sub_povm([0.6 * np.eye(2)])
    assert ok and excess == 0.0
    ok, excess = check_sub_povm([0.6 * np.eye(2), 0.6 * np.eye(2)])
    assert not ok and abs(excess - 0.2) < 1e-12
    ok, excess = check_sub_povm([])
    assert ok and excess == 0.0


def test_trial_family_validity_matches_closed_form():
    # at tiny blocklengths the draw can pile many repeats onto one codeword,
    # pushing the diagonal family sum past the identity; the validity check
    # must report exactly the closed-form excess rather than pretend success
    inst, params, codebook, fams_A, _, _, _, _ = _binary_pieces(seed=0)
    eps = 0.5
    scale = (1.0 - eps) / ((1.0 + params.eta) * params.L1)
    for mu, fam in enumerate(fams_A):
        top = max(c * scale * 4.0 for c in codebook.counts_u(mu).values())
        ok, excess = check_sub_povm(fam.values())
        assert abs(excess - max(0.0, top - 1.0)) < 1e-9
        assert ok == (max(0.0, top - 1.0) <= 1e-9)


# ---------------------------------------------------------------------------
# sentinel and decoder
# ---------------------------------------------------------------------------

def test_sentinel_smallest_atypical():
    t = typical_set((0.5, 0.5), 2, 0.6, alphabet=("0", "1"))
    assert sentinel_sequence(t) == ("0", "0")
    t_all = typical_set((0.5, 0.5), 1, 1.0, alphabet=("0", "1"))
    assert sentinel_sequence(t_all) == (VOID_LETTER,)


def _decoder_fixture(v_list, nbins):
    t = typical_set((0.5, 0.5), 2, 0.6, alphabet=("0", "1"))
    joint = typical_set((0.5, 0.0, 0.0, 0.5), 2, 0.6,
                        alphabet=(("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")))
    assign = {("0", "1"): 1, ("1", "0"): nbins}
    bm = BinMap(t, (assign,), nbins)
    codebook = Codebook(((("0", "1"), ("1", "0")),), (v_list,))
    return build_decoder(codebook, (bm, bm), joint)


def test_decoder_unique_cell_and_sentinel():
    dec = _decoder_fixture(v_list=(("0", "1"),), nbins=2)
    assert dec.lookup(0, 0, 1, 1) == (("0", "1"), ("0", "1"))
    assert dec.collisions == 0 and dec.occupied == 1
    sent = (("0", "0"), ("0", "0"))
    assert dec.sentinel == sent
    assert dec.lookup(0, 0, 2, 1) == sent   # cell never populated
    assert dec.lookup(0, 0, 0, 1) == sent   # completion bin index


def test_decoder_collision_goes_to_sentinel():
    dec = _decoder_fixture(v_list=(("0", "1"), ("1", "0")), nbins=1)
    assert dec.collisions == 1 and dec.occupied == 1
    assert dec.lookup(0, 0, 1, 1) == dec.sentinel


# ---------------------------------------------------------------------------
# the simulated joint family
# ---------------------------------------------------------------------------

def test_overall_povm_resums_to_product_of_totals():
    inst, params, _, _, _, binned_A, binned_B, decoder = _binary_pieces(seed=0)
    acc = overall_povm(binned_A, binned_B, decoder, inst.decomposition)
    got = sum(acc.values())
    sum_A = sum(op for fam in binned_A for op in fam.values()) / params.N1
    sum_B = sum(op for fam in binned_B for op in fam.values()) / params.N2
    assert np.max(np.abs(got - np.kron(sum_A, sum_B))) < 1e-12
    for op in acc.values():
        assert np.min(np.linalg.eigvalsh(op)) > -1e-10


def test_faithfulness_trial_deterministic_and_seed_sensitive():
    inst = fixtures.load_fixture("binary-correlated")
    r0 = faithfulness_trial(inst.params, inst.state, inst.decomposition)
    r0b = faithfulness_trial(inst.params, inst.state, inst.decomposition)
    assert r0.faithfulness_G == r0b.faithfulness_G
    assert r0.resummation_error < 1e-10
    assert len(r0.sub_povm_valid_A) == inst.params.N1
    assert len(r0.sub_povm_valid_B) == inst.params.N2
    for flags, excesses in ((r0.sub_povm_valid_A, r0.excess_A),
                            (r0.sub_povm_valid_B, r0.excess_B)):
        for ok, excess in zip(flags, excesses):
            assert excess >= 0.0
            assert ok == (excess <= 1e-9)
    assert 0.0 <= r0.collision_rate <= 1.0
    p2 = dataclasses.replace(inst.params, seed=2)
    r2 = faithfulness_trial(p2, inst.state, inst.decomposition)
    assert r2.faithfulness_G != r0.faithfulness_G
    for key in ("eps_A", "eps_B", "leakage", "missed_mass", "gamma_mean", "zeta_mean"):
        assert key in r0.diagnostics


def test_bypass_scores_target_against_itself():
    inst = fixtures.load_fixture("binary-correlated")
    r = faithfulness_trial(inst.params, inst.state, inst.decomposition, bypass=True)
    assert r.faithfulness_G < 1e-9


def test_error_split_bounds_total():
    inst = fixtures.load_fixture("binary-correlated")
    for n in (2, 3):
        for seed in (0, 1, 2):
            p = dataclasses.replace(inst.params, n=n, seed=seed)
            r = faithfulness_trial(p, inst.state, inst.decomposition)
            s1, s2 = r.diagnostics["s1"], r.diagnostics["s2"]
            assert r.faithfulness_G <= s1 + s2 + 1e-9


def test_trial_report_validation():
    p = ProtocolParams(n=2, Rt1=1.0, Rt2=1.0, R1=0.5, R2=0.5)
    with pytest.raises(InvariantError):
        TrialReport(p, -0.1, (), (), (), (), 0, 0, 0.0)
    empty = TrialReport(p, 0.0, (), (), (), (), 0, 0, 0.0)
    assert empty.collision_rate == 0.0
    assert empty.sub_povm_valid


# ---------------------------------------------------------------------------
# covering and reduction identities
# ---------------------------------------------------------------------------

def test_mutual_covering_subadditive():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        rho = random_density(rng, (2, 2))
        ta = random_povm(rng, 2, 3)
        tb = random_povm(rng, 2, 2)
        sa = random_sub_povm(rng, ta)
        sb = random_sub_povm(rng, tb)
        f_a, f_b, f_joint = mutual_covering_check(rho, sa, sb, ta, tb)
        assert f_joint <= f_a + f_b + 1e-9
        assert f_a >= 0 and f_b >= 0


def test_separate_check_equality_product_state_complete_side():
    # with a complete side-B POVM the two sides coincide exactly on product
    # states: each term factorizes and the side-B traces sum to one
    for seed in range(10):
        rng = np.random.default_rng(seed)
        rho_a = random_density(rng, (2,))
        rho_b = random_density(rng, (2,))
        rho = DensityOperator(np.kron(rho_a.mat, rho_b.mat), (2, 2))
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        gamma = a + a.conj().T
        lhs, rhs = separate_check(rho, gamma, random_povm(rng, 2, 3))
        assert abs(lhs - rhs) < 1e-9


def test_separate_check_strict_gap_for_correlated_state():
    # completeness alone does not force equality: a maximally entangled
    # state with a traceless observable sends every term to zero
    bell = np.zeros((4, 4))
    for i in (0, 3):
        for j in (0, 3):
            bell[i, j] = 0.5
    rho = DensityOperator(bell, (2, 2))
    gamma = np.array([[0.0, 1.0], [1.0, 0.0]])
    lhs, rhs = separate_check(rho, gamma, fixtures.computational_povm())
    assert lhs < 1e-12
    assert abs(rhs - 1.0) < 1e-12


def test_separate_check_inequality_holds_generally():
    # the bound needs neither completeness nor product structure
    for seed in range(10):
        rng = np.random.default_rng(seed + 11)
        rho = random_density(rng, (2, 2))
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        gamma = a + a.conj().T
        full = random_povm(rng, 2, 3)
        sub = random_sub_povm(rng, full)
        for side in (full, sub):
            lhs, rhs = separate_check(rho, gamma, side)
            assert lhs <= rhs + 1e-9


# ---------------------------------------------------------------------------
# packing, binning, soft covering
# ---------------------------------------------------------------------------

def test_packing_paths_agree_under_local_rotation():
    # the diagonal fast path and the dense operator path must score the same
    # instance: rotating both POVMs by local unitaries preserves the norm
    comp = fixtures.computational_povm()
    theta = 0.6
    u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    rot = Povm(comp.outcomes, tuple(u @ op @ u.T for op in comp.operators))
    fast = packing_norm_trial(comp, comp, PUV_DIAG, 4, 0.5, 0.5, 0.3, seed=7)
    dense = packing_norm_trial(rot, rot, PUV_DIAG, 4, 0.5, 0.5, 0.3, seed=7)
    assert abs(fast - dense) < 1e-9


def test_packing_norm_grows_with_rate():
    comp = fixtures.computational_povm()
    lo = packing_norm_trial(comp, comp, PUV_DIAG, 8, 0.25, 0.25, 0.3, seed=1)
    hi = packing_norm_trial(comp, comp, PUV_DIAG, 8, 0.75, 0.75, 0.3, seed=1)
    assert lo <= hi


def test_packing_rejects_bad_distribution():
    comp = fixtures.computational_povm()
    with pytest.raises(InvariantError):
        packing_norm_trial(comp, comp, np.array([[0.7, 0.0], [0.0, 0.5]]),
                           2, 0.5, 0.5, 0.3, seed=0)


def test_packing_union_proxy_hand_count():
    # L1 = L2 = 2; jointly typical members 0011 and 1100 each carry
    # product-marginal mass (1/4)^2, so the proxy is 4 * 2 / 16 = 1/2
    assert abs(packing_union_proxy(PUV_DIAG, 2, 0.5, 0.5, 0.6) - 0.5) < 1e-12


def test_binning_collision_rate_pools_seeds():
    p = ProtocolParams(n=6, Rt1=1.0, Rt2=1.0, R1=0.25, R2=0.25, delta=0.6, seed=0)
    singles = [binning_collision_rate(p, PUV_DIAG, [s]) for s in (0, 1, 2)]
    pooled = binning_collision_rate(p, PUV_DIAG, [0, 1, 2])
    assert max(singles) > 0.0
    assert min(singles) - 1e-12 <= pooled <= max(singles) + 1e-12
    assert pooled == binning_collision_rate(p, PUV_DIAG, [0, 1, 2])


def test_soft_covering_exact_floor_for_constant_ensemble():
    # identical states make the empirical average exact, leaving only the
    # deliberate (1+eta) deflation: error = eta / (1 + eta)
    rng = np.random.default_rng(5)
    rho = random_density(rng, (2,))
    ens = Ensemble((0.5, 0.5), (rho, rho), outcomes=("a", "b"))
    eta = 0.1
    err = soft_covering_trial(ens, 4, 0.5, seed=0, delta=1.0, eta=eta)
    assert abs(err - eta / (1.0 + eta)) < 1e-12


def test_soft_covering_error_drops_above_holevo_rate():
    ens = fixtures.soft_covering_ensemble()
    chi = 0.600876
    lo = np.median([soft_covering_trial(ens, 6, chi - 0.4, s, delta=0.8, eta=0.05)
                    for s in range(5)])
    hi = np.median([soft_covering_trial(ens, 6, chi + 0.6, s, delta=0.8, eta=0.05)
                    for s in range(5)])
    assert hi < lo


# ---------------------------------------------------------------------------
# distortion of the decoded protocol
# ---------------------------------------------------------------------------

def test_distortion_identity_observable_is_one():
    inst, _, _, _, _, binned_A, binned_B, decoder = _binary_pieces(seed=0)
    recon = {(u, v): st for (u, v, _), st in inst.recon.items()}
    got = distortion_of_protocol(binned_A, binned_B, decoder, recon,
                                 np.eye(8), inst.state)
    assert abs(got - 1.0) < 1e-9


def test_distortion_complementary_observables_sum_to_one():
    inst, _, _, _, _, binned_A, binned_B, decoder = _binary_pieces(seed=0)
    recon = {(u, v): st for (u, v, _), st in inst.recon.items()}
    p1 = np.kron(np.eye(4), np.diag([0.0, 1.0]))
    p0 = np.kron(np.eye(4), np.diag([1.0, 0.0]))
    d1 = distortion_of_protocol(binned_A, binned_B, decoder, recon, p1, inst.state)
    d0 = distortion_of_protocol(binned_A, binned_B, decoder, recon, p0, inst.state)
    assert abs((d0 + d1) - 1.0) < 1e-9
    assert d0 >= -1e-12 and d1 >= -1e-12
