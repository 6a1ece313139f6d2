import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavitychain.exceptions import CapacityError
from cavitychain.hilbert import (
    BasisState,
    build_space,
    index_state,
    qubit_marginal,
    space_dimension,
    state_index,
)


def brute_force_dim(L, cap):
    # independent enumeration: walk every (qubit, cavity) mask pair
    n = 0
    for c in range(1 << L):
        if bin(c).count("1") <= cap:
            n += 1 << L
    return n


def test_minimal_space_has_four_states():
    assert build_space(1, 1).dim == 4


def test_l4_cap2_dim_176():
    assert build_space(4, 2).dim == 176
    assert space_dimension(4, 2) == 176


def test_dim_formula_matches_enumeration():
    for L in range(1, 13):
        for cap in range(0, min(L, 3) + 1):
            assert space_dimension(L, cap) == brute_force_dim(L, cap)


def test_l9_cap2_density_matrix_is_almost_9_gb():
    dim = space_dimension(9, 2)
    assert dim == 23552
    assert 8.8e9 < dim * dim * 16 < 8.9e9


def test_enumeration_order_golden():
    # lexicographic, qubit pattern major, cavity masks ascending
    space = build_space(2, 1)
    got = [(s.qubit_occ, s.cavity_occ) for s in space.states()]
    assert got == [
        (0, 0), (0, 1), (0, 2),
        (1, 0), (1, 1), (1, 2),
        (2, 0), (2, 1), (2, 2),
        (3, 0), (3, 1), (3, 2),
    ]


def test_all_zero_state_is_first():
    space = build_space(5, 2)
    assert state_index(space, BasisState(0, 0)) == 0


def test_index_roundtrip_every_state():
    space = build_space(4, 2)
    for i in range(space.dim):
        assert state_index(space, index_state(space, i)) == i


def test_state_index_agrees_with_linear_scan():
    space = build_space(4, 2)
    rng = np.random.default_rng(5)
    targets = rng.integers(0, space.dim, size=12)
    enumerated = list(space.states())
    for i in targets:
        s = enumerated[i]
        scan = next(k for k, other in enumerate(space.states()) if other == s)
        assert state_index(space, s) == scan == i


def test_over_cap_pattern_rejected():
    space = build_space(4, 1)
    with pytest.raises(KeyError):
        state_index(space, BasisState(0, 0b0011))


def test_pattern_outside_l_bits_rejected():
    space = build_space(3, 1)
    with pytest.raises(ValueError):
        space.index_of(0b1000, 0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_space(0, 0)
    with pytest.raises(ValueError):
        build_space(3, 4)


def test_capacity_guard():
    with pytest.raises(CapacityError):
        build_space(26, 13)


def test_marginal_of_product_state_is_delta():
    space = build_space(4, 2)
    w = np.zeros(space.dim)
    w[space.index_of(0b0101, 0)] = 1.0
    dist = qubit_marginal(space, w)
    assert dist.probs[0b0101] == 1.0
    assert dist.probs.sum() == 1.0


def test_marginal_of_uniform_weights_is_uniform():
    space = build_space(3, 2)
    dist = qubit_marginal(space, np.full(space.dim, 1.0 / space.dim))
    np.testing.assert_allclose(dist.probs, 1.0 / 8, rtol=0, atol=1e-15)


def test_marginal_hand_summed_superposition():
    # weights 0.3 on (q=01, c=00), 0.2 on (q=01, c=10), 0.5 on (q=10, c=01);
    # qubit pattern 01 collects 0.5, pattern 10 collects 0.5
    space = build_space(2, 1)
    w = np.zeros(space.dim)
    w[space.index_of(0b01, 0b00)] = 0.3
    w[space.index_of(0b01, 0b10)] = 0.2
    w[space.index_of(0b10, 0b01)] = 0.5
    dist = qubit_marginal(space, w)
    np.testing.assert_allclose(dist.probs, [0.0, 0.5, 0.5, 0.0], atol=1e-15)


def test_marginal_rejects_negative_weight():
    space = build_space(2, 1)
    bad = np.full(space.dim, 1.0 / space.dim)
    bad[3] = -1e-6
    bad[0] += 1e-6 + 1.0 / space.dim
    bad /= bad.sum()
    with pytest.raises(ValueError):
        qubit_marginal(space, bad)


def test_marginal_rejects_unnormalized_weights():
    space = build_space(2, 1)
    with pytest.raises(ValueError):
        qubit_marginal(space, np.full(space.dim, 1.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_marginal_total_probability_property(L, cap, seed):
    space = build_space(L, cap)
    rng = np.random.default_rng(seed)
    w = rng.random(space.dim)
    w /= w.sum()
    dist = qubit_marginal(space, w)
    assert abs(dist.probs.sum() - 1.0) <= 1e-9
    dist.validate()


def test_cavity_lowering_map_clears_one_bit():
    space = build_space(3, 2)
    src, dst = space.cavity_lowering_map(2)
    assert len(src) > 0
    for a, b in zip(src, dst):
        sa, sb = space.state(int(a)), space.state(int(b))
        assert sa.cavity_occ & 0b010
        assert sb.cavity_occ == sa.cavity_occ & ~0b010
        assert sb.qubit_occ == sa.qubit_occ


def test_qubit_lowering_map_clears_one_bit():
    space = build_space(3, 1)
    src, dst = space.qubit_lowering_map(1)
    for a, b in zip(src, dst):
        sa, sb = space.state(int(a)), space.state(int(b))
        assert sa.qubit_occ & 1
        assert sb.qubit_occ == sa.qubit_occ & ~1
        assert sb.cavity_occ == sa.cavity_occ


def test_z_diagonal_signs():
    space = build_space(2, 0)
    d = space.qubit_z_diagonal(1)
    for i in range(space.dim):
        expect = -1.0 if space.state(i).qubit_occ & 1 else 1.0
        assert d[i] == expect
