"""Critical-point enumeration, trajectory counting, and integer homology.

The Smith normal form is checked against a determinantal-divisor oracle:
the k-th divisor D_k is the gcd of all k x k minors, and the invariant
factors are the successive quotients D_k / D_{k-1}.
"""

import itertools
import math

import numpy as np
import pytest

from pathmorse.errors import IndexGapNotOne
from pathmorse.geodesics import great_circle_length
from pathmorse.geometry import SphereModel, free_system
from pathmorse.homology import (
    ChainComplexData,
    HomologyGroup,
    assemble_complex,
    build_omega_complex,
    count_trajectories,
    enumerate_critical_points,
    homology,
    smith_normal_form,
    sphere_reference_complex,
)


# ---------------------------------------------------------------------------
# smith normal form
# ---------------------------------------------------------------------------

def _det_int(mat):
    n = len(mat)
    if n == 0:
        return 1
    if n == 1:
        return mat[0][0]
    total = 0
    for j in range(n):
        if mat[0][j] == 0:
            continue
        minor = [row[:j] + row[j + 1:] for row in mat[1:]]
        total += (-1) ** j * mat[0][j] * _det_int(minor)
    return total


def _snf_oracle(mat):
    """gcd-of-minors reduction, independent of the elementary-operations path."""
    m, n = len(mat), len(mat[0]) if mat else 0
    factors, rank = [], 0
    d_prev = 1
    for k in range(1, min(m, n) + 1):
        g = 0
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                sub = [[mat[r][c] for c in cols] for r in rows]
                g = math.gcd(g, abs(_det_int(sub)))
        if g == 0:
            break
        factors.append(g // d_prev)
        d_prev = g
        rank = k
    return factors, rank


def test_snf_single_entry():
    assert smith_normal_form([[2]]) == ([2], 1)


def test_snf_diagonal():
    mat = [[1, 0, 0], [0, 6, 0], [0, 0, 0]]
    assert smith_normal_form(mat) == ([1, 6], 2)


def test_snf_empty_and_zero():
    assert smith_normal_form([]) == ([], 0)
    assert smith_normal_form([[0, 0], [0, 0]]) == ([], 0)


def test_snf_divisibility_chain():
    mat = [[2, 4, 4], [-6, 6, 12], [10, 4, 16]]
    factors, rank = smith_normal_form(mat)
    assert rank == len(factors)
    for a, b in zip(factors, factors[1:]):
        assert b % a == 0


def test_snf_random_against_minor_gcd_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        mat = rng.integers(-9, 10, size=(5, 5)).tolist()
        got_factors, got_rank = smith_normal_form(mat)
        want_factors, want_rank = _snf_oracle(mat)
        assert got_rank == want_rank
        assert [abs(f) for f in got_factors] == want_factors


def test_snf_overflow_safe():
    # entries force intermediate growth well past 64-bit
    mat = [[2**40, 3**30], [5**25, 7**20]]
    factors, rank = smith_normal_form(mat)
    want = _snf_oracle(mat)
    assert ([abs(f) for f in factors], rank) == want


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def s2_criticals(s2, quarter_endpoints):
    p, q = quarter_endpoints
    return enumerate_critical_points(s2, p, q, 3)


def test_enumeration_indices_and_actions(s2_criticals):
    assert [c.index for c in s2_criticals] == [0, 1, 2, 3]
    theta = np.pi / 2
    for k, crit in enumerate(s2_criticals):
        assert crit.action == pytest.approx(great_circle_length(k, theta), rel=1e-9)
    acts = [c.action for c in s2_criticals]
    assert all(a < b for a, b in zip(acts, acts[1:]))


def test_enumeration_unstable_basis_orthonormal(s2_criticals):
    crit = s2_criticals[2]
    assert crit.unstable_basis.shape[0] == 2
    lam = crit.broken.segments
    for i in range(2):
        for j in range(2):
            val = (1.0 / lam) * np.sum(crit.unstable_basis[i] * crit.unstable_basis[j])
            assert val == pytest.approx(1.0 if i == j else 0.0, abs=1e-8)


def test_enumeration_s3_indices():
    s3 = SphereModel(3, free_system())
    p = np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array([0.0, 1.0, 0.0, 0.0])
    crits = enumerate_critical_points(s3, p, q, 2)
    assert [c.index for c in crits] == [0, 2, 4]


def test_enumeration_s1_all_minima():
    s1 = SphereModel(1, free_system())
    p = np.array([1.0, 0.0])
    q = np.array([np.cos(1.0), np.sin(1.0)])
    crits = enumerate_critical_points(s1, p, q, 2)
    assert [c.index for c in crits] == [0, 0, 0]
    assert len(crits) == 3


# ---------------------------------------------------------------------------
# trajectory counts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def s2_count_k1(s2, s2_criticals):
    return count_trajectories(s2, s2_criticals[1], s2_criticals[0], s2_criticals)


def test_two_opposite_trajectories(s2_count_k1):
    mc = s2_count_k1
    assert len(mc.trajectories) == 2
    assert sorted(t.sign for t in mc.trajectories) == [-1, 1]
    assert mc.n_count == 0
    assert mc.mod2_count == 0


def test_energy_identity_on_counted_trajectories(s2_count_k1, s2_criticals):
    drop = 2 * (s2_criticals[1].action - s2_criticals[0].action)
    for t in s2_count_k1.trajectories:
        assert abs(t.phi - drop) / drop < 0.01


def test_index_gap_not_one_rejected():
    s3 = SphereModel(3, free_system())
    p = np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array([0.0, 1.0, 0.0, 0.0])
    crits = enumerate_critical_points(s3, p, q, 1)
    with pytest.raises(IndexGapNotOne):
        count_trajectories(s3, crits[1], crits[0], crits)


# ---------------------------------------------------------------------------
# complex assembly and homology
# ---------------------------------------------------------------------------

def test_assemble_s2_small(s2, s2_criticals, s2_count_k1):
    crits = s2_criticals[:2]
    cx = assemble_complex(crits, [s2_count_k1], max_winding=1)
    assert cx.boundary_matrices[1] == [[0]]
    groups = homology(cx, max_degree=1)
    assert groups[0].free_rank == 1 and not groups[0].torsion
    assert groups[1].free_rank == 1 and not groups[1].torsion


def test_assemble_s3_structural_zero():
    s3 = SphereModel(3, free_system())
    p = np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array([0.0, 1.0, 0.0, 0.0])
    crits = enumerate_critical_points(s3, p, q, 2)
    cx = assemble_complex(crits, [], max_winding=2)
    assert cx.boundary_matrices == {}
    groups = homology(cx, max_degree=4)
    assert [g.free_rank for g in groups] == [1, 0, 1, 0, 1]


def test_assemble_s1_degree_zero():
    s1 = SphereModel(1, free_system())
    p = np.array([1.0, 0.0])
    q = np.array([np.cos(1.0), np.sin(1.0)])
    crits = enumerate_critical_points(s1, p, q, 2)
    cx = assemble_complex(crits, [], max_winding=2)
    groups = homology(cx, max_degree=2)
    assert groups[0].free_rank == 3
    assert groups[0].truncated
    assert groups[1].free_rank == 0 and not groups[1].truncated


def test_boundary_square_zero_rejection():
    from pathmorse.errors import BoundaryNotSquareZero

    class _G:
        def __init__(self, label, index):
            self.label = label
            self.index = index
            self.action = float(index)
            self.winding = index

    gens = {0: [_G("a", 0)], 1: [_G("b", 1)], 2: [_G("c", 2)]}
    by = [g for gs in gens.values() for g in gs]

    class _MC:
        def __init__(self, s, t, n):
            self.source, self.target, self.n_count = s, t, n

    counts = [_MC(gens[1][0], gens[0][0], 1), _MC(gens[2][0], gens[1][0], 1)]
    with pytest.raises(BoundaryNotSquareZero):
        assemble_complex(by, counts, max_winding=2)


def test_sphere_reference_complexes_match_table():
    # S^0: Z + Z at degree 0; S^n (n >= 1): Z at 0 and n
    groups = homology(sphere_reference_complex(0), max_degree=4)
    assert groups[0].free_rank == 2
    assert all(g.free_rank == 0 for g in groups[1:])
    for n in range(1, 5):
        groups = homology(sphere_reference_complex(n), max_degree=4)
        for k, g in enumerate(groups):
            want = 1 if k in (0, n) else 0
            assert g.free_rank == want, (n, k)
            assert not g.torsion


def test_homology_mod2_matches_integer_for_sphere(s2_criticals, s2_count_k1):
    cx = assemble_complex(s2_criticals[:2], [s2_count_k1], max_winding=1)
    z_groups = homology(cx, max_degree=1)
    z2_groups = homology(cx, max_degree=1, coefficients="Z2")
    for a, b in zip(z_groups, z2_groups):
        assert a.free_rank == b.free_rank


def test_orientation_flip_invariance(s2, s2_criticals):
    base = count_trajectories(s2, s2_criticals[1], s2_criticals[0], s2_criticals)
    s2_criticals[1].orientation = -1
    try:
        flipped = count_trajectories(s2, s2_criticals[1], s2_criticals[0], s2_criticals)
    finally:
        s2_criticals[1].orientation = 1
    # every sign flips, the signed count is unchanged (= 0), homology equal
    assert sorted(t.sign for t in flipped.trajectories) == [-1, 1]
    assert flipped.n_count == base.n_count == 0
    cx_a = assemble_complex(s2_criticals[:2], [base], max_winding=1)
    cx_b = assemble_complex(s2_criticals[:2], [flipped], max_winding=1)
    ga = [str(g) for g in homology(cx_a, max_degree=1)]
    gb = [str(g) for g in homology(cx_b, max_degree=1)]
    assert ga == gb


def test_homology_torsion_extraction():
    # synthetic complex with a torsion boundary: Z --2--> Z
    class _G:
        def __init__(self, label, index):
            self.label = label
            self.index = index
            self.action = float(index)
            self.winding = None

    gens = {0: [_G("x", 0)], 1: [_G("y", 1)]}
    cx = ChainComplexData(
        generators_by_index=gens, boundary_matrices={1: [[2]]},
        max_winding=-1, max_index=1,
    )
    groups = homology(cx, max_degree=1)
    assert groups[0].free_rank == 0
    assert groups[0].torsion == [2]
    assert str(groups[0]) == "Z/2"
    assert groups[1].free_rank == 0 and not groups[1].torsion


def test_flat_plane_vacuous_counts(flat2):
    # a single minimum and no index-1 generators: no pairs, empty boundary
    cx, counts = build_omega_complex(
        flat2, np.zeros(2), np.array([2.0, 1.0]), 0, lam=16
    )
    assert counts == []
    assert cx.boundary_matrices == {}
    groups = homology(cx, max_degree=1)
    assert groups[0].free_rank == 1 and groups[1].free_rank == 0
