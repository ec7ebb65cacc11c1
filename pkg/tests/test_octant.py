import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octforest.octant import (ContractError, Octant, ancestor_id, compare, demorton, morton,
                              octant_range, predecessor_atom)
from oracles import ancestor_tuple, contains, morton_bits, order_key


def octants(d, lmax, max_trees=3):
    @st.composite
    def build(draw):
        level = draw(st.integers(0, lmax))
        h = 1 << (lmax - level)
        coords = [draw(st.integers(0, (1 << level) - 1)) * h for _ in range(d)]
        return Octant(draw(st.integers(0, max_trees - 1)), level, coords, lmax)
    return build()


def test_morton_small_values():
    assert morton((1, 0)) == 1
    assert morton((0, 1)) == 2
    assert morton((1, 1, 1)) == 7
    assert morton((2, 0, 0)) == 8


@given(st.lists(st.integers(0, (1 << 21) - 1), min_size=3, max_size=3))
def test_morton_matches_bit_string_3d(coords):
    assert morton(coords) == morton_bits(coords, 21)
    assert demorton(morton(coords), 3) == tuple(coords)


@given(st.lists(st.integers(0, (1 << 30) - 1), min_size=2, max_size=2))
def test_morton_roundtrip_2d(coords):
    assert morton(coords) == morton_bits(coords, 30)
    assert demorton(morton(coords), 2) == tuple(coords)


@settings(max_examples=300)
@given(octants(2, 6), octants(2, 6))
def test_order_matches_reference_key(a, b):
    ka, kb = order_key(a.to_tuple(), 6), order_key(b.to_tuple(), 6)
    assert compare(a, b) == (ka > kb) - (ka < kb)


@settings(max_examples=300)
@given(octants(3, 5))
def test_ancestor_chain(o):
    for level in range(o.level + 1):
        assert o.ancestor(level).to_tuple() == ancestor_tuple(o.to_tuple(), level, 5)
        assert o.ancestor(level) <= o
    for level in range(1, o.level + 1):
        assert ancestor_id(o, level) == o.ancestor(level).child_id()


@settings(max_examples=300)
@given(octants(3, 4, 1), octants(3, 4, 1))
def test_descendant_matches_box_containment(a, b):
    assert b.is_descendant(a) == contains(a.to_tuple(), b.to_tuple(), 4)
    f, l = octant_range(a)
    in_range = f.key <= b.first_atom().key and b.last_atom().key <= l.key
    assert in_range == b.is_descendant(a)


def test_children_are_sorted_and_parented():
    root = Octant.root(0, 3, 4)
    kids = root.children()
    assert kids == sorted(kids)
    assert all(k.parent() == root for k in kids)
    assert [k.child_id() for k in kids] == list(range(8))


def test_predecessor_atom_crosses_trees():
    first = Octant.atom(1, (0, 0), 3)
    prev = predecessor_atom(first)
    assert prev.to_tuple() == (0, 3, 7, 7)
    with pytest.raises(ContractError):
        predecessor_atom(Octant.atom(0, (0, 0), 3))


@pytest.mark.parametrize("args", [
    (0, 2, (1, 0), 3),     # misaligned for level 2
    (0, 4, (0, 0), 3),     # level above lmax
    (0, 1, (0, 0, 0, 0), 3),
    (-1, 0, (0, 0), 3),
])
def test_invalid_octants_rejected(args):
    with pytest.raises(ContractError):
        Octant(*args)


def test_navigation_errors():
    with pytest.raises(ContractError):
        Octant.root(0, 2, 3).parent()
    with pytest.raises(ContractError):
        Octant.atom(0, (1, 1), 3).child(0)
    with pytest.raises(ContractError):
        ancestor_id(Octant.root(0, 2, 3), 1)
