import math

import pytest

from ryushi.tree import build_tree, cut_point


def test_cut_point():
    assert cut_point(0, 5) == 4
    assert cut_point(0, 127) == 64
    assert cut_point(2, 3) == 3
    assert cut_point(0, 8) == 8
    assert cut_point(0, 7) == 4
    with pytest.raises(ValueError):
        cut_point(3, 3)


def test_small_tree():
    tree = build_tree(5)
    spans = {node.span for node in tree.nodes}
    assert spans == {(0, 5), (0, 3), (4, 5), (0, 1), (2, 3), *((i, i) for i in range(6))}
    assert tree.root_node.span == (0, 5)
    assert tree.root_node.cut == 4
    assert tree.leaves() == [0, 1, 2, 3, 4, 5]
    assert tree.height == 4


def test_single_leaf():
    tree = build_tree(0)
    assert len(tree.nodes) == 1
    assert tree.root_node.is_leaf
    assert tree.height == 1
    with pytest.raises(ValueError):
        build_tree(-1)


@pytest.mark.parametrize("T", [1, 2, 6, 100, 511])
def test_tree_structure(T: int):
    tree = build_tree(T)
    assert len(tree.nodes) == 2 * T + 1
    assert tree.leaves() == list(range(T + 1))
    assert tree.height == math.ceil(math.log2(T + 1)) + 1
    for node in tree.nodes:
        if node.is_leaf:
            continue
        left, right = tree.children(node)
        assert left.span == (node.j, node.cut - 1)
        assert right.span == (node.cut, node.l)
        assert len(left) & (len(left) - 1) == 0
    assert max(tree.merges_per_index()) <= math.ceil(math.log2(T + 1))


def test_schedule_is_post_order():
    tree = build_tree(5)
    seen = set()
    for node_id in tree.schedule:
        node = tree.nodes[node_id]
        if not node.is_leaf:
            assert {node.left, node.right} <= seen
        seen.add(node_id)
    assert tree.schedule[-1] == tree.root


def test_levels_respect_dependencies():
    tree = build_tree(37)
    done: set[int] = set()
    for level in tree.levels:
        for node_id in level:
            node = tree.nodes[node_id]
            if not node.is_leaf:
                assert {node.left, node.right} <= done
        done.update(level)
    assert len(done) == len(tree.nodes)


def test_dump():
    assert build_tree(2).dump() == "[0:2] cut=2\n  [0:1] cut=1\n    [0]\n    [1]\n  [2]"
