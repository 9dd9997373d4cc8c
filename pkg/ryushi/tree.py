from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass
from functools import cached_property


def cut_point(j: int, l: int) -> int:
    """k = j + 2^p with p = ceil(log2(l - j + 1)) - 1, computed on integers."""
    if j >= l:
        raise ValueError(f"cannot split the single index span [{j}, {l}]")
    size = l - j + 1
    return j + (1 << (size - 1).bit_length()) // 2


@dataclass(frozen=True)
class TreeNode:
    j: int
    l: int
    cut: int | None = None
    left: int | None = None
    right: int | None = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.cut is None

    @property
    def span(self) -> tuple[int, int]:
        return self.j, self.l

    def __len__(self) -> int:
        return self.l - self.j + 1


@dataclass(frozen=True)
class Tree:
    nodes: tuple[TreeNode, ...]
    root: int

    @property
    def T(self) -> int:
        return self.nodes[self.root].l

    @property
    def root_node(self) -> TreeNode:
        return self.nodes[self.root]

    @cached_property
    def height(self) -> int:
        return max(node.depth for node in self.nodes) + 1

    @property
    def schedule(self) -> range:
        # nodes are stored children-first, so storage order is already post-order
        return range(len(self.nodes))

    @cached_property
    def levels(self) -> tuple[tuple[int, ...], ...]:
        """Node ids grouped by height above the leaves; a group only depends on earlier ones."""
        heights: list[int] = []
        for node in self.nodes:
            if node.is_leaf:
                heights.append(0)
            else:
                assert node.left is not None and node.right is not None
                heights.append(1 + max(heights[node.left], heights[node.right]))
        return tuple(
            tuple(i for i, h in enumerate(heights) if h == level)
            for level in range(max(heights) + 1)
        )

    def children(self, node: TreeNode) -> tuple[TreeNode, TreeNode]:
        if node.left is None or node.right is None:
            raise ValueError(f"leaf [{node.j}, {node.l}] has no children")
        return self.nodes[node.left], self.nodes[node.right]

    def preorder(self) -> Iterator[TreeNode]:
        stack = [self.root]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            if not node.is_leaf:
                assert node.left is not None and node.right is not None
                stack.extend((node.right, node.left))

    def leaves(self) -> list[int]:
        return [node.j for node in self.preorder() if node.is_leaf]

    def merges_per_index(self) -> list[int]:
        """How many merges the particles of each index take part in on the way to the root."""
        counts = [0] * (self.T + 1)
        for node in self.preorder():
            if node.is_leaf:
                counts[node.j] = node.depth
        return counts

    def dump(self, indent: int = 2) -> str:
        lines = []
        for node in self.preorder():
            pad = " " * indent * node.depth
            if node.is_leaf:
                lines.append(f"{pad}[{node.j}]")
            else:
                lines.append(f"{pad}[{node.j}:{node.l}] cut={node.cut}")
        return "\n".join(lines)


def build_tree(T: int) -> Tree:
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    nodes: list[TreeNode] = []

    def build(j: int, l: int, depth: int) -> int:
        if j == l:
            nodes.append(TreeNode(j, l, depth=depth))
            return len(nodes) - 1
        k = cut_point(j, l)
        left = build(j, k - 1, depth + 1)
        right = build(k, l, depth + 1)
        nodes.append(TreeNode(j, l, k, left, right, depth))
        return len(nodes) - 1

    root = build(0, T, 0)
    return Tree(tuple(nodes), root)
