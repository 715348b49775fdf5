"""MRAP tree graphs: addressing, node classes, classed edges and occlusions.

Nodes are labelled by a balanced-ternary path from the root (digit ``+1`` for
an up branch, ``-1`` for a down branch) and a class letter:

* ``e`` -- sites an even number of links from the root (the branching sites),
* ``o`` -- the odd site sitting to the right of every non-leaf ``e`` site,
* ``i``/``j`` -- the two-site imaging termination hung off each leaf.

Edges are stored directed away from the root.  ``e->o`` and ``e->i`` links
carry the ``A`` coupling, ``o->e`` and ``i->j`` links carry ``B``.

Basis ordering is breadth-first by level.  Within a level the classes come in
the order e, o, i, j and each class is sorted by descending address value.
At depths 1 and 2 this reproduces the printed orderings
``{0e, 0o, 1e, Te}`` and ``{0e, 0o, 1e, Te, 1o, To, 11e, 1Te, T1e, TTe}``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

UP = 1
DOWN = -1

#: Largest tree (in basis states) that build_tree accepts by default.
DEFAULT_NODE_BUDGET = 4096

Address = tuple  # tuple[int, ...] with entries in {+1, -1}

CLASS_ORDER = {"e": 0, "o": 1, "i": 2, "j": 3}


class TreeSizeError(ValueError):
    """Requested tree is empty or exceeds the node budget."""


def address_value(address: Sequence[int]) -> int:
    """Balanced-ternary value of a path; the root ``()`` has value 0."""
    value = 0
    for digit in address:
        if digit not in (UP, DOWN):
            raise ValueError(f"address digits must be +1 or -1, got {digit!r}")
        value = 3 * value + digit
    return value


def format_address(address: Sequence[int]) -> str:
    """Compact text form: ``"0"`` for the root, otherwise ``1``/``T`` digits.

    ``T`` is the usual balanced-ternary glyph for -1 (the overbarred 1).
    """
    if not address:
        return "0"
    return "".join("1" if d == UP else "T" for d in address)


def parse_address(text: str) -> Address:
    text = text.strip()
    if text == "0":
        return ()
    digits = []
    for ch in text:
        if ch == "1":
            digits.append(UP)
        elif ch in "T-":
            digits.append(DOWN)
        else:
            raise ValueError(f"cannot parse address {text!r}")
    return tuple(digits)


class NodeId(NamedTuple):
    address: Address
    kind: str

    @property
    def label(self) -> str:
        return f"{format_address(self.address)}_{self.kind}"

    @classmethod
    def parse(cls, label: str) -> "NodeId":
        try:
            addr, kind = label.rsplit("_", 1)
        except ValueError:
            raise ValueError(f"node label {label!r} must look like '1T_e'") from None
        if kind not in CLASS_ORDER:
            raise ValueError(f"unknown node class {kind!r} in {label!r}")
        return cls(parse_address(addr), kind)

    def __str__(self) -> str:
        return self.label


class Edge(NamedTuple):
    src: NodeId
    dst: NodeId
    coupling: str  # "A" or "B"

    @property
    def label(self) -> str:
        return f"{self.src.label}-{self.dst.label}"


@dataclass(frozen=True, eq=False)
class TreeGraph:
    """An immutable MRAP tree with a fixed basis ordering."""

    depth: int
    imaging: bool
    nodes: tuple
    edges: tuple
    branch_depths: tuple = ()
    base_depth: int = 0
    index: Mapping[NodeId, int] = field(default_factory=dict, repr=False)
    _children: Mapping[NodeId, tuple] = field(default_factory=dict, repr=False)
    _edge_lookup: Mapping[frozenset, Edge] = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> NodeId:
        return self.nodes[0]

    @property
    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]

    def index_of(self, node: NodeId | str) -> int:
        if isinstance(node, str):
            node = NodeId.parse(node)
        try:
            return self.index[node]
        except KeyError:
            raise KeyError(f"node {node} is not in this tree") from None

    def node(self, label: str) -> NodeId:
        node = NodeId.parse(label)
        if node not in self.index:
            raise KeyError(f"node {label} is not in this tree")
        return node

    def out_edges(self, node: NodeId) -> tuple:
        """Edges leading away from the root out of ``node``."""
        return self._children.get(node, ())

    def edge(self, a: NodeId | str, b: NodeId | str) -> Edge:
        a = self.node(a) if isinstance(a, str) else a
        b = self.node(b) if isinstance(b, str) else b
        try:
            return self._edge_lookup[frozenset((a, b))]
        except KeyError:
            raise KeyError(f"no edge between {a} and {b}") from None

    @property
    def leaves(self) -> list[NodeId]:
        """Leaf ``e`` sites (branch ends before any imaging termination)."""
        return [n for n in self.nodes if n.kind == "e" and not self._has_odd_child(n)]

    @property
    def receivers(self) -> list[NodeId]:
        """Detector sites: ``j`` nodes with imaging, leaf ``e`` nodes without."""
        if self.imaging:
            return [n for n in self.nodes if n.kind == "j"]
        return self.leaves

    @property
    def imaging_links(self) -> list[Edge]:
        return [e for e in self.edges if e.src.kind == "i"]

    def _has_odd_child(self, node: NodeId) -> bool:
        return any(e.dst.kind == "o" for e in self.out_edges(node))

    def nodes_of_kind(self, kinds: str) -> list[NodeId]:
        return [n for n in self.nodes if n.kind in kinds]

    def subtree(self, node: NodeId) -> list[NodeId]:
        """``node`` and everything further from the root below it."""
        out, stack = [], [node]
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(e.dst for e in self.out_edges(cur))
        return out

    def receivers_under(self, address: Address) -> list[NodeId]:
        n = len(address)
        return [r for r in self.receivers if tuple(r.address[:n]) == tuple(address)]


@dataclass(frozen=True)
class OcclusionMask:
    """A set of broken edges (bombs, or deliberately cut links)."""

    edges: frozenset = frozenset()

    def __contains__(self, edge: Edge) -> bool:
        return edge in self.edges

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(sorted(self.edges, key=lambda e: e.label))

    @classmethod
    def from_pairs(cls, tree: TreeGraph, pairs: Iterable) -> "OcclusionMask":
        """Build a mask from ``(a, b)`` node pairs (NodeId or label) or Edge objects."""
        edges = set()
        for item in pairs:
            if isinstance(item, Edge):
                if tree._edge_lookup.get(frozenset((item.src, item.dst))) != item:
                    raise KeyError(f"edge {item.label} is not in this tree")
                edges.add(item)
            else:
                a, b = item
                edges.add(tree.edge(a, b))
        return cls(frozenset(edges))

    def validate(self, tree: TreeGraph) -> None:
        for e in self.edges:
            if tree._edge_lookup.get(frozenset((e.src, e.dst))) != e:
                raise KeyError(f"occluded edge {e.label} is not in this tree")


NO_OCCLUSION = OcclusionMask()


def _branch_depth(address: Address, depth: int, overrides: Mapping[Address, int]) -> int:
    best, best_len = depth, -1
    for prefix, d in overrides.items():
        n = len(prefix)
        if n > best_len and tuple(address[:n]) == prefix:
            best, best_len = d, n
    return best


def count_nodes(depth: int, imaging: bool) -> int:
    """Basis size of a uniform tree: 3*2^d - 2, or 5*2^d - 2 with imaging."""
    return (5 if imaging else 3) * 2**depth - 2


def build_tree(
    depth: int,
    imaging: bool = False,
    branch_depths: Mapping | None = None,
    max_nodes: int = DEFAULT_NODE_BUDGET,
) -> TreeGraph:
    """Build an MRAP tree whose leaves sit ``depth`` branchings from the root.

    ``branch_depths`` maps an address prefix (tuple or ``1T`` string) to the leaf
    depth used for the subtree below it; the longest matching prefix wins.
    Raises TreeSizeError for depth < 1 or a basis larger than ``max_nodes``.
    """
    if int(depth) != depth or depth < 1:
        raise TreeSizeError(f"tree depth must be a positive integer, got {depth!r}")
    depth = int(depth)
    overrides = {}
    for key, d in dict(branch_depths or {}).items():
        prefix = parse_address(key) if isinstance(key, str) else tuple(key)
        if int(d) != d or d <= len(prefix) or d < 1:
            raise TreeSizeError(
                f"branch depth {d!r} for {format_address(prefix)} must exceed the prefix length"
            )
        overrides[prefix] = int(d)

    max_depth = max([depth, *overrides.values()])
    # cheap upper bound before enumerating anything
    if count_nodes(max_depth, imaging) > max_nodes and max_depth > 24:
        raise TreeSizeError(f"depth {max_depth} exceeds the node budget of {max_nodes}")

    levels: dict[int, dict[str, list[Address]]] = {}
    edges: list[Edge] = []
    queue = deque([()])
    count = 0
    while queue:
        addr = queue.popleft()
        lvl = levels.setdefault(len(addr), {"e": [], "o": [], "i": [], "j": []})
        lvl["e"].append(addr)
        count += 1
        e_node = NodeId(addr, "e")
        if len(addr) < _branch_depth(addr, depth, overrides):
            lvl["o"].append(addr)
            o_node = NodeId(addr, "o")
            edges.append(Edge(e_node, o_node, "A"))
            for digit in (UP, DOWN):
                child = addr + (digit,)
                edges.append(Edge(o_node, NodeId(child, "e"), "B"))
                queue.append(child)
            count += 1
        elif imaging:
            lvl["i"].append(addr)
            lvl["j"].append(addr)
            i_node, j_node = NodeId(addr, "i"), NodeId(addr, "j")
            edges.append(Edge(e_node, i_node, "A"))
            edges.append(Edge(i_node, j_node, "B"))
            count += 2
        if count > max_nodes:
            raise TreeSizeError(
                f"tree exceeds the node budget of {max_nodes} basis states"
            )

    nodes = []
    for level in sorted(levels):
        for kind in "eoij":
            for addr in sorted(levels[level][kind], key=address_value, reverse=True):
                nodes.append(NodeId(addr, kind))

    known = {n.address for n in nodes if n.kind == "e"}
    for prefix in overrides:
        if prefix not in known:
            raise TreeSizeError(
                f"branch override {format_address(prefix)} does not name a site of this tree"
            )

    children: dict[NodeId, list[Edge]] = {}
    for e in edges:
        children.setdefault(e.src, []).append(e)
    return TreeGraph(
        depth=max(len(n.address) for n in nodes),
        imaging=bool(imaging),
        nodes=tuple(nodes),
        edges=tuple(edges),
        branch_depths=tuple(sorted(overrides.items())),
        base_depth=depth,
        index={n: i for i, n in enumerate(nodes)},
        _children={k: tuple(v) for k, v in children.items()},
        _edge_lookup={frozenset((e.src, e.dst)): e for e in edges},
    )


def root_component(tree: TreeGraph, occ: OcclusionMask = NO_OCCLUSION) -> np.ndarray:
    """Sorted basis indices reachable from the root through unbroken edges.

    The coupling matrix is block diagonal across connected components, so a
    particle injected at the root never leaves this block.
    """
    reached = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        reached.append(tree.index[node])
        for e in tree.out_edges(node):
            if e not in occ.edges:
                stack.append(e.dst)
    return np.array(sorted(reached), dtype=int)


def behind_breaks(tree: TreeGraph, occ: OcclusionMask) -> list[NodeId]:
    """Nodes cut off from the root by at least one broken edge."""
    keep = set(root_component(tree, occ).tolist())
    return [n for i, n in enumerate(tree.nodes) if i not in keep]


def two_coloring(tree: TreeGraph) -> np.ndarray:
    """Parity of the link count from the root for every node (0 or 1)."""
    color = np.zeros(tree.n_nodes, dtype=int)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        for e in tree.out_edges(node):
            color[tree.index[e.dst]] = 1 - color[tree.index[node]]
            stack.append(e.dst)
    return color


def compress_branches(tree: TreeGraph, leaves: Iterable[Address]) -> frozenset:
    """Collapse a set of receiver addresses into maximal fully-covered prefixes.

    A prefix is reported instead of its receivers whenever every receiver
    below it is in ``leaves``; the root address ``()`` means everything.
    """
    leaves = {tuple(a) for a in leaves}
    all_addrs = [tuple(r.address) for r in tree.receivers]
    prefixes = {a[:k] for a in all_addrs for k in range(len(a) + 1)}
    covered = {
        p for p in prefixes
        if all(a in leaves for a in all_addrs if a[: len(p)] == p)
    }
    return frozenset(p for p in covered if not (len(p) and p[:-1] in covered))


def tree_to_dict(tree: TreeGraph, occ: OcclusionMask = NO_OCCLUSION) -> dict:
    """JSON-ready description of a tree and its broken edges."""
    return {
        "depth": tree.depth,
        "base_depth": tree.base_depth,
        "imaging": tree.imaging,
        "branch_depths": {format_address(k): v for k, v in tree.branch_depths},
        "nodes": [
            {
                "address": list(n.address),
                "label": n.label,
                "class": n.kind,
                "index": i,
            }
            for i, n in enumerate(tree.nodes)
        ],
        "occluded_edges": [[e.src.label, e.dst.label] for e in occ],
    }


def tree_from_dict(data: dict) -> tuple[TreeGraph, OcclusionMask]:
    tree = build_tree(
        data.get("base_depth", data["depth"]), data.get("imaging", False), data.get("branch_depths") or None
    )
    occ = OcclusionMask.from_pairs(tree, [tuple(p) for p in data.get("occluded_edges", [])])
    return tree, occ
