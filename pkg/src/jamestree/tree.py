"""Binary-tree combinatorics underlying the James tree norm.

Nodes are finite sign sequences (level = length); the tree order is
"strict prefix".  A segment is a downward chain with exactly one node on
each of a run of consecutive levels; a segment family is a set of pairwise
node-disjoint segments.  Everything in this module is exact integer and
tuple combinatorics; the analytic side lives in ``primal`` / ``dual``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

MINUS = -1
PLUS = 1
SIGNS = (MINUS, PLUS)

ORACLE_DEPTH_DEFAULT = 3
ORACLE_DEPTH_ENV = "JT_ORACLE_DEPTH"


class OracleDepthError(ValueError):
    """Raised when an exhaustive enumeration is requested above the depth gate."""


def oracle_depth_gate() -> int:
    """Current depth cap for exhaustive enumeration oracles.

    Reads ``JT_ORACLE_DEPTH`` from the environment at call time, so a shell
    override raises the gate without code changes.
    """
    raw = os.environ.get(ORACLE_DEPTH_ENV)
    if raw is None:
        return ORACLE_DEPTH_DEFAULT
    try:
        value = int(raw)
    except ValueError as exc:
        raise OracleDepthError(
            f"{ORACLE_DEPTH_ENV} must be an integer, got {raw!r}"
        ) from exc
    if value < 0:
        raise OracleDepthError(f"{ORACLE_DEPTH_ENV} must be >= 0, got {value}")
    return value


def _check_gate(depth: int, max_depth: int | None, what: str) -> None:
    gate = oracle_depth_gate() if max_depth is None else max_depth
    if depth > gate:
        raise OracleDepthError(
            f"{what} is an exhaustive oracle, gated to depth <= {gate} "
            f"(requested {depth}); raise {ORACLE_DEPTH_ENV} or pass max_depth "
            f"to override"
        )


@dataclass(frozen=True)
class NodeId:
    """A tree node, identified by its sign sequence from the root."""

    path: tuple[int, ...]

    def __post_init__(self) -> None:
        for s in self.path:
            if s not in SIGNS:
                raise ValueError(f"node path entries must be -1 or +1, got {s!r}")

    @staticmethod
    def root() -> "NodeId":
        return NodeId(())

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def is_root(self) -> bool:
        return not self.path

    def child(self, sign: int) -> "NodeId":
        if sign not in SIGNS:
            raise ValueError(f"child sign must be -1 or +1, got {sign!r}")
        return NodeId(self.path + (sign,))

    def parent(self) -> "NodeId":
        if self.is_root:
            raise ValueError("the root has no parent")
        return NodeId(self.path[:-1])

    def ancestor_at(self, level: int) -> "NodeId":
        if not 0 <= level <= self.level:
            raise ValueError(f"no ancestor of {self} at level {level}")
        return NodeId(self.path[:level])

    def text(self) -> str:
        """Path string: '.' for the root, else signs as '+'/'-'."""
        if self.is_root:
            return "."
        return "".join("+" if s == PLUS else "-" for s in self.path)

    @staticmethod
    def from_text(text: str) -> "NodeId":
        if text == ".":
            return NodeId(())
        if not text:
            raise ValueError("empty node path; use '.' for the root")
        try:
            return NodeId(tuple(PLUS if ch == "+" else MINUS if ch == "-" else _bad(ch) for ch in text))
        except _BadSign as exc:
            raise ValueError(f"invalid node path {text!r}: {exc}") from None

    def __str__(self) -> str:
        return self.text()


class _BadSign(ValueError):
    pass


def _bad(ch: str) -> int:
    raise _BadSign(f"unexpected character {ch!r}")


def tree_less(a: NodeId, b: NodeId) -> bool:
    """Strict tree order: a < b iff a's path is a strict prefix of b's.

    The root precedes every other node as the special case of the empty
    prefix.  Nodes are comparable exactly when they lie on a common branch.
    """
    return a.level < b.level and b.path[: a.level] == a.path


def tree_leq(a: NodeId, b: NodeId) -> bool:
    return a == b or tree_less(a, b)


def comparable(a: NodeId, b: NodeId) -> bool:
    return a == b or tree_less(a, b) or tree_less(b, a)


def lex_index(node: NodeId) -> int:
    """Level-major linear index; within a level -1 sorts before +1.

    Bijection from the depth-D tree onto ``0 .. 2**(D+1)-2`` for every D at
    least the node's level.
    """
    rank = 0
    for s in node.path:
        rank = 2 * rank + (1 if s == PLUS else 0)
    return (1 << node.level) - 1 + rank


def node_from_lex(index: int) -> NodeId:
    """Inverse of :func:`lex_index`."""
    if index < 0:
        raise ValueError(f"lex index must be >= 0, got {index}")
    level = (index + 1).bit_length() - 1
    rank = index - ((1 << level) - 1)
    signs = []
    for shift in range(level - 1, -1, -1):
        signs.append(PLUS if (rank >> shift) & 1 else MINUS)
    return NodeId(tuple(signs))


def node_count(depth: int) -> int:
    """Number of nodes in the depth-D tree: 2**(D+1) - 1."""
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    return (1 << (depth + 1)) - 1


def level_slice(level: int) -> tuple[int, int]:
    """Half-open lex-index range [start, stop) of one level."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    return (1 << level) - 1, (1 << (level + 1)) - 1


def all_nodes(depth: int) -> Iterator[NodeId]:
    """All nodes of the depth-D tree in lex order."""
    for i in range(node_count(depth)):
        yield node_from_lex(i)


@dataclass(frozen=True)
class Segment:
    """A downward chain of nodes on consecutive levels."""

    nodes: tuple[NodeId, ...]

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("a segment must contain at least one node")
        for prev, cur in zip(self.nodes, self.nodes[1:]):
            if cur.level != prev.level + 1 or cur.path[: prev.level] != prev.path:
                raise ValueError(
                    f"segment nodes must descend one level at a time; "
                    f"{cur} does not follow {prev}"
                )

    @property
    def top(self) -> NodeId:
        return self.nodes[0]

    @property
    def bottom(self) -> NodeId:
        return self.nodes[-1]

    def __len__(self) -> int:
        return len(self.nodes)

    def node_set(self) -> frozenset[NodeId]:
        return frozenset(self.nodes)

    def sort_key(self) -> tuple[int, ...]:
        return tuple(lex_index(t) for t in self.nodes)

    def __str__(self) -> str:
        return "{" + ",".join(t.text() for t in self.nodes) + "}"


def segment_from_top(top: NodeId, signs: Sequence[int] = ()) -> Segment:
    """Build the segment descending from ``top`` along ``signs``."""
    nodes = [top]
    for s in signs:
        nodes.append(nodes[-1].child(s))
    return Segment(tuple(nodes))


@dataclass(frozen=True)
class SegmentFamily:
    """A set of pairwise node-disjoint segments."""

    segments: frozenset[Segment]

    def __post_init__(self) -> None:
        seen: set[NodeId] = set()
        total = 0
        for seg in self.segments:
            seen.update(seg.nodes)
            total += len(seg.nodes)
        if len(seen) != total:
            raise ValueError("segments in a family must be pairwise node-disjoint")

    @staticmethod
    def of(*segments: Segment) -> "SegmentFamily":
        return SegmentFamily(frozenset(segments))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.sorted_segments())

    def sorted_segments(self) -> list[Segment]:
        return sorted(self.segments, key=Segment.sort_key)

    def tops_key(self) -> tuple[tuple[int, int], ...]:
        """Deterministic tie-break key: sorted (top index, length) pairs."""
        return tuple(sorted((lex_index(s.top), len(s)) for s in self.segments))

    def __str__(self) -> str:
        return "{" + ", ".join(str(s) for s in self.sorted_segments()) + "}"


@dataclass(frozen=True)
class Branch:
    """A root-to-horizon chain in the depth-D tree."""

    nodes: tuple[NodeId, ...]

    def __post_init__(self) -> None:
        if not self.nodes or not self.nodes[0].is_root:
            raise ValueError("a branch must start at the root")
        for prev, cur in zip(self.nodes, self.nodes[1:]):
            if cur.level != prev.level + 1 or cur.path[: prev.level] != prev.path:
                raise ValueError("branch nodes must descend one level at a time")

    @staticmethod
    def from_leaf(leaf: NodeId) -> "Branch":
        return Branch(tuple(leaf.ancestor_at(k) for k in range(leaf.level + 1)))

    @property
    def leaf(self) -> NodeId:
        return self.nodes[-1]

    @property
    def depth(self) -> int:
        return self.leaf.level


def all_branches(depth: int) -> list[Branch]:
    """All 2**D branches of the depth-D tree, ordered by leaf lex index."""
    start, stop = level_slice(depth)
    return [Branch.from_leaf(node_from_lex(i)) for i in range(start, stop)]


def segment_count(depth: int) -> int:
    """Number of segments in the depth-D tree.

    Each node tops ``2**(D - level + 1) - 1`` descending chains (every step
    picks one of two children), which telescopes to ``D * 2**(D+1) + 1``.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    return depth * (1 << (depth + 1)) + 1


def enumerate_segments(depth: int) -> list[Segment]:
    """All segments of the depth-D tree, sorted by (top, path) lex keys."""
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    out: list[Segment] = []

    def chains(node: NodeId) -> Iterator[tuple[NodeId, ...]]:
        yield (node,)
        if node.level < depth:
            for sign in SIGNS:
                for tail in chains(node.child(sign)):
                    yield (node,) + tail

    for node in all_nodes(depth):
        for chain in chains(node):
            out.append(Segment(chain))
    out.sort(key=Segment.sort_key)
    return out


def _child_indices(index: int, depth: int) -> tuple[int, int] | None:
    level = (index + 1).bit_length() - 1
    if level >= depth:
        return None
    rank = index - ((1 << level) - 1)
    base = (1 << (level + 1)) - 1 + 2 * rank
    return base, base + 1


def _family_id_iter(depth: int) -> Iterator[tuple[int, ...]]:
    """Yield every non-empty disjoint family as a tuple of segment indices.

    Per-subtree family lists are memoized below the root; the root level is
    streamed, so the full output is never materialized at once.
    """
    segments = enumerate_segments(depth)
    seg_node_idx = [tuple(lex_index(t) for t in s.nodes) for s in segments]
    topped: dict[int, list[int]] = {}
    for sid, s in enumerate(segments):
        topped.setdefault(lex_index(s.top), []).append(sid)

    memo: dict[int, list[tuple[int, ...]]] = {}

    def hanging_roots(sid: int) -> list[int]:
        """Subtree roots dangling off a segment (children not on the chain)."""
        chain = seg_node_idx[sid]
        on_chain = set(chain)
        roots: list[int] = []
        for v in chain:
            kids = _child_indices(v, depth)
            if kids is None:
                continue
            roots.extend(k for k in kids if k not in on_chain)
        return roots

    def product_over(roots: list[int], at: int, prefix: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        if at == len(roots):
            yield prefix
            return
        for fam in within(roots[at]):
            yield from product_over(roots, at + 1, prefix + fam)

    def generate(v: int) -> Iterator[tuple[int, ...]]:
        kids = _child_indices(v, depth)
        if kids is None:
            yield ()
        else:
            for f1 in within(kids[0]):
                for f2 in within(kids[1]):
                    yield f1 + f2
        for sid in topped.get(v, ()):
            yield from product_over(hanging_roots(sid), 0, (sid,))

    def within(v: int) -> list[tuple[int, ...]]:
        got = memo.get(v)
        if got is None:
            got = list(generate(v))
            memo[v] = got
        return got

    for fam in generate(0):
        if fam:
            yield fam


def enumerate_families(depth: int, *, max_depth: int | None = None) -> Iterator[SegmentFamily]:
    """Stream every non-empty pairwise-disjoint segment family once.

    Exhaustive and exponential; gated to ``oracle_depth_gate()`` (or the
    explicit ``max_depth`` override).  The family count grows from 11 at
    depth 1 to 783359 at depth 3.
    """
    _check_gate(depth, max_depth, "enumerate_families")
    segments = enumerate_segments(depth)

    def _stream() -> Iterator[SegmentFamily]:
        for ids in _family_id_iter(depth):
            yield SegmentFamily(frozenset(segments[i] for i in ids))

    return _stream()
