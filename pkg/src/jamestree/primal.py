"""The James tree norm on finite-depth coefficient vectors.

The norm of x is the supremum, over families of pairwise disjoint segments
{S_1..S_m}, of sqrt(sum_i (sum_{t in S_i} x_t)^2).  Two evaluators live
here: an exhaustive oracle over all enumerated families (depth-gated) and a
bottom-up dynamic program whose per-node state is a convex-hull-pruned
frontier of open-segment candidates.  The DP also reconstructs an achieving
family, which doubles as a norming functional and as the separation oracle
for the dual-norm solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tree import (
    NodeId,
    OracleDepthError,
    Segment,
    SegmentFamily,
    _check_gate,
    _family_id_iter,
    enumerate_segments,
    lex_index,
    node_count,
    node_from_lex,
)

# Points are dropped from a DP frontier only when they sit strictly below
# the upper envelope by more than this; keeping near-ties costs a few states
# and protects the 1e-9 equivalence contract against rounding.
HULL_TOL = 1e-12

COMPARISON_TOL = 1e-9


@dataclass
class JTVector:
    """Finitely supported coefficients on the depth-``depth`` tree."""

    depth: int
    coeffs: dict[NodeId, float]

    def __post_init__(self) -> None:
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        clean: dict[NodeId, float] = {}
        for node, value in self.coeffs.items():
            if node.level > self.depth:
                raise ValueError(
                    f"node {node} at level {node.level} exceeds depth {self.depth}"
                )
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"coefficient at {node} is not finite: {value!r}")
            if value != 0.0:
                clean[node] = value
        self.coeffs = clean

    @staticmethod
    def zero(depth: int) -> "JTVector":
        return JTVector(depth, {})

    @staticmethod
    def from_array(depth: int, values: Sequence[float]) -> "JTVector":
        n = node_count(depth)
        if len(values) != n:
            raise ValueError(f"expected {n} coefficients for depth {depth}, got {len(values)}")
        return JTVector(
            depth,
            {node_from_lex(i): float(v) for i, v in enumerate(values) if v != 0.0},
        )

    def to_array(self) -> np.ndarray:
        out = np.zeros(node_count(self.depth))
        for node, value in self.coeffs.items():
            out[lex_index(node)] = value
        return out

    def support_level(self) -> int:
        """Deepest level carrying a nonzero coefficient (-1 if zero vector)."""
        return max((n.level for n in self.coeffs), default=-1)

    def __getitem__(self, node: NodeId) -> float:
        return self.coeffs.get(node, 0.0)


@dataclass
class NormCertificate:
    """An achieving disjoint segment family with its unit ell2 weights.

    ``value == sum_i weights[i] * s_i`` where ``s_i`` is the coefficient sum
    along the i-th segment of ``family.sorted_segments()``; the weight vector
    has unit ell2 norm (empty for the zero vector).
    """

    value: float
    family: SegmentFamily
    weights: tuple[float, ...]

    def pairs(self) -> list[tuple[Segment, float]]:
        return list(zip(self.family.sorted_segments(), self.weights))


def _as_array(x: JTVector) -> np.ndarray:
    return x.to_array()


def _certificate_from_chains(
    values: Sequence[float], chains: list[list[int]]
) -> NormCertificate:
    """Turn index chains into a NormCertificate (drops nothing, normalizes)."""
    segments = [
        Segment(tuple(node_from_lex(i) for i in chain)) for chain in chains
    ]
    family = SegmentFamily(frozenset(segments))
    ordered = family.sorted_segments()
    sums = [sum(values[lex_index(t)] for t in seg.nodes) for seg in ordered]
    total = math.sqrt(sum(s * s for s in sums))
    if total == 0.0:
        return NormCertificate(0.0, SegmentFamily(frozenset()), ())
    weights = tuple(s / total for s in sums)
    return NormCertificate(total, family, weights)


# ---------------------------------------------------------------------------
# Dynamic program
# ---------------------------------------------------------------------------


def _prune_hull(entries: list[tuple[float, float, tuple]]) -> list[tuple[float, float, tuple]]:
    """Keep only frontier states on (or within HULL_TOL of) the upper envelope.

    A state (o, c) contributes c + (o + d)^2 = (c + o^2) + 2*o*d + d^2 after
    its open segment later absorbs an ancestor sum d; since d^2 is common to
    all states, domination is domination of the lines with slope 2o and
    intercept c + o^2, i.e. an upper convex hull in (slope, intercept).
    """
    if len(entries) <= 2:
        return entries
    pts = []
    for idx, (o, c, _src) in enumerate(entries):
        pts.append((2.0 * o, c + o * o, idx))
    pts.sort(key=lambda p: (p[0], -p[1]))
    # Collapse duplicate slopes, keeping the best intercept (first after sort).
    dedup: list[tuple[float, float, int]] = []
    for p in pts:
        if dedup and dedup[-1][0] == p[0]:
            continue
        dedup.append(p)
    if len(dedup) <= 2:
        return [entries[p[2]] for p in dedup]
    hull: list[tuple[float, float, int]] = []
    for p in dedup:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # b is dropped only if strictly below chord a..p by more than tol
            span = p[0] - a[0]
            gap = a[1] * span + (p[1] - a[1]) * (b[0] - a[0]) - b[1] * span
            if gap > HULL_TOL * span:
                hull.pop()
            else:
                break
        hull.append(p)
    return [entries[p[2]] for p in hull]


def norm_dp_array(
    values: Sequence[float], *, prune: bool = True, want_chains: bool = False
):
    """DP evaluation of the JT norm on a lex-ordered coefficient array.

    Returns the norm, or ``(norm, chains)`` with ``chains`` the achieving
    family as lists of lex node indices when ``want_chains`` is set.

    Per node the state is the best all-closed total plus a frontier of
    (open-sum, closed-total) pairs for the segment topped at that node; a
    parent extends at most one child's open segment.  With ``prune`` the
    frontier keeps only its upper convex hull (see ``_prune_hull``), which
    is lossless for the eventual objective closed + (open + d)^2.
    """
    vals = [float(v) for v in values]
    n = len(vals)
    if n <= 0 or (n + 1) & n:
        raise ValueError(f"coefficient array length must be 2**k - 1, got {n}")
    first_leaf = n >> 1

    closed = [0.0] * n
    closed_src: list[tuple] = [()] * n
    frontiers: list[list[tuple[float, float, tuple]]] = [[] for _ in range(n)]

    for i in range(n - 1, -1, -1):
        xi = vals[i]
        if i >= first_leaf:
            fr = [(xi, 0.0, ("stop",))]
            base = 0.0
        else:
            l, r = 2 * i + 1, 2 * i + 2
            base = closed[l] + closed[r]
            fr = [(xi, base, ("stop",))]
            for j, (o, c, _s) in enumerate(frontiers[l]):
                fr.append((xi + o, c + closed[r], ("L", j)))
            for j, (o, c, _s) in enumerate(frontiers[r]):
                fr.append((xi + o, c + closed[l], ("R", j)))
            if prune:
                fr = _prune_hull(fr)
        frontiers[i] = fr
        best = base
        best_src: tuple = ("split",)
        for j, (o, c, _s) in enumerate(fr):
            closed_here = c + o * o
            if closed_here > best:
                best = closed_here
                best_src = ("close", j)
        closed[i] = best
        closed_src[i] = best_src

    value = math.sqrt(closed[0])
    if not want_chains:
        return value

    chains: list[list[int]] = []

    def rebuild(v: int) -> None:
        src = closed_src[v]
        if src[0] == "split":
            if v < first_leaf:
                rebuild(2 * v + 1)
                rebuild(2 * v + 2)
            return
        cur, j = v, src[1]
        chain: list[int] = []
        while True:
            chain.append(cur)
            step = frontiers[cur][j][2]
            if step[0] == "stop":
                if cur < first_leaf:
                    rebuild(2 * cur + 1)
                    rebuild(2 * cur + 2)
                break
            side, j = step
            down = 2 * cur + 1 if side == "L" else 2 * cur + 2
            other = 2 * cur + 2 if side == "L" else 2 * cur + 1
            rebuild(other)
            cur = down
        chains.append(chain)

    rebuild(0)
    # Zero-sum segments carry weight 0 and add nothing; drop them so the
    # certificate stays minimal (the zero vector yields an empty family).
    chains = [ch for ch in chains if sum(vals[i] for i in ch) != 0.0]
    return value, chains


def norm_dp(x: JTVector, *, prune: bool = True) -> tuple[float, NormCertificate]:
    """JT norm of ``x`` with an achieving-family certificate."""
    arr = _as_array(x)
    value, chains = norm_dp_array(arr, prune=prune, want_chains=True)
    cert = _certificate_from_chains(arr, chains)
    return value, cert


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


@dataclass
class _BruteTables:
    segments: list[Segment]
    seg_flat: np.ndarray
    seg_starts: np.ndarray
    seg_top: np.ndarray
    seg_len: np.ndarray
    fam_flat: np.ndarray
    fam_starts: np.ndarray
    fam_count: int


_BRUTE_CACHE: dict[int, _BruteTables] = {}


def _brute_tables(depth: int) -> _BruteTables:
    cached = _BRUTE_CACHE.get(depth)
    if cached is not None:
        return cached
    segments = enumerate_segments(depth)
    seg_flat: list[int] = []
    seg_starts: list[int] = []
    for seg in segments:
        seg_starts.append(len(seg_flat))
        seg_flat.extend(lex_index(t) for t in seg.nodes)
    fam_flat: list[int] = []
    fam_starts: list[int] = []
    for fam in _family_id_iter(depth):
        fam_starts.append(len(fam_flat))
        fam_flat.extend(fam)
    tables = _BruteTables(
        segments=segments,
        seg_flat=np.asarray(seg_flat, dtype=np.int64),
        seg_starts=np.asarray(seg_starts, dtype=np.int64),
        seg_top=np.asarray([lex_index(s.top) for s in segments], dtype=np.int64),
        seg_len=np.asarray([len(s) for s in segments], dtype=np.int64),
        fam_flat=np.asarray(fam_flat, dtype=np.int32),
        fam_starts=np.asarray(fam_starts, dtype=np.int64),
        fam_count=len(fam_starts),
    )
    _BRUTE_CACHE[depth] = tables
    return tables


def _family_members(tables: _BruteTables, fam_id: int) -> np.ndarray:
    start = tables.fam_starts[fam_id]
    stop = (
        tables.fam_starts[fam_id + 1]
        if fam_id + 1 < tables.fam_count
        else len(tables.fam_flat)
    )
    return tables.fam_flat[start:stop]


def norm_bruteforce(x: JTVector) -> tuple[float, NormCertificate]:
    """Exhaustive JT norm: maximize over every enumerated disjoint family.

    Depth-gated (see ``tree.oracle_depth_gate``).  Among equal-value
    families the certificate picks the one whose (top, length) multiset is
    lexicographically least, so reruns are reproducible.
    """
    _check_gate(x.depth, None, "norm_bruteforce")
    arr = _as_array(x)
    if not arr.any():
        return 0.0, NormCertificate(0.0, SegmentFamily(frozenset()), ())
    tables = _brute_tables(x.depth)
    segsums = np.add.reduceat(arr[tables.seg_flat], tables.seg_starts)
    sq = segsums * segsums
    famvals = np.add.reduceat(sq[tables.fam_flat], tables.fam_starts)
    best_val = float(famvals.max())
    ties = np.flatnonzero(famvals == best_val)
    best_id = int(ties[0])
    if len(ties) > 1:
        best_key = None
        for fid in ties:
            members = _family_members(tables, int(fid))
            key = sorted(
                (int(tables.seg_top[s]), int(tables.seg_len[s])) for s in members
            )
            if best_key is None or key < best_key:
                best_key = key
                best_id = int(fid)
    members = _family_members(tables, best_id)
    family = SegmentFamily(frozenset(tables.segments[int(s)] for s in members))
    ordered = family.sorted_segments()
    sums = [sum(arr[lex_index(t)] for t in seg.nodes) for seg in ordered]
    total = math.sqrt(sum(s * s for s in sums))
    weights = tuple(s / total for s in sums) if total else ()
    return math.sqrt(best_val), NormCertificate(total, family, weights)


# ---------------------------------------------------------------------------
# Projections and norming functionals
# ---------------------------------------------------------------------------


def project_primal(x: JTVector, N: int, M: int | None = None) -> JTVector:
    """Zero all coefficients outside levels [N, M] (M=None means horizon).

    Level-band restrictions are contractive for the JT norm: any family
    evaluated on the restriction is matched on x by intersecting its
    segments with the band.
    """
    top = x.depth if M is None else M
    if N < 0 or N > top:
        raise ValueError(f"invalid level band [{N}, {M}] at depth {x.depth}")
    return JTVector(
        x.depth,
        {node: v for node, v in x.coeffs.items() if N <= node.level <= top},
    )


def norming_functional(x: JTVector):
    """Unit dual vector attaining ||x|| in the pairing.

    Built from the DP certificate: f = sum_i a_i * 1_{S_i} where a is the
    certificate's unit weight vector, so f(x) = ||x|| exactly and the dual
    norm of f is 1.
    """
    from . import dual as _dual

    value, cert = norm_dp(x)
    if value == 0.0:
        raise ValueError("the zero vector has no norming functional")
    coeffs: dict[NodeId, float] = {}
    for seg, weight in cert.pairs():
        for node in seg.nodes:
            coeffs[node] = weight
    return _dual.DualVector(x.depth, coeffs)
