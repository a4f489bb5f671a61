"""Dual norm and dual-side maps for James tree coefficient functionals.

The dual norm ``sup {<x*, x> : ||x||_JT <= 1}`` is computed by constraint
generation: the unit-ball constraint is an intersection of second-order
constraints ``||A_F x||_2 <= 1``, one per disjoint segment family ``F``
(rows of ``A_F`` are the segment indicators), and the primal DP supplies a
most-violated family for any candidate point.  A working-set subproblem is
solved by projected gradient ascent with cyclic closed-form projections,
then certified from above by minimizing the Lagrangian dual of the
working-set relaxation, whose value bounds the true dual norm for any
nonnegative multipliers.  Solvers keep per-depth pools of discovered cut
families and of unit-norm maximizers, so repeated calls at one depth warm
up over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .primal import JTVector, norm_dp_array
from .tree import (
    Branch,
    NodeId,
    Segment,
    SegmentFamily,
    all_branches,
    lex_index,
    node_count,
    node_from_lex,
)

TOL_DEFAULT = 1e-7
PROJECTION_BUDGET_DEFAULT = 10_000
_MAX_ROUNDS = 120
_ASCENT_STEPS = 8
_PEEL_DEPTH = 12
_UPPER_MARGIN = 1e-12
_STALL_LIMIT = 8


@dataclass
class DualVector:
    """Coefficients of a functional against the node biorthogonals."""

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
    def zero(depth: int) -> "DualVector":
        return DualVector(depth, {})

    @staticmethod
    def from_array(depth: int, values: Sequence[float]) -> "DualVector":
        n = node_count(depth)
        if len(values) != n:
            raise ValueError(f"expected {n} coefficients for depth {depth}, got {len(values)}")
        return DualVector(
            depth,
            {node_from_lex(i): float(v) for i, v in enumerate(values) if v != 0.0},
        )

    def to_array(self) -> np.ndarray:
        out = np.zeros(node_count(self.depth))
        for node, value in self.coeffs.items():
            out[lex_index(node)] = value
        return out

    def support_level(self) -> int:
        return max((n.level for n in self.coeffs), default=-1)

    def __getitem__(self, node: NodeId) -> float:
        return self.coeffs.get(node, 0.0)


def pairing(xstar: DualVector, x: JTVector) -> float:
    """Canonical pairing: sum over nodes of functional times vector entry."""
    if xstar.depth != x.depth:
        raise ValueError(f"depth mismatch: {xstar.depth} vs {x.depth}")
    return sum(c * x.coeffs.get(node, 0.0) for node, c in xstar.coeffs.items())


@dataclass
class DualNormResult:
    """Certified dual-norm evaluation.

    ``value`` equals the pairing with ``maximizer`` (a vector of JT norm 1,
    up to rounding), and the true dual norm lies in [value, value + gap].
    """

    value: float
    maximizer: JTVector
    active_families: list[SegmentFamily]
    gap: float
    iterations: int
    projections: int

    def to_record(self) -> dict:
        return {
            "value": self.value,
            "gap": self.gap,
            "families": len(self.active_families),
            "iterations": self.iterations,
        }


class DualNormError(RuntimeError):
    """Raised when the solver exhausts its budget before certifying."""

    def __init__(self, message: str, lower: float, upper: float, iterations: int, projections: int):
        super().__init__(
            f"{message}: best bounds [{lower:.12g}, {upper:.12g}] "
            f"after {iterations} rounds / {projections} projections"
        )
        self.lower = lower
        self.upper = upper
        self.iterations = iterations
        self.projections = projections


# A cut is stored as a canonical tuple of chains; each chain is a tuple of
# lex node indices forming one segment of the family.
CutKey = tuple[tuple[int, ...], ...]


def _canonical_cut(chains: Iterable[Sequence[int]]) -> CutKey:
    return tuple(sorted(tuple(ch) for ch in chains))


def _cut_to_family(key: CutKey) -> SegmentFamily:
    return SegmentFamily(
        frozenset(
            Segment(tuple(node_from_lex(i) for i in chain)) for chain in key
        )
    )


class _FamilyBlock:
    """Flat storage for a list of segment families, built for vector math.

    All member families' rows (segments) are concatenated into one index
    array with reduceat boundaries, so per-row sums, per-family squared
    norms, and the quadratic-form assembly of ``sum lam_F A_F^T A_F`` are
    single vectorized calls instead of per-family Python loops.
    """

    def __init__(self, n: int):
        self.n = n
        self.keys: list[CutKey] = []
        self.key_index: dict[CutKey, int] = {}
        self._staged: list[tuple[CutKey, CutKey]] = []
        self._dirty = False
        self.cols = np.empty(0, dtype=np.intp)
        self.row_starts = np.empty(0, dtype=np.intp)
        self.row_lens = np.empty(0, dtype=np.intp)
        self.fam_starts = np.empty(0, dtype=np.intp)
        self.row_fam = np.empty(0, dtype=np.intp)
        self.quad_pos = np.empty(0, dtype=np.intp)
        self.quad_fam = np.empty(0, dtype=np.intp)
        # per-family projection data: (cols, local row starts, row lens)
        self.proj: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    @property
    def m(self) -> int:
        return len(self.keys)

    def __contains__(self, key: CutKey) -> bool:
        return key in self.key_index

    def append(self, key: CutKey) -> None:
        if key in self.key_index:
            return
        self.key_index[key] = len(self.keys)
        self.keys.append(key)
        self._staged.append((key, key))
        self._dirty = True

    def drop(self, indices: set[int]) -> None:
        if not indices:
            return
        kept = [k for j, k in enumerate(self.keys) if j not in indices]
        self.keys = []
        self.key_index = {}
        self._staged = []
        for key in kept:
            self.key_index[key] = len(self.keys)
            self.keys.append(key)
            self._staged.append((key, key))
        self.cols = np.empty(0, dtype=np.intp)
        self._rebuilt_from_scratch = True
        self._dirty = True

    def _rebuild(self) -> None:
        cols: list[int] = []
        row_starts: list[int] = []
        row_lens: list[int] = []
        fam_starts: list[int] = []
        row_fam: list[int] = []
        quad_pos: list[np.ndarray] = []
        quad_fam: list[int] = []
        proj: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        n = self.n
        for fam_id, key in enumerate(self.keys):
            fam_starts.append(len(row_starts))
            fam_col_start = len(cols)
            local_starts = []
            local_lens = []
            for chain in key:
                row_starts.append(len(cols))
                local_starts.append(len(cols) - fam_col_start)
                local_lens.append(len(chain))
                row_lens.append(len(chain))
                row_fam.append(fam_id)
                idx = np.asarray(chain, dtype=np.intp)
                cols.extend(chain)
                pos = (idx[:, None] * n + idx[None, :]).ravel()
                quad_pos.append(pos)
                quad_fam.extend([fam_id] * len(pos))
            fam_cols = np.asarray(cols[fam_col_start:], dtype=np.intp)
            proj.append(
                (
                    fam_cols,
                    np.asarray(local_starts, dtype=np.intp),
                    np.asarray(local_lens, dtype=np.intp),
                )
            )
        self.cols = np.asarray(cols, dtype=np.intp)
        self.row_starts = np.asarray(row_starts, dtype=np.intp)
        self.row_lens = np.asarray(row_lens, dtype=np.intp)
        self.fam_starts = np.asarray(fam_starts, dtype=np.intp)
        self.row_fam = np.asarray(row_fam, dtype=np.intp)
        self.quad_pos = (
            np.concatenate(quad_pos) if quad_pos else np.empty(0, dtype=np.intp)
        )
        self.quad_fam = np.asarray(quad_fam, dtype=np.intp)
        self.proj = proj
        self._dirty = False

    def _fresh(self) -> None:
        if self._dirty:
            self._rebuild()

    def row_sums(self, x: np.ndarray) -> np.ndarray:
        self._fresh()
        if not len(self.row_starts):
            return np.empty(0)
        return np.add.reduceat(x[self.cols], self.row_starts)

    def family_norms_sq(self, x: np.ndarray) -> np.ndarray:
        self._fresh()
        if not self.m:
            return np.empty(0)
        sums = self.row_sums(x)
        return np.add.reduceat(sums * sums, self.fam_starts)

    def family_cross(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Per-family ``<A_F x, A_F d>``: half the growth rate of the
        squared family norm when moving from ``x`` along ``d``."""
        self._fresh()
        if not self.m:
            return np.empty(0)
        sx = self.row_sums(x)
        sd = self.row_sums(d)
        return np.add.reduceat(sx * sd, self.fam_starts)

    def add_quadratic(self, q_flat: np.ndarray, lams: np.ndarray) -> None:
        """Accumulate ``sum_F lam_F A_F^T A_F`` onto a flattened n*n array."""
        self._fresh()
        if len(self.quad_pos):
            np.add.at(q_flat, self.quad_pos, lams[self.quad_fam])

    def scatter(self, fam_id: int, x: np.ndarray) -> np.ndarray:
        """``A_F^T A_F x`` for one family: segment sums spread over nodes."""
        self._fresh()
        cols, starts, lens = self.proj[fam_id]
        sums = np.add.reduceat(x[cols], starts)
        v = np.zeros(self.n)
        v[cols] = np.repeat(sums, lens)
        return v

    def project(self, fam_id: int, x: np.ndarray) -> np.ndarray:
        """Project onto ``||A_F x||_2 <= 1`` for one member family."""
        self._fresh()
        cols, starts, lens = self.proj[fam_id]
        return _shrink_to_family_ball(x, cols, starts, lens)


def _family_arrays(chains) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a family's chains into (cols, row starts, row lens)."""
    lens = np.array([len(chain) for chain in chains], dtype=np.intp)
    starts = np.zeros(len(lens), dtype=np.intp)
    np.cumsum(lens[:-1], out=starts[1:])
    cols = np.concatenate([np.asarray(chain, dtype=np.intp) for chain in chains])
    return cols, starts, lens


def _shrink_to_family_ball(
    x: np.ndarray, cols: np.ndarray, starts: np.ndarray, lens: np.ndarray
) -> np.ndarray:
    """Nearest point with ``||A_F x||_2 <= 1`` (closed form per family).

    Segment sums shrink to ``s_i / (1 + lam * len_i)``; ``lam`` solves
    the secular equation ``sum s_i^2/(1 + lam*len_i)^2 = 1`` by Newton
    from 0, monotone because the left side is convex decreasing.
    """
    sums = np.add.reduceat(x[cols], starts)
    total = float(sums @ sums)
    if total <= 1.0:
        return x
    lam = 0.0
    lens_f = lens.astype(float)
    for _ in range(64):
        denom = 1.0 + lam * lens_f
        ratios = sums / denom
        psi = float(ratios @ ratios)
        if psi <= 1.0 + 1e-14:
            break
        dpsi = float(-2.0 * (ratios * ratios / denom) @ lens_f)
        step = (1.0 - psi) / dpsi
        lam += step
        if step <= 1e-16 * (1.0 + lam):
            break
    out = x.copy()
    out[cols] -= np.repeat(lam * sums / (1.0 + lam * lens_f), lens)
    return out


class DualNormSolver:
    """Per-depth dual-norm engine with persistent cut and point pools.

    Soundness never depends on the pools: any nonnegative multipliers give
    a valid upper bound, any feasible point a valid lower bound, and cuts
    are genuine segment families.  Pools only change how fast the two
    bounds meet, and warm-started reruns of an identical call sequence are
    deterministic.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.n = node_count(depth)
        self._pool = _FamilyBlock(self.n)
        self._points: list[np.ndarray] = []
        self._point_keys: set[bytes] = set()
        self._point_cap = 256
        self._points_mat = np.empty((0, self.n))
        self._points_dirty = False
        self._warm_keys: list[CutKey] = []
        self._warm_lams: dict = {"ball": 0.5}

    # -- pools -------------------------------------------------------------

    def _remember_point(self, x: np.ndarray) -> None:
        key = np.round(x, 9).tobytes()
        if key in self._point_keys:
            return
        self._points.append(x.copy())
        self._point_keys.add(key)
        if len(self._points) > self._point_cap:
            dropped = self._points.pop(0)
            self._point_keys.discard(np.round(dropped, 9).tobytes())
        self._points_dirty = True

    def _point_matrix(self) -> np.ndarray:
        if self._points_dirty:
            self._points_mat = (
                np.vstack(self._points) if self._points else np.empty((0, self.n))
            )
            self._points_dirty = False
        return self._points_mat

    def pairing_bound(self, coeffs: np.ndarray) -> float:
        """Cheap lower bound on the dual norm from pooled unit vectors.

        Signed basis vectors are implicit pool members, so the bound is at
        least the sup norm of the coefficients.
        """
        c = np.asarray(coeffs, dtype=float)
        bound = float(np.abs(c).max()) if c.size else 0.0
        mat = self._point_matrix()
        if len(mat):
            bound = max(bound, float((mat @ c).max()))
        return bound

    # -- subproblem machinery ----------------------------------------------

    def _ascend(
        self,
        c: np.ndarray,
        ws: _FamilyBlock,
        x0: np.ndarray,
        state: dict,
    ) -> np.ndarray:
        """Subproblem engine: gradient ascent with cyclic projections."""
        x = x0.copy()
        best_x, best_val = x, -math.inf
        per_pass = ws.m + 1
        budget_left = state["max_projections"] - state["projections"]
        # Early rounds explore; once the working set is rich the polished
        # point drives progress, so ascent is throttled by how much of the
        # projection budget it has already consumed — late rounds keep a
        # feasible iterate in play with a single pass.
        spent_frac = state.get("ascent_projections", 0) / state["max_projections"]
        if state.get("gap", math.inf) < 1e-4 or spent_frac > 0.5:
            base_steps = 1
        elif state["rounds"] <= 2:
            base_steps = _ASCENT_STEPS
        elif spent_frac > 0.25:
            base_steps = 2
        else:
            base_steps = 4
        steps = min(base_steps, max(1, budget_left // (3 * per_pass)))
        step = 0.5 / math.sqrt(per_pass)
        for _ in range(steps):
            x = x + step * c
            # one cyclic pass: the Euclidean ball, then every family
            if state["projections"] + per_pass > state["max_projections"]:
                raise DualNormError(
                    "projection budget exhausted",
                    state["lower"] * state["scale"],
                    state["upper"] * state["scale"],
                    state["rounds"],
                    state["projections"],
                )
            state["projections"] += per_pass
            state["ascent_projections"] = state.get("ascent_projections", 0) + per_pass
            nrm = float(np.linalg.norm(x))
            if nrm > 1.0:
                x = x / nrm
            for j in range(ws.m):
                x = ws.project(j, x)
            val = float(c @ x)
            if val > best_val:
                best_x, best_val = x, val
            step *= 0.85
        return best_x

    def _polish(
        self,
        c: np.ndarray,
        ws: _FamilyBlock,
        warm: np.ndarray | None,
        *,
        thorough: bool = True,
        fresh_warm: bool = False,
    ) -> tuple[np.ndarray, float, np.ndarray]:
        """Minimize the working-set Lagrangian dual over multipliers >= 0.

        For any lam >= 0, with Q = sum lam_F A_F^T A_F (the Euclidean ball
        counting as the all-singletons family), the unconstrained maximum
        of <c,x> - x^T Q x + sum(lam) is attained at x = Q^{-1}c/2 and
        upper-bounds every point of the true unit ball, so any multiplier
        vector certifies an upper bound and the minimum is the tightest.
        L-BFGS-B gets close; a damped Newton pass on the active multipliers
        (Hessian 2 V^T Q^{-1} V with V_j = A_j^T A_j x) finishes the job.
        """
        n = self.n
        m = ws.m + 1  # slot 0 is the Euclidean ball
        eye_flat_idx = (np.arange(n) * (n + 1)).astype(np.intp)

        def assemble(lams: np.ndarray) -> np.ndarray:
            q_flat = np.zeros(n * n)
            ws.add_quadratic(q_flat, lams[1:])
            q_flat[eye_flat_idx] += lams[0]
            return q_flat.reshape(n, n)

        def solve_sym(Q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
            # Cholesky is backward stable, so the bound it yields is exact
            # for a matrix within rounding of Q; skipping the condition
            # estimate also avoids spurious warnings when the ball
            # multiplier sits at its floor.
            try:
                factor = scipy.linalg.cho_factor(Q, lower=True, check_finite=False)
            except scipy.linalg.LinAlgError:
                return np.linalg.lstsq(Q, rhs, rcond=None)[0]
            return scipy.linalg.cho_solve(factor, rhs, check_finite=False)

        def solve_x(Q: np.ndarray) -> np.ndarray:
            return solve_sym(Q, c) / 2.0

        def value_and_grad(lams: np.ndarray) -> tuple[float, np.ndarray]:
            Q = assemble(lams)
            x = solve_x(Q)
            g = float(c @ x - x @ (Q @ x)) + float(lams.sum())
            grad = np.empty(m)
            grad[0] = 1.0 - float(x @ x)
            grad[1:] = 1.0 - ws.family_norms_sq(x)
            return g, grad

        lower_bnd = np.zeros(m)
        lower_bnd[0] = 1e-12
        bounds = [(lb, None) for lb in lower_bnd]
        inits = []
        if warm is not None:
            inits.append(np.maximum(warm, lower_bnd))
        # A warm vector carried over from the previous round is already
        # near-optimal; only a stale or absent one needs the generic init.
        if warm is None or not fresh_warm:
            uniform = np.full(m, 0.5 / math.sqrt(m))
            uniform[0] = max(uniform[0], 0.25)
            inits.append(uniform)

        maxiter = 250 if thorough else 60
        best = None
        for lam0 in inits:
            res = scipy.optimize.minimize(
                value_and_grad,
                lam0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-11},
            )
            if best is None or res.fun < best.fun:
                best = res
        lams = np.maximum(best.x, lower_bnd)
        g_cur, grad = value_and_grad(lams)

        newton_rounds = 24 if thorough else 6
        grad_goal = 1e-13 if thorough else 1e-9
        for _ in range(newton_rounds):
            active = [
                j
                for j in range(m)
                if lams[j] > lower_bnd[j] + 1e-11 or grad[j] < -1e-12
            ]
            if not active or max(abs(grad[j]) for j in active) < grad_goal:
                break
            Q = assemble(lams)
            x = solve_x(Q)
            V = np.column_stack(
                [x if j == 0 else ws.scatter(j - 1, x) for j in active]
            )
            W = solve_sym(Q, V)
            H = 2.0 * V.T @ W
            g_active = grad[active]
            # Near-duplicate families make H singular; the minimum-norm
            # least-squares step stays bounded where a direct solve blows up.
            ridge = max(1e-14, 1e-12 * float(H.diagonal().max(initial=0.0)))
            try:
                step = np.linalg.solve(H + ridge * np.eye(len(active)), -g_active)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, -g_active, rcond=None)[0]
            improved = False
            t = 1.0
            for _ in range(12):
                trial = lams.copy()
                trial[active] = np.maximum(lams[active] + t * step, lower_bnd[active])
                g_try, grad_try = value_and_grad(trial)
                if g_try < g_cur:
                    lams, g_cur, grad = trial, g_try, grad_try
                    improved = True
                    break
                t *= 0.5
            if not improved:
                # fall back to an exact 1-D Newton step on the single worst
                # multiplier, immune to degeneracy in the full system
                j_worst = active[int(np.argmin(g_active))]
                pos = active.index(j_worst)
                h_jj = float(H[pos, pos])
                if h_jj <= 0.0 or not math.isfinite(h_jj):
                    break
                trial = lams.copy()
                trial[j_worst] = max(
                    lams[j_worst] - grad[j_worst] / h_jj, lower_bnd[j_worst]
                )
                g_try, grad_try = value_and_grad(trial)
                if g_try < g_cur:
                    lams, g_cur, grad = trial, g_try, grad_try
                else:
                    break

        Q = assemble(lams)
        x = solve_x(Q)
        upper = float(c @ x - x @ (Q @ x)) + float(lams.sum())
        upper += _UPPER_MARGIN * (1.0 + abs(upper))
        return lams, upper, x

    def _tangent_climb(
        self,
        c: np.ndarray,
        ws: _FamilyBlock,
        y: np.ndarray,
        state: dict,
    ) -> np.ndarray:
        """Climb the active face of the unit ball in the primal.

        Multiplier methods leave the primal iterate a touch infeasible when
        many families tie at the optimum; walking from a nearby feasible
        point along the component of ``c`` orthogonal to the active
        constraint gradients gains first-order pairing at only second-order
        feasibility cost, which a cheap restoration pass absorbs.
        """
        n = self.n
        value = norm_dp_array(y)
        if value <= 0.0:
            return y
        y = y / value  # exactly unit norm: the face geometry below needs it
        for _ in range(24):
            # Truly tight constraints define the tangent cone; nearly tight
            # ones must not enter the direction (their gradients would
            # strangle it) but do cap how far the step may run before their
            # slack is spent.
            grads: list[np.ndarray] = []
            ball_sq = float(y @ y)
            if ball_sq >= 1.0 - 1e-8:
                grads.append(y)
            famsq = ws.family_norms_sq(y)
            for j in np.flatnonzero(famsq >= 1.0 - 1e-8):
                grads.append(ws.scatter(int(j), y))
            # tied families discovered in earlier solves also pin the point
            pool_sq = self._pool.family_norms_sq(y)
            if len(pool_sq):
                tied = np.flatnonzero(pool_sq >= 1.0 - 1e-8)
                for j in tied[np.argsort(-pool_sq[tied], kind="stable")][:80]:
                    if self._pool.keys[int(j)] not in ws:
                        grads.append(self._pool.scatter(int(j), y))
            _, chains = norm_dp_array(y, want_chains=True)
            if chains:
                cols, starts, lens = _family_arrays(chains)
                sums = np.add.reduceat(y[cols], starts)
                v = np.zeros(n)
                v[cols] = np.repeat(sums, lens)
                grads.append(v)
            if not grads:
                break
            # Nonnegative face multipliers via NNLS: its KKT conditions make
            # the residual d = c - G a the steepest ascent direction that is
            # tangent to the constraints carrying weight and moves off the
            # face of the others, which is how the walk crosses between
            # adjacent faces of the ball.
            G = np.column_stack(grads)
            alpha, _ = scipy.optimize.nnls(G, c)
            d = c - G @ alpha
            d_norm = float(np.linalg.norm(d))
            if d_norm <= 1e-11 * (1.0 + float(np.linalg.norm(c))):
                break
            # Newton-scale step on the face, capped so no near-tight
            # constraint's slack is overrun at first order.
            d_hat = d / d_norm
            curvs = [1.0]
            if ws.m:
                curvs.append(float(ws.family_norms_sq(d_hat).max()))
            curv = max(max(curvs), 1e-12)
            t = min(0.05, 2.0 * d_norm / curv)
            ball_rate = 2.0 * float(y @ d)
            if ball_sq < 1.0 - 1e-8 and ball_rate > 1e-14:
                t = min(t, 0.9 * (1.0 - ball_sq) / ball_rate)
            if ws.m:
                rates = 2.0 * ws.family_cross(y, d)
                near = (famsq < 1.0 - 1e-8) & (rates > 1e-14)
                if near.any():
                    caps = (1.0 - famsq[near]) / rates[near]
                    t = min(t, 0.9 * float(caps.min()))
            improved = False
            base = float(c @ y)
            for _ in range(9):
                y_try = y + t * d
                for _ in range(12):
                    v_try, ch_try = norm_dp_array(y_try, want_chains=True)
                    if not ch_try or v_try <= 1.0 + 1e-13:
                        break
                    tc, ts, tl = _family_arrays(ch_try)
                    y_try = _shrink_to_family_ball(y_try, tc, ts, tl)
                    state["projections"] += 1
                v_try = norm_dp_array(y_try)
                if v_try > 1.0:
                    y_try = y_try / v_try
                if float(c @ y_try) > base:
                    y = y_try
                    improved = True
                    break
                t *= 0.25
            if not improved:
                break
        return y

    # -- main entry ----------------------------------------------------------

    def solve_array(
        self,
        coeffs: Sequence[float],
        tol: float = TOL_DEFAULT,
        max_projections: int = PROJECTION_BUDGET_DEFAULT,
    ) -> DualNormResult:
        if tol <= 0:
            raise ValueError(f"tol must be positive, got {tol}")
        c_raw = np.asarray(coeffs, dtype=float)
        if c_raw.shape != (self.n,):
            raise ValueError(f"expected {self.n} coefficients, got shape {c_raw.shape}")
        if not c_raw.any():
            return DualNormResult(0.0, JTVector.zero(self.depth), [], 0.0, 0, 0)

        scale = float(np.abs(c_raw).max())
        c = c_raw / scale

        ws = _FamilyBlock(self.n)
        for t in np.flatnonzero(c):
            key = _canonical_cut([(int(t),)])
            ws.append(key)
            self._pool.append(key)
        for key in self._warm_keys:
            ws.append(key)

        # The sup-norm lower bound comes with an explicit witness: a signed
        # basis vector, whose JT norm is exactly 1.
        t_star = int(np.argmax(np.abs(c)))
        best_x = np.zeros(self.n)
        best_x[t_star] = math.copysign(1.0, c[t_star])
        state = {
            "projections": 0,
            "rounds": 0,
            "max_projections": max_projections,
            "lower": float(c @ best_x),
            "upper": math.inf,
            "scale": scale,
        }
        mat = self._point_matrix()
        if len(mat):
            vals = mat @ c
            j = int(np.argmax(vals))
            if vals[j] > state["lower"]:
                best_x = mat[j].copy()
                state["lower"] = float(vals[j])

        def add_cut(chains) -> bool:
            key = _canonical_cut(chains)
            if key in ws:
                return False
            ws.append(key)
            self._pool.append(key)
            return True

        # Seed with the certificate of the functional's own direction: it is
        # usually the binding family or close to it.
        seed_val, seed_chains = norm_dp_array(c, want_chains=True)
        if seed_chains:
            add_cut(seed_chains)
            seed_lower = float(c @ c) / seed_val
            if seed_lower > state["lower"]:
                best_x = c / seed_val
                state["lower"] = seed_lower

        def restore_feasible(y: np.ndarray) -> np.ndarray:
            """Walk a slightly infeasible point back inside the unit ball.

            Projecting out the violated families one by one moves the point
            far less than rescaling by its norm, so the restored point's
            pairing is a much tighter lower bound near the optimum.
            """
            for _ in range(12):
                value, chains = norm_dp_array(y, want_chains=True)
                if not chains or value <= 1.0 + 1e-13:
                    break
                cols, starts, lens = _family_arrays(chains)
                y = _shrink_to_family_ball(y, cols, starts, lens)
                state["projections"] += 1
            return y

        x_start = best_x
        warm_lams: np.ndarray | None = np.array(
            [self._warm_lams.get("ball", 0.5)]
            + [self._warm_lams.get(k, 1e-4) for k in ws.keys]
        )
        stalls = 0
        gap = prev_gap = math.inf
        while True:
            state["rounds"] += 1
            if state["rounds"] > _MAX_ROUNDS:
                raise DualNormError(
                    "round budget exhausted",
                    state["lower"] * scale,
                    state["upper"] * scale if math.isfinite(state["upper"]) else math.inf,
                    state["rounds"],
                    state["projections"],
                )
            if state["projections"] >= max_projections:
                raise DualNormError(
                    "projection budget exhausted",
                    state["lower"] * scale,
                    state["upper"] * scale if math.isfinite(state["upper"]) else math.inf,
                    state["rounds"],
                    state["projections"],
                )
            # Each ascent pass costs a projection per working-set family.
            # In the endgame the polished/restored/climbed points carry the
            # lower bound, so the ascent budget is better spent on them.
            if prev_gap > 1e-4:
                x_asc = self._ascend(c, ws, x_start, state)
            else:
                x_asc = x_start
            # Full-precision polish only pays off once the bounds are close;
            # early rounds just need multipliers good enough to steer cuts.
            lams, upper, x_pol = self._polish(
                c,
                ws,
                warm_lams,
                thorough=prev_gap < 1e-2,
                fresh_warm=state["rounds"] > 1 and stalls == 0,
            )
            state["upper"] = min(state["upper"], upper)

            candidates = [x_pol, x_asc]
            x_res = restore_feasible(x_pol)
            if x_res is not x_pol:
                candidates.insert(1, x_res)
            if prev_gap > 1e-3:
                # far from convergence, a blend explores a different face
                candidates.append(0.5 * (x_pol + x_asc))
            else:
                # endgame: climb the active face from the best feasible point
                y0 = best_x if float(c @ best_x) >= float(c @ x_res) else x_res
                candidates.insert(0, self._tangent_climb(c, ws, y0, state))
            # While the gap is wide, families within a few percent of
            # binding are still worth collecting.
            peel_floor = 1.0 - min(5e-2, max(5e-3, 0.1 * min(prev_gap, 1.0)))
            for cand in candidates:
                value, chains = norm_dp_array(cand, want_chains=True)
                if value > 0.0:
                    lower_cand = float(c @ cand) / value
                    if lower_cand > state["lower"]:
                        state["lower"] = lower_cand
                        best_x = cand / value
                # Peel off near-binding families one at a time: the
                # achieving family is the strongest cut (violated if the
                # point is infeasible, the tight face otherwise); project
                # it out and re-separate to expose the next family of the
                # same face.  Near-degenerate optima need several of these
                # at once, and one DP call per peel is cheap.
                y = cand
                for peel in range(_PEEL_DEPTH):
                    if not chains or (peel > 0 and value < peel_floor):
                        break
                    add_cut(chains)
                    cols, starts, lens = _family_arrays(chains)
                    y = _shrink_to_family_ball(y, cols, starts, lens)
                    state["projections"] += 1
                    value, chains = norm_dp_array(y, want_chains=True)
            # revive the most violated pool cuts from earlier solves (capped,
            # so stale pools cannot bloat the working set)
            pool_sq = self._pool.family_norms_sq(x_pol)
            if len(pool_sq):
                violated = [
                    (float(pool_sq[j]), self._pool.keys[j])
                    for j in np.flatnonzero(pool_sq > 1.0 + tol)
                    if self._pool.keys[j] not in ws
                ]
                violated.sort(key=lambda p: (-p[0], p[1]))
                for _viol, key in violated[:8]:
                    add_cut(key)

            gap = (state["upper"] - state["lower"]) * scale
            state["gap"] = gap
            if gap <= tol:
                break
            # Progress is measured on the gap itself: cuts that stop moving
            # it for many rounds mean the exchange has degenerated.
            if gap <= prev_gap - max(1e-16, 1e-4 * prev_gap):
                stalls = 0
            else:
                stalls += 1
                if stalls >= _STALL_LIMIT:
                    raise DualNormError(
                        "stalled before reaching tolerance",
                        state["lower"] * scale,
                        state["upper"] * scale,
                        state["rounds"],
                        state["projections"],
                    )
            prev_gap = gap

            # Two-tier pruning keeps the multiplier problem small: first drop
            # slack zero-multiplier cuts, then enforce a hard cap by weight.
            # Fresh cuts (no multiplier yet) always stay.
            soft_cap = max(40, 2 * self.n)
            hard_cap = max(64, 4 * self.n)
            m_pol = len(lams) - 1
            if ws.m + 1 > soft_cap:
                famsq = ws.family_norms_sq(x_pol)
                drop = {
                    j
                    for j in range(m_pol)
                    if lams[j + 1] < 1e-8 and famsq[j] < 0.999
                }
                if ws.m - len(drop) > hard_cap:
                    order = sorted(
                        (j for j in range(m_pol) if j not in drop),
                        key=lambda j: (lams[j + 1], famsq[j]),
                    )
                    for j in order[: ws.m - len(drop) - hard_cap]:
                        drop.add(j)
                if drop:
                    kept_lams = {
                        k: lams[j + 1] for j, k in enumerate(ws.keys[:m_pol])
                    }
                    ws.drop(drop)
                    lams = np.array(
                        [lams[0]] + [kept_lams.get(k, 1e-4) for k in ws.keys]
                    )
            if stalls:
                warm_lams = None
                x_start = x_pol
            else:
                warm_lams = np.append(
                    lams, np.full(ws.m + 1 - len(lams), 1e-4)
                )
                x_start = best_x

        self._remember_point(best_x)
        # Warm-start state for the next call at this depth: the families
        # that mattered here, with their multipliers.  Cuts appended after
        # the final polish have no multiplier yet and are skipped.
        polished_keys = ws.keys[: len(lams) - 1]
        self._warm_lams = {"ball": float(lams[0])}
        order = np.argsort(-lams[1:], kind="stable")
        self._warm_keys = [
            polished_keys[j] for j in order[:8] if lams[j + 1] > 1e-10
        ]
        for j, key in enumerate(polished_keys):
            if lams[j + 1] > 1e-10:
                self._warm_lams[key] = float(lams[j + 1])

        # The maximizer's own achieving family is always tight; working-set
        # families that ended up tight at the solution join it.
        _, best_chains = norm_dp_array(best_x, want_chains=True)
        active_keys = [_canonical_cut(best_chains)] if best_chains else []
        final_sq = ws.family_norms_sq(best_x)
        for j, key in enumerate(ws.keys):
            if key not in active_keys and final_sq[j] >= 1.0 - 100 * tol:
                active_keys.append(key)
        active = [_cut_to_family(key) for key in active_keys]
        maximizer = JTVector.from_array(self.depth, best_x)
        return DualNormResult(
            value=float(c_raw @ best_x),
            maximizer=maximizer,
            active_families=active,
            gap=float(max(0.0, gap)),
            iterations=state["rounds"],
            projections=state["projections"],
        )


_SOLVERS: dict[int, DualNormSolver] = {}


def shared_solver(depth: int) -> DualNormSolver:
    """The process-wide solver for one depth (shared cut/point pools)."""
    solver = _SOLVERS.get(depth)
    if solver is None:
        solver = DualNormSolver(depth)
        _SOLVERS[depth] = solver
    return solver


def dual_norm(
    xstar: DualVector,
    tol: float = TOL_DEFAULT,
    *,
    max_projections: int = PROJECTION_BUDGET_DEFAULT,
) -> DualNormResult:
    """Dual norm ``max {<x*, x> : ||x||_JT <= 1}`` with certified gap.

    Raises :class:`DualNormError` with best bounds if the projection or
    round budget runs out before the gap closes below ``tol``.
    """
    return shared_solver(xstar.depth).solve_array(
        xstar.to_array(), tol=tol, max_projections=max_projections
    )


# ---------------------------------------------------------------------------
# Adjoint projections and horizon quantities
# ---------------------------------------------------------------------------


def adjoint_project(xstar: DualVector, N: int, M: int | None = None) -> DualVector:
    """Restrict dual coefficients to levels [N, M] (M=None means horizon)."""
    top = xstar.depth if M is None else M
    if N < 0 or N > top:
        raise ValueError(f"invalid level band [{N}, {M}] at depth {xstar.depth}")
    return DualVector(
        xstar.depth,
        {node: v for node, v in xstar.coeffs.items() if N <= node.level <= top},
    )


def level_norm(xstar: DualVector, N: int) -> float:
    """Dual norm of the level-N restriction: the ell2 norm of that level.

    A family evaluated against a single-level functional's maximizer meets
    the level in singleton contributions, so the dual norm collapses to
    ell2; this computes it directly and exactly.
    """
    if not 0 <= N <= xstar.depth:
        raise ValueError(f"level {N} outside 0..{xstar.depth}")
    return math.sqrt(
        sum(v * v for node, v in xstar.coeffs.items() if node.level == N)
    )


@dataclass
class HorizonVector:
    """Per-branch trace of a functional: the coefficient at each leaf."""

    depth: int
    entries: dict[Branch, float]

    def to_array(self) -> np.ndarray:
        """Entries ordered by leaf lex index."""
        return np.array([self.entries[b] for b in all_branches(self.depth)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_array()))


def horizon_map(xstar: DualVector) -> HorizonVector:
    """Branch-limit surrogate: read the level-D coefficient along each branch."""
    return HorizonVector(
        xstar.depth,
        {b: xstar.coeffs.get(b.leaf, 0.0) for b in all_branches(xstar.depth)},
    )


def g_functional(xstar: DualVector, zstar: DualVector) -> float:
    """Inner product of the two branch traces (at equal depths)."""
    if xstar.depth != zstar.depth:
        raise ValueError(f"depth mismatch: {xstar.depth} vs {zstar.depth}")
    total = 0.0
    for node, v in xstar.coeffs.items():
        if node.level == xstar.depth:
            total += v * zstar.coeffs.get(node, 0.0)
    return total
