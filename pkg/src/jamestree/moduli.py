"""Estimators for convexity and smoothness moduli of finite-horizon norms.

Three quantities are estimated, always with explicit "best value found"
semantics (certified global optimization is out of scope):

* the modulus of uniform convexity: the least midpoint-norm deficit
  ``1 - ||(x + y)/2||`` over unit pairs separated by at least ``eps``;
* the directional asymptotic-convexity modulus: the least norm growth
  ``||x + eps*y|| - 1`` over unit vectors ``y`` ranging in a prescribed
  subspace (a tail of the coordinate tree, optionally intersected with
  annihilators of given functionals);
* the asymptotic-smoothness variant, which takes the largest growth
  instead of the least.

The searches run seeded multistart step-halving descent on the unit
sphere of the subspace, with feasibility maintained by projecting onto
the subspace and renormalizing.  In subspaces of dimension at most three
an exhaustive sphere grid joins the candidate pool, so tiny instances
are effectively solved by brute force.  Expensive norms (the dual tree
norm runs a certified cutting-plane solve per evaluation) expose a cheap
guide bound that steers the descent; only a handful of finalists per
estimate are re-scored with the exact norm, and the reported value and
witness always come from exact evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .dual import DualNormError, DualNormSolver, shared_solver
from .primal import norm_dp_array
from .tree import level_slice, node_count

__all__ = [
    "ModulusEstimate",
    "NormSpace",
    "SearchBudget",
    "Subspace",
    "delta_bar",
    "delta_uc",
    "fit_power_exponent",
    "rho_bar",
    "sweep",
]


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormSpace:
    """A finite-dimensional normed space described by its evaluator.

    ``evaluate`` must satisfy the norm axioms (tests spot-check positive
    homogeneity and the triangle inequality on random vectors).  When the
    exact evaluator is expensive, ``guide`` supplies a cheap surrogate used
    only to steer searches; reported values never come from it.
    ``tolerance`` records the certification slack of ``evaluate`` (zero for
    closed-form norms), which scales the unit-vector preconditions.
    """

    name: str
    dim: int
    evaluate: Callable[[np.ndarray], float]
    guide: Callable[[np.ndarray], float] | None = None
    tolerance: float = 0.0

    def norm(self, v: np.ndarray) -> float:
        return float(self.evaluate(np.asarray(v, dtype=float)))

    def guide_norm(self, v: np.ndarray) -> float:
        fn = self.guide if self.guide is not None else self.evaluate
        return float(fn(np.asarray(v, dtype=float)))

    @staticmethod
    def lp(p: float, dim: int) -> "NormSpace":
        """The ell_p norm on ``dim`` coordinates (calibration reference)."""
        if not p >= 1:
            raise ValueError(f"p must be >= 1, got {p}")
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")

        def ev(v: np.ndarray) -> float:
            return float(np.linalg.norm(v, ord=p))

        label = f"{p:g}"
        return NormSpace(name=f"l{label}-dim{dim}", dim=dim, evaluate=ev)

    @staticmethod
    def tree_space(depth: int) -> "NormSpace":
        """The primal tree norm on coefficient vectors of the given depth."""
        return NormSpace(
            name=f"jt-primal-depth{depth}",
            dim=node_count(depth),
            evaluate=norm_dp_array,
        )

    @staticmethod
    def dual_tree_space(
        depth: int, *, tol: float = 1e-6, solver: DualNormSolver | None = None
    ) -> "NormSpace":
        """The dual tree norm, evaluated by the certified cutting-plane solver.

        Exact evaluations run at certification tolerance ``tol``; if the
        solver exhausts its budget the certified lower bound is used (it is
        the pairing with an explicit feasible vector, so values stay
        honest).  The guide is the solver's pooled pairing bound, a cheap
        lower bound that sharpens as the shared pools warm up.  Passing a
        dedicated ``solver`` isolates that warm state, which makes repeated
        runs bit-reproducible.
        """
        if solver is None:
            solver = shared_solver(depth)

        def ev(v: np.ndarray) -> float:
            try:
                return solver.solve_array(v, tol=tol).value
            except DualNormError as err:
                return err.lower

        return NormSpace(
            name=f"jt-dual-depth{depth}",
            dim=node_count(depth),
            evaluate=ev,
            guide=solver.pairing_bound,
            tolerance=tol,
        )


@dataclass(frozen=True, eq=False)
class Subspace:
    """A linear subspace given by an orthonormal coordinate basis.

    ``basis`` has one column per subspace dimension; membership and
    projection are with respect to the coordinate inner product (the basis
    parametrizes the subspace — sphere conditions inside it always use the
    ambient space's norm).
    """

    description: str
    basis: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise ValueError("basis must be a 2-D array (ambient dim x subspace dim)")
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.basis @ (self.basis.T @ v)

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        resid = float(np.linalg.norm(v - self.project(v)))
        return resid <= tol * (1.0 + float(np.linalg.norm(v)))

    @staticmethod
    def coordinates(dim: int, indices: Sequence[int], description: str | None = None) -> "Subspace":
        """Span of the given coordinate axes."""
        idx = sorted(set(int(i) for i in indices))
        if any(i < 0 or i >= dim for i in idx):
            raise ValueError("coordinate index out of range")
        basis = np.zeros((dim, len(idx)))
        for col, i in enumerate(idx):
            basis[i, col] = 1.0
        if description is None:
            description = f"coordinates {idx}"
        return Subspace(description=description, basis=basis)

    @staticmethod
    def tail_past_level(depth: int, level: int) -> "Subspace":
        """Coefficient vectors supported on tree levels strictly past ``level``."""
        if not 0 <= level <= depth:
            raise ValueError(f"level must be in [0, {depth}], got {level}")
        start = level_slice(level + 1)[0] if level < depth else node_count(depth)
        stop = node_count(depth)
        return Subspace.coordinates(
            node_count(depth),
            range(start, stop),
            description=f"tail past level {level} (depth {depth})",
        )

    def annihilator(self, functionals: Sequence[np.ndarray]) -> "Subspace":
        """The subspace of this one that pairs to zero with each functional."""
        rows = [np.asarray(f, dtype=float) for f in functionals]
        if not rows:
            return self
        if any(r.shape != (self.ambient_dim,) for r in rows):
            raise ValueError("functional dimension mismatch")
        constraints = np.vstack(rows) @ self.basis
        kernel = scipy.linalg.null_space(constraints)
        return Subspace(
            description=f"{self.description}, annihilating {len(rows)} functional(s)",
            basis=self.basis @ kernel,
        )


@dataclass(frozen=True, eq=False)
class ModulusEstimate:
    """Best value found by a modulus search, with its witness.

    ``value`` is the least (for convexity moduli) or greatest (for the
    smoothness modulus) objective among all exactly-scored candidates, so
    for an infimum it is an upper bound on the true infimum over the
    searched sphere, and symmetrically for a supremum.  ``value_geq_form``
    is the minimum over the coarse larger-radius scan of the equivalent
    "separation at least eps" formulation (directional moduli only).
    ``samples`` counts the candidate directions examined (multistarts plus
    grid points).  Witness vectors are unit within the space evaluator's
    certification tolerance (exactly, for closed-form norms).
    """

    epsilon: float
    value: float
    value_geq_form: float | None
    witness: np.ndarray | None
    method: str
    samples: int

    @property
    def forms_disagree(self) -> bool:
        """Whether the two formulations differ by more than 1e-6."""
        if self.value_geq_form is None:
            return False
        return self.value - self.value_geq_form > 1e-6


@dataclass(frozen=True)
class SearchBudget:
    """Effort knobs for the multistart searches.

    ``starts`` multistart descents run for at most ``steps`` step-halving
    iterations each, never shrinking the step below ``step_floor``.  The
    ``finalists`` best candidates by guide score are re-scored with the
    exact norm.  Subspaces of dimension at most ``grid_limit`` also get an
    exhaustive sphere grid of roughly ``grid_points`` directions.
    """

    starts: int = 64
    steps: int = 80
    step_floor: float = 1e-8
    finalists: int = 4
    grid_limit: int = 3
    grid_points: int = 720


_DEFAULT_BUDGET = SearchBudget()


# --------------------------------------------------------------------------
# search machinery
# --------------------------------------------------------------------------


def _unit_directions(dim: int, count: int) -> np.ndarray:
    """A deterministic covering of the Euclidean sphere in 1-3 dimensions."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        angles = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        return np.column_stack([np.cos(angles), np.sin(angles)])
    # golden-spiral points cover the 2-sphere nearly uniformly
    k = np.arange(count, dtype=float) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    z = 1.0 - 2.0 * k / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _descend_direction(
    score: Callable[[np.ndarray], float],
    u0: np.ndarray,
    rng: np.random.Generator,
    budget: SearchBudget,
) -> tuple[np.ndarray, float]:
    """Step-halving local search over unit directions, minimizing ``score``.

    ``score`` must accept any nonzero coordinate vector and handle its own
    normalization; the engine only proposes directions.
    """
    u = u0 / float(np.linalg.norm(u0))
    best = score(u)
    step = 0.5
    k = len(u)
    momentum = None
    for _ in range(budget.steps):
        if step < budget.step_floor:
            break
        proposals = [rng.standard_normal(k) for _ in range(2)]
        if momentum is not None:
            proposals.append(momentum)
        improved = False
        for d in proposals:
            nd = float(np.linalg.norm(d))
            if nd == 0.0:
                continue
            d = d / nd
            for signed in (d, -d):
                cand = u + step * signed
                nc = float(np.linalg.norm(cand))
                if nc == 0.0:
                    continue
                cand = cand / nc
                val = score(cand)
                if val < best - 1e-15:
                    u, best = cand, val
                    momentum = signed
                    improved = True
                    break
            if improved:
                break
        if not improved:
            step *= 0.5
    return u, best


def _directional_search(
    space: NormSpace,
    x: np.ndarray,
    eps: float,
    subspace: Subspace,
    budget: SearchBudget,
    seed: int,
    maximize: bool,
) -> tuple[float, np.ndarray, str, int]:
    """Shared engine for the directional moduli.

    Returns (best exact objective, witness, method, samples).  Every
    candidate direction is scored by the guide norm; the ``finalists``
    best are renormalized and re-scored with the exact norm, which is what
    the returned value and witness reflect.
    """
    basis = subspace.basis
    sign = -1.0 if maximize else 1.0

    def guide_score(u: np.ndarray) -> float:
        w = basis @ u
        nu = space.guide_norm(w)
        if nu <= 0.0:
            return math.inf
        return sign * space.guide_norm(x + (eps / nu) * w)

    candidates: list[tuple[float, np.ndarray, str]] = []

    k = subspace.dim
    for sid in range(budget.starts):
        rng = np.random.default_rng([seed, sid])
        if sid < 2 * k:
            u0 = np.zeros(k)
            u0[sid // 2] = 1.0 if sid % 2 == 0 else -1.0
        else:
            u0 = rng.standard_normal(k)
            if not np.any(u0):
                u0[0] = 1.0
        u, val = _descend_direction(guide_score, u0, rng, budget)
        candidates.append((val, u, "multistart"))
    samples = budget.starts

    if k <= budget.grid_limit:
        grid = _unit_directions(k, budget.grid_points)
        samples += len(grid)
        for u in grid:
            candidates.append((guide_score(u), u, "grid-oracle"))

    candidates.sort(key=lambda item: item[0])
    best_val = math.inf
    best_y: np.ndarray | None = None
    best_method = "multistart"
    scored: list[np.ndarray] = []
    for val, u, method in candidates:
        if len(scored) >= max(1, budget.finalists):
            break
        if not math.isfinite(val):
            continue
        # different starts often converge to the same direction; exact
        # evaluations are the expensive resource, so spend them on
        # genuinely distinct finalists
        if any(float(np.linalg.norm(u - seen)) < 1e-9 for seen in scored):
            continue
        w = basis @ u
        nu = space.norm(w)
        if nu <= 0.0:
            continue
        scored.append(u)
        y = w / nu
        exact = sign * (space.norm(x + eps * y) - 1.0)
        if exact < best_val:
            best_val, best_y, best_method = exact, y, method
    if best_y is None:
        raise ValueError("search found no usable direction in the subspace")
    return sign * best_val, best_y, best_method, samples


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def _check_directional_args(
    space: NormSpace, x: np.ndarray, eps: float, subspace: Subspace
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (space.dim,):
        raise ValueError(f"expected a vector of dimension {space.dim}, got {x.shape}")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if subspace.ambient_dim != space.dim:
        raise ValueError("subspace ambient dimension does not match the space")
    if subspace.dim == 0:
        raise ValueError("empty subspace")
    unit_slack = max(1e-9, 2.0 * space.tolerance)
    if abs(space.norm(x) - 1.0) > unit_slack:
        raise ValueError("center vector must have unit norm")
    return x


def _unit_subspace_vector(space: NormSpace, subspace: Subspace) -> np.ndarray:
    w = subspace.basis[:, 0]
    return w / space.norm(w)


def delta_bar(
    space: NormSpace,
    x: np.ndarray,
    eps: float,
    subspace: Subspace,
    budget: SearchBudget | None = None,
    seed: int = 0,
) -> ModulusEstimate:
    """Least found norm growth ``||x + eps*y|| - 1`` over unit subspace ``y``.

    The report is an upper bound on the true infimum over the unit sphere
    of the subspace (up to the evaluator's certification tolerance).  The
    equivalent formulation that lets ``y`` range over subspace vectors of
    norm at least ``eps`` is probed with a coarse scan of larger radii
    along the winning direction and reported as ``value_geq_form``; the
    two only coincide up to search quality, so disagreements are exposed
    rather than asserted away.  ``eps = 0`` returns 0 by continuity.
    """
    x = _check_directional_args(space, x, eps, subspace)
    budget = budget or _DEFAULT_BUDGET
    if eps == 0.0:
        return ModulusEstimate(0.0, 0.0, 0.0, _unit_subspace_vector(space, subspace), "multistart", 0)
    value, witness, method, samples = _directional_search(
        space, x, eps, subspace, budget, seed, maximize=False
    )
    geq = value
    for radius in (1.25, 1.5, 2.0):
        grown = space.norm(x + (eps * radius) * witness) - 1.0
        geq = min(geq, grown)
    return ModulusEstimate(eps, value, geq, witness, method, samples)


def rho_bar(
    space: NormSpace,
    x: np.ndarray,
    eps: float,
    subspace: Subspace,
    budget: SearchBudget | None = None,
    seed: int = 0,
) -> ModulusEstimate:
    """Greatest found norm growth ``||x + eps*y|| - 1`` (smoothness variant)."""
    x = _check_directional_args(space, x, eps, subspace)
    budget = budget or _DEFAULT_BUDGET
    if eps == 0.0:
        return ModulusEstimate(0.0, 0.0, None, _unit_subspace_vector(space, subspace), "multistart", 0)
    value, witness, method, samples = _directional_search(
        space, x, eps, subspace, budget, seed, maximize=True
    )
    return ModulusEstimate(eps, value, None, witness, method, samples)


def delta_uc(
    space: NormSpace,
    eps: float,
    samples: int = 64,
    seed: int = 0,
) -> ModulusEstimate:
    """Least found midpoint deficit ``1 - ||(x+y)/2||`` at separation >= eps.

    Runs ``samples`` seeded multistart descents over unit pairs; the
    separation constraint is kept by a penalty during the search and the
    reported pair is repaired to exact feasibility.  The witness stacks
    the two unit vectors as rows.
    """
    if not 0.0 < eps <= 2.0:
        raise ValueError(f"eps must lie in (0, 2], got {eps}")
    if samples < 1:
        raise ValueError("samples must be positive")
    dim = space.dim

    def unitize(v: np.ndarray) -> np.ndarray | None:
        nv = space.guide_norm(v)
        if nv <= 0.0:
            return None
        return v / nv

    def objective(xv: np.ndarray, yv: np.ndarray) -> float:
        deficit = 1.0 - space.guide_norm(0.5 * (xv + yv))
        shortfall = max(0.0, eps - space.guide_norm(xv - yv))
        return deficit + 4.0 * shortfall

    def repair(xv: np.ndarray, yv: np.ndarray) -> np.ndarray | None:
        """Push the pair to exact unit norms and separation >= eps."""
        for _ in range(40):
            nx, ny = space.norm(xv), space.norm(yv)
            if nx <= 0.0 or ny <= 0.0:
                return None
            xv, yv = xv / nx, yv / ny
            gap = space.norm(xv - yv)
            if gap >= eps:
                return np.vstack([xv, yv])
            if gap == 0.0:
                yv = -xv
                continue
            yv = xv + (yv - xv) * (eps / gap) * 1.0000001
        return None

    best_val = math.inf
    best_pair: np.ndarray | None = None
    for sid in range(samples):
        rng = np.random.default_rng([seed, sid])
        if sid == 0:
            xv = np.zeros(dim)
            xv[0] = 1.0
            yv = -xv.copy()
        else:
            xv = rng.standard_normal(dim)
            yv = rng.standard_normal(dim)
        xu, yu = unitize(xv), unitize(yv)
        if xu is None or yu is None:
            continue
        xv, yv = xu, yu
        cur = objective(xv, yv)
        step = 0.5
        for _ in range(80):
            if step < 1e-8:
                break
            improved = False
            for _ in range(3):
                dx = rng.standard_normal(dim)
                dy = rng.standard_normal(dim)
                xt, yt = unitize(xv + step * dx), unitize(yv + step * dy)
                if xt is None or yt is None:
                    continue
                val = objective(xt, yt)
                if val < cur - 1e-15:
                    xv, yv, cur = xt, yt, val
                    improved = True
                    break
            if not improved:
                step *= 0.5
        pair = repair(xv, yv)
        if pair is None:
            continue
        value = 1.0 - space.norm(0.5 * (pair[0] + pair[1]))
        if value < best_val:
            best_val, best_pair = value, pair
    if best_pair is None:
        raise ValueError("no feasible unit pair found at the requested separation")
    return ModulusEstimate(eps, best_val, None, best_pair, "multistart", samples)


def sweep(
    space: NormSpace,
    x_or_sampler: np.ndarray | Callable[[np.random.Generator], np.ndarray],
    eps_grid: Sequence[float],
    subspace_rule: Subspace | Callable[[np.ndarray], Subspace],
    seed: int = 0,
    budget: SearchBudget | None = None,
    witness_writer: Callable[[str, np.ndarray], str] | None = None,
) -> list[dict]:
    """Directional-modulus estimates across an epsilon grid, as CSV-ready rows.

    The center is either a fixed vector or a sampler drawing one from the
    sweep's seeded generator; the subspace may likewise depend on the
    drawn center.  Rows carry the fixed schema
    ``epsilon,value,value_geq_form,method,samples,witness_file``; the
    witness column is filled by the optional writer callback (it receives
    a slug and the witness vector and returns the stored name), and is
    empty otherwise.  Fixed seeds give identical rows on every run.
    """
    eps_list = [float(e) for e in eps_grid]
    if not eps_list:
        raise ValueError("epsilon grid must be non-empty")
    rng = np.random.default_rng([seed, len(eps_list)])
    x = x_or_sampler(rng) if callable(x_or_sampler) else np.asarray(x_or_sampler, dtype=float)
    if not np.any(x):
        raise ValueError("center vector must have non-empty support")
    subspace = subspace_rule(x) if callable(subspace_rule) else subspace_rule
    rows: list[dict] = []
    for row_id, eps in enumerate(eps_list):
        estimate = delta_bar(space, x, eps, subspace, budget, seed=seed * 100003 + row_id)
        witness_file = ""
        if witness_writer is not None and estimate.witness is not None:
            witness_file = witness_writer(f"eps{row_id}", estimate.witness)
        rows.append(
            {
                "epsilon": eps,
                "value": estimate.value,
                "value_geq_form": estimate.value_geq_form,
                "method": estimate.method,
                "samples": estimate.samples,
                "witness_file": witness_file,
            }
        )
    return rows


def fit_power_exponent(rows: Sequence[dict]) -> float:
    """Least-squares slope of log(value) against log(epsilon) on sweep rows.

    A diagnostic for how the modulus scales; rows with non-positive value
    or epsilon are skipped.  Requires at least two usable rows.
    """
    xs, ys = [], []
    for row in rows:
        eps, val = float(row["epsilon"]), float(row["value"])
        if eps > 0.0 and val > 0.0:
            xs.append(math.log(eps))
            ys.append(math.log(val))
    if len(xs) < 2:
        raise ValueError("need at least two rows with positive epsilon and value")
    slope = np.polyfit(np.array(xs), np.array(ys), 1)[0]
    return float(slope)
