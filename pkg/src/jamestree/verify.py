"""Randomized verification campaigns for the dual tree norm's stability laws.

The module turns four quantitative statements about the dual norm into
reproducible numeric experiments at a finite horizon:

* **Band stability** (:func:`check_band_stability`): when levels ``0..N``
  capture almost the whole dual norm, the tail past ``N`` cannot exceed the
  level-``N`` band norm by more than a drift term.
* **Perturbation stability** (:func:`check_perturbation_stability`): a
  perturbation whose level-``N`` band and horizon traces are tiny, and which
  keeps the combined tail inside the unit ball, must itself have a small
  tail.
* **Cubic tail growth** (:func:`check_power_type`): a unit functional
  supported above a gap level gains at least ``k * eps**3`` of norm from any
  unit tail direction past the gap.
* **Shallow-vector growth** (:func:`check_shallow_growth`): a unit
  functional with small horizon trace gains a fixed factor of norm from tail
  perturbations.

:func:`solve_growth_constants` produces, in exact rational arithmetic, a
constant system certifying a norm-growth factor ``tau > 1`` for the
convexity argument; the gaps involved underflow double precision, which is
why :mod:`fractions` is used throughout that routine.

Campaigns (:func:`run_campaign`) draw seeded random or constructed
instances, count premise hits and conclusion violations, and serialize
deterministic reports (JSON lines plus a summary CSV row).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dual import (
    DualNormError,
    DualNormSolver,
    DualVector,
    adjoint_project,
    level_norm,
    shared_solver,
)
from .moduli import ModulusEstimate, NormSpace, SearchBudget, Subspace, delta_bar
from .primal import JTVector, norming_functional
from .tree import NodeId, lex_index, level_slice, node_count, node_from_lex

__all__ = [
    "BandStabilityInstance",
    "CampaignConfig",
    "CampaignReport",
    "GrowthConstants",
    "PerturbationInstance",
    "SolverScope",
    "check_band_stability",
    "check_perturbation_stability",
    "check_power_type",
    "check_shallow_growth",
    "growth_slacks",
    "power_coefficient",
    "run_campaign",
    "solve_growth_constants",
]

# strict inequalities are tested with this much slack; being lenient on
# premises funnels more near-boundary instances into the conclusion check
STRICT_SLACK = 1e-6

# campaign margins live at the 1e-2 scale and all norm values are certified
# lower bounds, so 1e-5 certification is ample; deep solves occasionally
# plateau a few 1e-6 above a tighter goal, and a stalled solve whose
# remaining gap is below the cap still yields a usable lower bound
_SOLVER_TOL = 1e-5
_GAP_CAP = 1e-4
_CAMPAIGN_PROJECTIONS = 30_000

_CUBIC_CAP = 2.0**-10
_QUINTIC_CAP = 2.0**-26


class SolverScope:
    """Dual-norm evaluation against either shared or private solver state.

    The process-wide solvers keep warm certificate pools, so re-solving
    the same instance later in a process can return a different value
    inside the certification band.  A fresh scope owns untouched solvers,
    which makes a fixed sequence of solves bit-reproducible; campaigns
    create one per run for exactly that reason.
    """

    def __init__(self, *, fresh: bool = False):
        self._private: dict[int, DualNormSolver] | None = {} if fresh else None

    def solver(self, depth: int) -> DualNormSolver:
        if self._private is None:
            return shared_solver(depth)
        if depth not in self._private:
            self._private[depth] = DualNormSolver(depth)
        return self._private[depth]

    def norm(self, v: DualVector, tol: float) -> float:
        """Dual norm of ``v``, solved at its support depth.

        Zero-extension never changes the dual norm (adjoint band
        projections are contractive in both directions), so a functional
        supported in a shallow prefix is re-rooted there, where the solve
        is much cheaper.
        """
        top = v.support_level()
        if top < 0:
            return 0.0
        if top < v.depth:
            v = DualVector(top, dict(v.coeffs))
        try:
            return self.solver(v.depth).solve_array(
                v.to_array(), tol=tol, max_projections=_CAMPAIGN_PROJECTIONS
            ).value
        except DualNormError as err:
            if err.upper - err.lower <= _GAP_CAP:
                return err.lower
            raise


def _scope(scope: SolverScope | None) -> SolverScope:
    return scope if scope is not None else SolverScope()


# ---------------------------------------------------------------------------
# Band stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandStabilityInstance:
    """A functional, a split level, and the drift-budget parameters.

    ``excess`` is the drift fraction allowed in the conclusion;
    ``cubic_coeff`` scales the cubic prefix-deficit budget
    ``cubic_coeff * excess**3``.
    """

    functional: DualVector
    level: int
    excess: float
    cubic_coeff: float

    def __post_init__(self) -> None:
        if not 0.0 < self.excess < 1.0:
            raise ValueError(f"excess must lie in (0, 1), got {self.excess}")
        if not 0.0 < self.cubic_coeff < _CUBIC_CAP:
            raise ValueError(
                f"cubic coefficient must lie in (0, {_CUBIC_CAP}), got {self.cubic_coeff}"
            )
        if not 0 <= self.level <= self.functional.depth:
            raise ValueError(
                f"split level {self.level} outside 0..{self.functional.depth}"
            )


class BandStabilityOutcome(NamedTuple):
    premise: bool
    conclusion: bool
    margins: dict[str, float]


def check_band_stability(
    inst: BandStabilityInstance,
    *,
    tol: float = _SOLVER_TOL,
    scope: SolverScope | None = None,
    assume_unit: bool = False,
) -> BandStabilityOutcome:
    """Evaluate both band-stability inequalities on one instance.

    Premise: the levels up to ``level`` capture all but a
    ``cubic_coeff * excess**3`` fraction of the dual norm.  Conclusion: the
    tail past ``level`` stays within the level band norm plus
    ``excess`` times the full norm.  Margins are reported signed
    (positive = satisfied); premises at the boundary count as satisfied
    within :data:`STRICT_SLACK`.

    ``assume_unit`` trusts that the caller already certified
    ``inst.functional`` to have dual norm 1 (the campaign sampler divides
    by a solved norm immediately before calling) and skips re-solving the
    same direction; the substituted value 1.0 carries the same relative
    error as a fresh solve would.
    """
    sc = _scope(scope)
    z = inst.functional
    deficit = inst.cubic_coeff * inst.excess**3
    norm_z = 1.0 if assume_unit else sc.norm(z, tol)
    prefix_norm = sc.norm(adjoint_project(z, 0, inst.level), tol)
    band_norm = level_norm(z, inst.level)
    tail_norm = sc.norm(adjoint_project(z, inst.level), tol)
    premise_margin = prefix_norm - (1.0 - deficit) * norm_z
    conclusion_margin = band_norm + inst.excess * norm_z - tail_norm
    premise = norm_z > tol and premise_margin > -STRICT_SLACK
    conclusion = conclusion_margin > -STRICT_SLACK
    margins = {
        "premise": float(premise_margin),
        "conclusion": float(conclusion_margin),
        "norm": float(norm_z),
        "prefix_norm": float(prefix_norm),
        "band_norm": float(band_norm),
        "tail_norm": float(tail_norm),
    }
    return BandStabilityOutcome(premise, conclusion, margins)


# ---------------------------------------------------------------------------
# Perturbation stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationInstance:
    """A near-unit base functional plus a perturbation to test for tail size.

    ``tail_bound`` is the bound the perturbation's tail must obey;
    ``quintic_coeff`` scales the smallness threshold
    ``quintic_coeff * tail_bound**5`` used in the premises.
    """

    base: DualVector
    perturbation: DualVector
    level: int
    tail_bound: float
    quintic_coeff: float

    def __post_init__(self) -> None:
        if self.base.depth != self.perturbation.depth:
            raise ValueError(
                f"depth mismatch: {self.base.depth} vs {self.perturbation.depth}"
            )
        if not 0.0 < self.tail_bound < 1.0:
            raise ValueError(f"tail bound must lie in (0, 1), got {self.tail_bound}")
        if not 0.0 < self.quintic_coeff < _QUINTIC_CAP:
            raise ValueError(
                f"quintic coefficient must lie in (0, {_QUINTIC_CAP}), "
                f"got {self.quintic_coeff}"
            )
        if not 1 <= self.level <= self.base.depth:
            raise ValueError(
                f"split level {self.level} outside 1..{self.base.depth}"
            )


class PerturbationOutcome(NamedTuple):
    premises: tuple[bool, bool, bool, bool, bool, bool]
    conclusion: bool
    margins: dict[str, float]


def _horizon_trace_prev(v: DualVector) -> float:
    """Horizon trace of the one-level-shallower truncation of ``v``."""
    if v.depth == 0:
        return 0.0
    prev = DualVector.from_array(v.depth - 1, v.to_array()[: node_count(v.depth - 1)])
    return level_norm(prev, prev.depth)


def check_perturbation_stability(
    inst: PerturbationInstance,
    *,
    tol: float = _SOLVER_TOL,
    scope: SolverScope | None = None,
) -> PerturbationOutcome:
    """Evaluate the six premises and the tail conclusion on one instance.

    The infinite-model trace of a functional along branches is modeled by
    its horizon-level coefficients; each outcome also carries the same
    trace evaluated one level shallower, so reports expose how sensitive
    the premises are to that surrogate choice.
    """
    sc = _scope(scope)
    threshold = inst.quintic_coeff * inst.tail_bound**5
    x, u, lvl = inst.base, inst.perturbation, inst.level
    depth = x.depth
    total = DualVector.from_array(depth, x.to_array() + u.to_array())

    tail_base = sc.norm(adjoint_project(x, lvl), tol)
    band_base = level_norm(x, lvl)
    horizon_base = level_norm(x, depth)
    tail_sum = sc.norm(adjoint_project(total, lvl), tol)
    band_pert = level_norm(u, lvl)
    horizon_pert = level_norm(u, depth)
    tail_pert = sc.norm(adjoint_project(u, lvl), tol)

    margins = {
        "tail_base": 1.0 - tail_base,
        "band_base": band_base - (1.0 - threshold),
        "horizon_base": horizon_base - (1.0 - threshold),
        "tail_sum": 1.0 - tail_sum,
        "band_pert": threshold - band_pert,
        "horizon_pert": threshold - horizon_pert,
        "conclusion": inst.tail_bound - tail_pert,
    }
    horizon_base_prev = _horizon_trace_prev(x)
    horizon_pert_prev = _horizon_trace_prev(u)
    margins["horizon_base_prev"] = horizon_base_prev - (1.0 - threshold)
    margins["horizon_pert_prev"] = threshold - horizon_pert_prev
    margins["horizon_shift"] = max(
        abs(horizon_base - horizon_base_prev), abs(horizon_pert - horizon_pert_prev)
    )
    premises = tuple(
        margins[key] > -STRICT_SLACK
        for key in (
            "tail_base",
            "band_base",
            "horizon_base",
            "tail_sum",
            "band_pert",
            "horizon_pert",
        )
    )
    conclusion = margins["conclusion"] > -STRICT_SLACK
    return PerturbationOutcome(premises, conclusion, margins)


# ---------------------------------------------------------------------------
# Cubic tail growth
# ---------------------------------------------------------------------------


def power_coefficient(limit: float) -> float:
    """Largest ``k`` with ``k * (1 + k)**2 <= limit``, by bisection.

    The map is strictly increasing, so bisection on ``[0, limit]``
    converges; 200 halvings push the bracket far below double precision.
    """
    if not 0.0 < limit < _CUBIC_CAP:
        raise ValueError(f"limit must lie in (0, {_CUBIC_CAP}), got {limit}")
    lo, hi = 0.0, float(limit)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * (1.0 + mid) ** 2 <= limit:
            lo = mid
        else:
            hi = mid
    return lo


class PowerTypeOutcome(NamedTuple):
    holds: bool
    margin: float
    coefficient: float
    level: int
    estimate: ModulusEstimate


_DEFAULT_GROWTH_BUDGET = SearchBudget(starts=12, steps=30, finalists=2)


def _gap_level(x_star: DualVector) -> int:
    """First level strictly above the support, leaving a one-level gap."""
    gap = x_star.support_level() + 1
    if gap >= x_star.depth:
        raise ValueError(
            "support reaches too deep: no tail subspace remains past the gap level"
        )
    return gap


def check_power_type(
    x_star: DualVector,
    eps: float,
    c: float,
    *,
    budget: SearchBudget | None = None,
    tol: float = _SOLVER_TOL,
    seed: int = 0,
    scope: SolverScope | None = None,
) -> PowerTypeOutcome:
    """Check cubic norm growth along the tail past the support gap.

    ``x_star`` must be unit within 1e-6 and leave at least one whole level
    between its support and the horizon.  The growth coefficient ``k``
    solves ``k * (1 + k)**2 = c``; the check searches the tail unit sphere
    for the direction of least growth and asks for
    ``min-found >= k * eps**3 - 1e-6``.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    sc = _scope(scope)
    k = power_coefficient(c)
    norm = sc.norm(x_star, tol)
    if abs(norm - 1.0) > 1e-6 + tol:
        raise ValueError(f"functional must be unit within 1e-6, has norm {norm}")
    gap = _gap_level(x_star)
    space = NormSpace.dual_tree_space(
        x_star.depth, tol=tol, solver=sc.solver(x_star.depth)
    )
    tail = Subspace.tail_past_level(x_star.depth, gap)
    est = delta_bar(
        space,
        x_star.to_array(),
        eps,
        tail,
        budget or _DEFAULT_GROWTH_BUDGET,
        seed=seed,
    )
    margin = est.value - k * eps**3
    return PowerTypeOutcome(margin >= -STRICT_SLACK, float(margin), k, gap, est)


# ---------------------------------------------------------------------------
# Shallow-vector growth
# ---------------------------------------------------------------------------


class ShallowGrowthOutcome(NamedTuple):
    holds: bool
    margins: dict[str, float]
    level: int
    estimate: ModulusEstimate


def check_shallow_growth(
    xstar: DualVector,
    eps: float,
    delta: float,
    eta2: float,
    c1: float,
    *,
    budget: SearchBudget | None = None,
    tol: float = _SOLVER_TOL,
    seed: int = 0,
    scope: SolverScope | None = None,
) -> ShallowGrowthOutcome:
    """Check the growth-factor bound for a functional with small horizon trace.

    Parameters must satisfy ``4*eta2 + delta/(1 - c1*delta**3) < eps`` and
    the functional must be unit with horizon trace at most ``eta2``;
    otherwise the instance is rejected with :class:`ValueError` (it is
    ineligible, not a counterexample).  The check searches the tail past
    the support gap and asks the worst found norm to reach
    ``1 / (1 - c1*delta**3)`` within 1e-6.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if eta2 <= 0.0:
        raise ValueError(f"eta2 must be positive, got {eta2}")
    if not 0.0 < c1 < _CUBIC_CAP:
        raise ValueError(f"c1 must lie in (0, {_CUBIC_CAP}), got {c1}")
    deficit = c1 * delta**3
    if 4.0 * eta2 + delta / (1.0 - deficit) >= eps:
        raise ValueError(
            "ineligible parameters: 4*eta2 + delta/(1 - c1*delta**3) must stay below eps"
        )
    sc = _scope(scope)
    norm = sc.norm(xstar, tol)
    if abs(norm - 1.0) > 1e-6 + tol:
        raise ValueError(f"functional must be unit within 1e-6, has norm {norm}")
    trace = level_norm(xstar, xstar.depth)
    if trace > eta2 + 1e-9:
        raise ValueError(
            f"ineligible instance: horizon trace {trace} exceeds eta2 = {eta2}"
        )
    gap = _gap_level(xstar)
    space = NormSpace.dual_tree_space(xstar.depth, tol=tol, solver=sc.solver(xstar.depth))
    tail = Subspace.tail_past_level(xstar.depth, gap)
    est = delta_bar(
        space, xstar.to_array(), eps, tail, budget or _DEFAULT_GROWTH_BUDGET, seed=seed
    )
    target = 1.0 / (1.0 - deficit)
    attained = 1.0 + est.value
    margins = {
        "target": target,
        "attained": attained,
        "margin": attained - target,
        "horizon_trace": float(trace),
    }
    return ShallowGrowthOutcome(attained >= target - STRICT_SLACK, margins, gap, est)


# ---------------------------------------------------------------------------
# Growth-factor constant system (exact rational arithmetic)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthConstants:
    """Exact constants certifying a norm-growth factor ``growth_factor > 1``.

    ``growth_factor - 1`` is far below double precision (the tail-power
    inequality cubes already-tiny slacks twice), so every field is a
    :class:`fractions.Fraction` and all verification is exact.
    """

    eps: Fraction
    tail_bound: Fraction
    excess: Fraction
    horizon_cap: Fraction
    band_slack: Fraction
    slack_primary: Fraction
    slack_secondary: Fraction
    additive_slack: Fraction
    growth_factor: Fraction
    quintic_coeff: Fraction
    cubic_coeff: Fraction
    feasible: bool
    slacks: dict[str, Fraction] = field(compare=False)

    def as_decimal_strings(self, digits: int = 12) -> dict[str, str]:
        """Constants and slacks rendered as ``digits``-digit decimals."""
        out = {
            name: _decimal_str(getattr(self, name), digits)
            for name in (
                "eps",
                "tail_bound",
                "excess",
                "horizon_cap",
                "band_slack",
                "slack_primary",
                "slack_secondary",
                "additive_slack",
                "growth_factor",
            )
        }
        for name, value in self.slacks.items():
            out[f"slack:{name}"] = _decimal_str(value, digits)
        return out


def _decimal_str(x: Fraction, digits: int) -> str:
    with localcontext() as ctx:
        ctx.prec = digits
        return str(Decimal(x.numerator) / Decimal(x.denominator))


def growth_slacks(consts: GrowthConstants) -> dict[str, Fraction]:
    """Re-substitute the constants into every inequality group, exactly.

    Each entry is the amount by which the inequality holds; all must be
    strictly positive for a feasible set.  Computed from the constant
    fields alone so it can audit any claimed solution.
    """
    eps = consts.eps
    e0 = consts.tail_bound
    d = consts.excess
    h = consts.horizon_cap
    g1 = consts.band_slack
    g2 = consts.slack_primary
    g3 = consts.slack_secondary
    g4 = consts.additive_slack
    tau = consts.growth_factor
    f2 = consts.quintic_coeff * e0**5
    f1d = consts.cubic_coeff * d**3
    tail_power = h**3 * g3**3 / (2**15 * (1 - g2) ** 3)
    return {
        # 4*horizon_cap + excess/(1 - f1(excess)) < eps, cleared of the denominator
        "separation": eps * (1 - f1d) - (4 * h * (1 - f1d) + d),
        "slack-order": min(g2 - g3, Fraction(1, 2) - g2),
        "product-bound": (1 - g1) * (1 - g2) - tau * (1 - f2),
        # squared form of the strict bound tau < (1-g2)/sqrt(1-f2^2)
        "square-bound": (1 - g2) ** 2 - tau**2 * (1 - f2**2),
        "tail-power": (tail_power - g4 + 1) - tau,
        "drift": tau * consts.cubic_coeff - (tau - 1 + g4),
        "iteration": 1 - tau * (1 - f1d),
    }


def solve_growth_constants(
    eps: float | Fraction,
    quintic_coeff: float | Fraction = Fraction(1, 2**27),
    cubic_coeff: float | Fraction = Fraction(1, 2**12),
) -> GrowthConstants:
    """Produce and exactly verify a feasible growth-constant system.

    The constants follow a closed-form schedule (quarter/eighth splits of
    ``eps``, then slacks derived from the quintic threshold) that is
    feasible for every ``eps`` in ``(0, 1)``; feasibility is nevertheless
    re-checked by exact substitution of every inequality, and an
    infeasible outcome is reported as a value rather than raised.
    """
    eps = Fraction(eps)
    quintic_coeff = Fraction(quintic_coeff)
    cubic_coeff = Fraction(cubic_coeff)
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < quintic_coeff < Fraction(1, 2**26):
        raise ValueError("quintic coefficient must lie in (0, 2**-26)")
    if not 0 < cubic_coeff <= Fraction(1, 2**12):
        raise ValueError("cubic coefficient must lie in (0, 2**-12]")

    e0 = eps / 4
    f2 = quintic_coeff * e0**5
    g1 = f2 / 4
    g2 = f2**2 / 4
    g3 = g2 / 2
    h = eps / 8
    d = eps / 4
    tail_power = h**3 * g3**3 / (2**15 * (1 - g2) ** 3)
    g4 = tail_power / 4
    tau = 1 + tail_power / 2

    consts = GrowthConstants(
        eps=eps,
        tail_bound=e0,
        excess=d,
        horizon_cap=h,
        band_slack=g1,
        slack_primary=g2,
        slack_secondary=g3,
        additive_slack=g4,
        growth_factor=tau,
        quintic_coeff=quintic_coeff,
        cubic_coeff=cubic_coeff,
        feasible=True,
        slacks={},
    )
    slacks = growth_slacks(consts)
    feasible = all(s > 0 for s in slacks.values())
    return GrowthConstants(
        eps=eps,
        tail_bound=e0,
        excess=d,
        horizon_cap=h,
        band_slack=g1,
        slack_primary=g2,
        slack_secondary=g3,
        additive_slack=g4,
        growth_factor=tau,
        quintic_coeff=quintic_coeff,
        cubic_coeff=cubic_coeff,
        feasible=feasible,
        slacks=slacks,
    )


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


_CHECK_KINDS = ("band-stability", "perturbation-stability", "power-type", "shallow-growth")
_EXCESS_GRID = (0.1, 0.2, 0.35, 0.5, 0.7, 0.9)
_POWER_EPS_GRID = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CampaignConfig:
    """Campaign selection plus parameters, mirroring the config-file keys."""

    check: str
    depth: int = 5
    trials: int = 100
    seed: int = 0
    eps: float = 0.5
    c: float = 2.0**-11
    delta: float = 0.1
    eta2: float = 0.05
    f2c: float = 2.0**-27

    def __post_init__(self) -> None:
        if self.check not in _CHECK_KINDS:
            raise ValueError(
                f"unknown check {self.check!r}; expected one of {', '.join(_CHECK_KINDS)}"
            )
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.trials < 0:
            raise ValueError(f"trials must be >= 0, got {self.trials}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "CampaignConfig":
        kwargs: dict[str, object] = {}
        for key, value in mapping.items():
            if key == "check":
                kwargs[key] = str(value)
            elif key in ("depth", "trials", "seed"):
                kwargs[key] = int(value)
            elif key in ("eps", "c", "delta", "eta2", "f2c"):
                kwargs[key] = float(value)
            else:
                raise ValueError(f"unknown config key {key!r}")
        if "check" not in kwargs:
            raise ValueError("config must name a check")
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "CampaignConfig":
        """Parse ``key = value`` lines; '#' starts a comment."""
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise ValueError(f"config line {lineno}: empty key or value")
            if key in values:
                raise ValueError(f"config line {lineno}: duplicate key {key!r}")
            values[key] = value
        try:
            return cls.from_mapping(values)
        except (TypeError, ValueError) as err:
            raise ValueError(f"invalid config: {err}") from err


@dataclass(frozen=True)
class CampaignReport:
    """Aggregated campaign result plus the per-trial records."""

    check: str
    depth: int
    trials: int
    seed: int
    premise_hits: int
    violations: int
    worst_margin: float
    records: tuple[dict, ...]

    def to_jsonl(self) -> str:
        """One sorted-key JSON object per record; byte-stable under a seed."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")

    def to_csv(self) -> str:
        header = "check,depth,trials,premise_hits,violations,worst_margin\n"
        row = (
            f"{self.check},{self.depth},{self.trials},{self.premise_hits},"
            f"{self.violations},{self.worst_margin!r}\n"
        )
        return header + row


def _clean(record: dict) -> dict:
    out: dict[str, object] = {}
    for key, value in record.items():
        if isinstance(value, (bool, np.bool_)):
            out[key] = bool(value)
        elif isinstance(value, (int, np.integer)):
            out[key] = int(value)
        elif isinstance(value, (float, np.floating)):
            out[key] = float(value)
        else:
            out[key] = value
    return out


def _shallow_unit_functional(
    depth: int, support_depth: int, rng: np.random.Generator
) -> DualVector:
    """Exactly-unit functional supported in levels ``0..support_depth``.

    Built as the norming functional of a random vector at the support
    depth, then zero-extended: the construction is unit by duality and
    stays unit at any deeper horizon.
    """
    m = node_count(support_depth)
    coeffs = rng.uniform(-1.0, 1.0, size=m)
    while not np.any(coeffs):
        coeffs = rng.uniform(-1.0, 1.0, size=m)
    f = norming_functional(JTVector.from_array(support_depth, coeffs))
    out = np.zeros(node_count(depth))
    out[:m] = f.to_array()
    return DualVector.from_array(depth, out)


def _campaign_band_stability(cfg: CampaignConfig, sc: SolverScope) -> tuple[list[dict], int, int, float]:
    records: list[dict] = []
    hits = violations = 0
    worst = math.inf
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        level = int(rng.integers(1, cfg.depth))
        excess = float(_EXCESS_GRID[rng.integers(0, len(_EXCESS_GRID))])
        deficit = cfg.c * excess**3
        damped = bool(rng.random() < 0.5)
        raw = rng.uniform(-1.0, 1.0, size=node_count(cfg.depth))
        if damped:
            # shrink the tail so its coefficient ell2 norm (an upper bound
            # on its dual norm) sits at the scale of the premise budget
            start = level_slice(level + 1)[0] if level < cfg.depth else raw.size
            tail = raw[start:]
            tail_norm = float(np.linalg.norm(tail))
            if tail_norm > 0.0:
                target = deficit * rng.uniform(0.0, 2.0)
                raw[start:] = tail * (target / tail_norm)
        while not np.any(raw):
            raw = rng.uniform(-1.0, 1.0, size=node_count(cfg.depth))
        nrm = sc.norm(DualVector.from_array(cfg.depth, raw), _SOLVER_TOL)
        inst = BandStabilityInstance(
            DualVector.from_array(cfg.depth, raw / nrm), level, excess, cfg.c
        )
        premise, conclusion, margins = check_band_stability(
            inst, scope=sc, assume_unit=True
        )
        hits += premise
        if premise:
            worst = min(worst, margins["conclusion"])
            violations += not conclusion
        records.append(
            _clean(
                {
                    "trial": trial,
                    "level": level,
                    "excess": excess,
                    "arm": "damped" if damped else "uniform",
                    "premise": premise,
                    "conclusion": conclusion,
                    **margins,
                }
            )
        )
    return records, hits, violations, worst


def _random_chain(top: NodeId, depth: int, rng: np.random.Generator) -> list[NodeId]:
    nodes = [top]
    while nodes[-1].level < depth:
        nodes.append(nodes[-1].child(1 if rng.random() < 0.5 else -1))
    return nodes


def _diverge_chain(
    chain: Sequence[NodeId], at_level: int, depth: int, rng: np.random.Generator
) -> list[NodeId]:
    """Copy of ``chain`` taking the opposite child at ``at_level``."""
    keep = [n for n in chain if n.level < at_level]
    old_next = chain[len(keep)]
    parent = keep[-1]
    flipped = parent.child(1)
    if flipped == old_next:
        flipped = parent.child(-1)
    return keep + _random_chain(flipped, depth, rng)


def _chain_coeffs(depth: int, chains: Sequence[Sequence[NodeId]], weights) -> np.ndarray:
    out = np.zeros(node_count(depth))
    for chain, w in zip(chains, weights):
        for node in chain:
            out[lex_index(node)] += w
    return out


def _sample_perturbation_instance(
    cfg: CampaignConfig, trial: int, rng: np.random.Generator
) -> tuple[PerturbationInstance, str]:
    """Constructed near-boundary instance for the perturbation check.

    The base is a family of disjoint weighted chains running from the
    split level to the horizon; such a functional has dual norm exactly
    the ell2 norm of its weights, which pins the band, horizon, and tail
    norms at the unit boundary simultaneously.  The perturbation arm
    either vanishes, re-routes the light chains below a divergence level
    (band and horizon traces cancel exactly), or adds mid-band noise too
    small to push the combined tail out of the ball.
    """
    depth = cfg.depth
    level = int(rng.integers(1, depth))
    threshold = cfg.f2c * cfg.eps**5
    shrink = threshold * rng.uniform(0.3, 0.6)
    width = 1 << level

    n_heavy = int(rng.integers(1, min(width, 4) + 1))
    n_light = int(rng.integers(0, min(width - n_heavy, 2) + 1))
    top_offsets = rng.choice(width, size=n_heavy + n_light, replace=False)
    base_index = level_slice(level)[0]
    tops = [node_from_lex(base_index + int(o)) for o in top_offsets]
    chains = [_random_chain(t, depth, rng) for t in tops]

    light = np.full(n_light, threshold * rng.uniform(0.05, 0.15))
    if n_light:
        light /= math.sqrt(2.0 * n_light)
    heavy = rng.normal(size=n_heavy)
    heavy /= np.linalg.norm(heavy)
    heavy *= math.sqrt(max((1.0 - shrink) ** 2 - float(light @ light), 0.0))
    weights = np.concatenate([heavy, light])

    base_arr = _chain_coeffs(depth, chains, weights)
    # prefix mass above the split level is invisible to every inequality;
    # adding it keeps instances generic
    stop = level_slice(level - 1)[1] if level > 0 else 0
    base_arr[:stop] += rng.uniform(-1.0, 1.0, size=stop) * rng.uniform(0.0, 1.0)

    arm = ("zero", "reroute", "noise")[trial % 3]
    pert_arr = np.zeros_like(base_arr)
    if arm == "reroute" and n_light:
        for j in range(n_light):
            chain = chains[n_heavy + j]
            at = int(rng.integers(level + 1, depth + 1))
            new_chain = _diverge_chain(chain, at, depth, rng)
            pert_arr += _chain_coeffs(depth, [new_chain], [light[j]])
            pert_arr -= _chain_coeffs(depth, [chain], [light[j]])
    elif arm == "noise" and level + 1 <= depth - 1:
        lo = level_slice(level + 1)[0]
        hi = level_slice(depth - 1)[1]
        noise = rng.uniform(-1.0, 1.0, size=hi - lo)
        scale = float(np.linalg.norm(noise))
        if scale > 0.0:
            pert_arr[lo:hi] = noise * (shrink / (2.0 * scale))

    inst = PerturbationInstance(
        DualVector.from_array(depth, base_arr),
        DualVector.from_array(depth, pert_arr),
        level,
        cfg.eps,
        cfg.f2c,
    )
    return inst, arm


def _campaign_perturbation(cfg: CampaignConfig, sc: SolverScope) -> tuple[list[dict], int, int, float]:
    if not 0.0 < cfg.eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {cfg.eps}")
    records: list[dict] = []
    hits = violations = 0
    worst = math.inf
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        inst, arm = _sample_perturbation_instance(cfg, trial, rng)
        premises, conclusion, margins = check_perturbation_stability(inst, scope=sc)
        all_premises = all(premises)
        hits += all_premises
        if all_premises:
            worst = min(worst, margins["conclusion"])
            violations += not conclusion
        records.append(
            _clean(
                {
                    "trial": trial,
                    "level": inst.level,
                    "arm": arm,
                    "premises": int(sum(premises)),
                    "premise": all_premises,
                    "conclusion": conclusion,
                    **margins,
                }
            )
        )
    return records, hits, violations, worst


def _campaign_power_type(cfg: CampaignConfig, sc: SolverScope) -> tuple[list[dict], int, int, float]:
    records: list[dict] = []
    hits = violations = 0
    worst = math.inf
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        support_depth = int(rng.integers(0, cfg.depth - 1))
        xstar = _shallow_unit_functional(cfg.depth, support_depth, rng)
        for j, eps in enumerate(_POWER_EPS_GRID):
            outcome = check_power_type(
                xstar, eps, cfg.c, seed=cfg.seed * 100003 + trial * 7 + j, scope=sc
            )
            hits += 1
            worst = min(worst, outcome.margin)
            violations += not outcome.holds
            records.append(
                _clean(
                    {
                        "trial": trial,
                        "eps": eps,
                        "level": outcome.level,
                        "coefficient": outcome.coefficient,
                        "value": outcome.estimate.value,
                        "margin": outcome.margin,
                        "holds": outcome.holds,
                        "method": outcome.estimate.method,
                    }
                )
            )
    return records, hits, violations, worst


def _campaign_shallow_growth(cfg: CampaignConfig, sc: SolverScope) -> tuple[list[dict], int, int, float]:
    deficit = cfg.c * cfg.delta**3
    if 4.0 * cfg.eta2 + cfg.delta / (1.0 - deficit) >= cfg.eps:
        raise ValueError(
            "ineligible parameters: 4*eta2 + delta/(1 - c*delta**3) must stay below eps"
        )
    records: list[dict] = []
    hits = violations = 0
    worst = math.inf
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        support_depth = int(rng.integers(0, cfg.depth - 1))
        xstar = _shallow_unit_functional(cfg.depth, support_depth, rng)
        outcome = check_shallow_growth(
            xstar,
            cfg.eps,
            cfg.delta,
            cfg.eta2,
            cfg.c,
            seed=cfg.seed * 100003 + trial,
            scope=sc,
        )
        hits += 1
        worst = min(worst, outcome.margins["margin"])
        violations += not outcome.holds
        records.append(
            _clean(
                {
                    "trial": trial,
                    "level": outcome.level,
                    "holds": outcome.holds,
                    **outcome.margins,
                }
            )
        )
    return records, hits, violations, worst


_CAMPAIGNS = {
    "band-stability": _campaign_band_stability,
    "perturbation-stability": _campaign_perturbation,
    "power-type": _campaign_power_type,
    "shallow-growth": _campaign_shallow_growth,
}


def run_campaign(config: CampaignConfig | Mapping[str, object]) -> CampaignReport:
    """Run the configured campaign; deterministic for a fixed seed/config."""
    cfg = (
        config
        if isinstance(config, CampaignConfig)
        else CampaignConfig.from_mapping(config)
    )
    records, hits, violations, worst = _CAMPAIGNS[cfg.check](cfg, SolverScope(fresh=True))
    return CampaignReport(
        check=cfg.check,
        depth=cfg.depth,
        trials=cfg.trials,
        seed=cfg.seed,
        premise_hits=hits,
        violations=violations,
        worst_margin=worst,
        records=tuple(records),
    )
