"""
Structural checkers for allocation rules and mechanisms.

Exhaustive checks enumerate every realization of a small (k, T) together with
every bid profile of a finite grid. Universal statements over real bids are
only approximated by the grid. Randomized mechanisms are checked by Monte-Carlo
with common random numbers across the bids being compared.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from config.settings import get_settings
from core.exceptions import BudgetExceededError, ConfigurationError
from models import BidProfile, Number, Realization, StochasticInstance, format_number, parse_bid
from services.allocation_service import AllocationRule, as_bid_matrix, simulate, stochastic_counts
from services.click_streams import (
    RULE_STREAM,
    EnumeratedSource,
    RealizationSource,
    make_rng,
    realization_from_index,
)
from services.mechanism_service import Mechanism

logger = logging.getLogger(__name__)

KINDS = ("monotonicity", "separation", "weak-separation", "truthfulness", "normalization")


# ----------------------------- Budget and grids ----------------------------- #

@dataclass(frozen=True)
class EnumerationBudget:
    """Limits of exhaustive enumeration plus the bid grid of every agent."""
    grids: Tuple[Tuple[Number, ...], ...]
    max_kt: Optional[int] = None
    max_profiles: Optional[int] = None

    def __post_init__(self):
        if not self.grids:
            raise ConfigurationError("Bid grid must not be empty")
        cleaned = []
        for grid in self.grids:
            values = tuple(sorted(set(grid)))
            if not values or values[0] <= 0:
                raise ConfigurationError(f"Bid grid values must be positive: {grid}")
            cleaned.append(values)
        object.__setattr__(self, "grids", tuple(cleaned))
        settings = get_settings()
        if self.max_kt is None:
            object.__setattr__(self, "max_kt", settings.max_enumeration_kt)
        if self.max_profiles is None:
            object.__setattr__(self, "max_profiles", settings.max_bid_profiles)
        if self.max_kt > settings.enumeration_hard_cap:
            raise ConfigurationError(
                f"Enumeration budget k*T <= {self.max_kt} exceeds the hard cap {settings.enumeration_hard_cap}"
            )

    @classmethod
    def uniform(cls, k: int, grid: Sequence[Number], **limits) -> "EnumerationBudget":
        return cls(grids=tuple(tuple(grid) for _ in range(k)), **limits)

    @classmethod
    def default(cls, k: int, base: Number = 1, **limits) -> "EnumerationBudget":
        """{0.25, 0.5, 1, 2, 4}·base for every agent, kept exact."""
        base = Fraction(base) if not isinstance(base, float) else Fraction(str(base))
        grid = [base * Fraction(str(m)) for m in get_settings().default_grid_multipliers]
        return cls.uniform(k, grid, **limits)

    @classmethod
    def parse(cls, k: int, text: str, **limits) -> "EnumerationBudget":
        """'1,2,3' for a shared grid, or per-agent grids separated by ';'."""
        parts = [p for p in text.split(";") if p.strip()]
        grids = [tuple(parse_bid(x) for x in p.split(",") if x.strip()) for p in parts]
        if len(grids) == 1:
            grids = grids * k
        if len(grids) != k:
            raise ConfigurationError(f"Expected 1 or {k} bid grids, got {len(grids)}")
        return cls(grids=tuple(grids), **limits)

    @property
    def k(self) -> int:
        return len(self.grids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(g) for g in self.grids)

    @property
    def n_profiles(self) -> int:
        return int(np.prod(self.shape))

    def profiles(self) -> List[BidProfile]:
        """Grid product in lexicographic order (agent 0 slowest)."""
        return [BidProfile(p) for p in itertools.product(*self.grids)]

    def check(self, k: int, T: int):
        if k != self.k:
            raise ConfigurationError(f"Bid grid covers {self.k} agents, rule has k={k}")
        if k * T > self.max_kt:
            raise BudgetExceededError(
                f"Exhaustive enumeration of 2^(k*T) = 2^{k * T} realizations exceeds the budget 2^{self.max_kt}",
                requested=k * T, limit=self.max_kt,
            )
        if self.n_profiles > self.max_profiles:
            raise BudgetExceededError(
                f"Bid grid has {self.n_profiles} profiles, budget is {self.max_profiles}",
                requested=self.n_profiles, limit=self.max_profiles,
            )
        runs = self.n_profiles * (1 << (k * T))
        settings = get_settings()
        if runs > settings.max_batch_runs * 64:
            raise BudgetExceededError(
                f"{runs} profile-realization pairs exceed the run budget", requested=runs,
                limit=settings.max_batch_runs * 64,
            )


def _grid_product_matrix(grids: Sequence[Sequence[Number]]) -> np.ndarray:
    rows = list(itertools.product(*grids))
    exact = all(isinstance(x, (int, Fraction)) for row in rows for x in row)
    if exact:
        return np.array([[Fraction(x) for x in row] for row in rows], dtype=object)
    return np.array([[float(x) for x in row] for row in rows], dtype=float)


# ----------------------------- Results ----------------------------- #

@dataclass(frozen=True)
class Counterexample:
    """
    One concrete violation, replayable from its stored inputs.

    `bids` is the profile under test; `alternative_bids` is the profile it is
    compared with (a raised bid, a deviation, or a bid profile that changes a
    round's allocation). `outcomes` describes the two conflicting outcomes.
    """
    kind: str
    rule: str
    bids: BidProfile
    realization: Realization
    rounds: Tuple[int, ...]
    agents: Tuple[int, ...]
    alternative_bids: Optional[BidProfile] = None
    value: Optional[Number] = None
    outcomes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"Unknown counterexample kind {self.kind!r}")

    def to_text(self) -> str:
        lines = [
            f"kind: {self.kind}",
            f"rule: {self.rule}",
            f"k: {self.realization.k}",
            f"T: {self.realization.T}",
            f"bids: {self.bids}",
        ]
        if self.alternative_bids is not None:
            lines.append(f"alternative_bids: {self.alternative_bids}")
        if self.value is not None:
            lines.append(f"value: {format_number(self.value)}")
        lines.append(f"rounds: {','.join(str(t) for t in self.rounds)}")
        lines.append(f"agents: {','.join(str(a) for a in self.agents)}")
        lines.extend(f"outcome: {o}" for o in self.outcomes)
        lines.append("realization:")
        return "\n".join(lines) + "\n" + self.realization.to_text()

    @classmethod
    def from_text(cls, text: str) -> "Counterexample":
        header, sep, body = text.partition("realization:")
        if not sep:
            raise ConfigurationError("Counterexample text has no 'realization:' section")
        fields: Dict[str, str] = {}
        outcomes: List[str] = []
        for line in header.splitlines():
            if not line.strip():
                continue
            key, colon, value = line.partition(":")
            if not colon:
                raise ConfigurationError(f"Malformed counterexample line: {line!r}")
            key, value = key.strip(), value.strip()
            if key == "outcome":
                outcomes.append(value)
            else:
                fields[key] = value
        try:
            realization = Realization.from_text(body)
            cex = cls(
                kind=fields["kind"],
                rule=fields["rule"],
                bids=BidProfile.parse(fields["bids"]),
                realization=realization,
                rounds=tuple(int(x) for x in fields.get("rounds", "").split(",") if x),
                agents=tuple(int(x) for x in fields.get("agents", "").split(",") if x),
                alternative_bids=BidProfile.parse(fields["alternative_bids"]) if "alternative_bids" in fields else None,
                value=parse_bid(fields["value"]) if "value" in fields else None,
                outcomes=tuple(outcomes),
            )
        except KeyError as e:
            raise ConfigurationError(f"Counterexample text is missing field {e.args[0]!r}")
        if "k" in fields and int(fields["k"]) != realization.k or "T" in fields and int(fields["T"]) != realization.T:
            raise ConfigurationError("Counterexample realization does not match its k and T")
        return cex


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a checker; truthy when the property held on everything enumerated."""
    check: str
    passed: bool
    counterexample: Optional[Counterexample] = None
    checked: int = 0

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": self.passed,
            "checked": self.checked,
            "counterexample": self.counterexample.to_text() if self.counterexample else None,
        }


class InfluenceRecord(NamedTuple):
    round: int
    agent: int
    influenced_round: int
    influenced_agents: Tuple[int, int]


# ----------------------------- Single-realization checks ----------------------------- #

def _require_deterministic(rule: AllocationRule):
    if not rule.deterministic:
        raise ConfigurationError(f"{rule.name} is randomized; this check needs a deterministic rule")


def _allocations(rule: AllocationRule, bid_matrix: np.ndarray, realization: Realization) -> np.ndarray:
    """Allocation trace (n_profiles, T) of one realization under many bid profiles."""
    source = RealizationSource.repeated(realization, bid_matrix.shape[0])
    return simulate(rule.spawn(), bid_matrix, source).agents


def find_influential_rounds(rule: AllocationRule, bids: BidProfile, realization: Realization) -> Set[InfluenceRecord]:
    """
    Every (t, j, t') where flipping the observed bit ρ_j(t) of the shown agent j
    changes the allocation at a later round t'.

    Bits of agents not shown at t are never observed, so they are not flipped.
    """
    _require_deterministic(rule)
    if bids.k != rule.k or realization.k != rule.k or realization.T != rule.T:
        raise ConfigurationError("Rule, bids and realization must share k and T")
    base = _allocations(rule, as_bid_matrix(bids), realization)[0]
    flipped = [realization.flip(int(base[t]), t) for t in range(rule.T)]
    source = RealizationSource.of(flipped)
    traces = simulate(rule.spawn(), as_bid_matrix(bids, rule.T), source).agents
    records = set()
    for t in range(rule.T):
        for later in range(t + 1, rule.T):
            if traces[t, later] != base[later]:
                records.add(InfluenceRecord(t, int(base[t]), later, (int(base[later]), int(traces[t, later]))))
    return records


def is_secured(rule: AllocationRule, bids: BidProfile, realization: Realization, t: int, agent: int,
               grid: Sequence[Number]) -> bool:
    """True iff raising `agent`'s bid to any larger grid value leaves round t's allocation unchanged."""
    _require_deterministic(rule)
    higher = [x for x in sorted(set(grid)) if x > bids[agent]]
    if not higher:
        return True
    profiles = [bids] + [bids.with_bid(agent, x) for x in higher]
    trace = _allocations(rule, np.concatenate([as_bid_matrix(p) for p in profiles]), realization)
    return bool(np.all(trace[:, t] == trace[0, t]))


def check_bid_independent(rule: AllocationRule, realization: Realization, t: int,
                          grid: Sequence[Sequence[Number]]) -> bool:
    """True iff the allocation at round t is the same for every profile in the grid product."""
    _require_deterministic(rule)
    grids = [tuple(g) for g in grid]
    if len(grids) == 1 and rule.k > 1:
        grids = grids * rule.k
    n_profiles = int(np.prod([len(g) for g in grids]))
    limit = get_settings().max_bid_profiles
    if n_profiles > limit:
        raise BudgetExceededError(f"Bid grid has {n_profiles} profiles, budget is {limit}",
                                  requested=n_profiles, limit=limit)
    trace = _allocations(rule, _grid_product_matrix(grids), realization)
    return bool(np.all(trace[:, t] == trace[0, t]))


# ----------------------------- Exhaustive tables ----------------------------- #

@dataclass
class AllocationTable:
    """
    Allocation of every (grid profile, realization, round): agents[p, r, t].

    Realization r holds bit (j, t) at position j*T + t of its index.
    """
    k: int
    T: int
    budget: EnumerationBudget
    profiles: List[BidProfile]
    agents: np.ndarray
    clicks: Optional[np.ndarray] = None
    payments: Optional[np.ndarray] = None
    _influence: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _secured: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_realizations(self) -> int:
        return self.agents.shape[1]

    def realization(self, r: int) -> Realization:
        return realization_from_index(r, self.k, self.T)

    def profile_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.budget.shape))

    def profile_coords(self, p: int) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(p, self.budget.shape))

    def influence(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        influential[p, r, t] and influenced[p, r, t, i].

        Flipping the shown bit at t leaves rounds <= t untouched, so only t' > t are compared.
        """
        if self._influence is None:
            A = self.agents
            P, R, T = A.shape
            influential = np.zeros((P, R, T), dtype=bool)
            influenced = np.zeros((P, R, T, self.k), dtype=bool)
            index = np.arange(R, dtype=np.int64)[None, :]
            for t in range(T - 1):
                shown = A[:, :, t].astype(np.int64)
                flipped = index ^ (np.int64(1) << (shown * T + t))
                later = A[:, :, t + 1:]
                counter = np.take_along_axis(later, np.broadcast_to(flipped[:, :, None], later.shape), axis=1)
                differs = counter != later
                influential[:, :, t] = differs.any(axis=2)
                for i in range(self.k):
                    influenced[:, :, t, i] = (differs & ((later == i) | (counter == i))).any(axis=2)
            self._influence = (influential, influenced)
        return self._influence

    def secured(self) -> np.ndarray:
        """
        secured[p, r, t, i]: every grid profile raising only agent i's bid keeps round t's allocation.
        """
        if self._secured is None:
            shape = self.budget.shape
            R, T = self.agents.shape[1:]
            grid_view = self.agents.reshape(*shape, R, T)
            out = np.ones((*shape, R, T, self.k), dtype=bool)
            for i in range(self.k):
                moved = np.moveaxis(grid_view, i, 0)
                acc = np.ones(moved.shape, dtype=bool)
                for a in range(moved.shape[0] - 2, -1, -1):
                    acc[a] = (moved[a + 1] == moved[a]) & acc[a + 1]
                out[..., i] = np.moveaxis(acc, 0, i)
            self._secured = out.reshape(len(self.profiles), R, T, self.k)
        return self._secured

    def raised_profile(self, p: int, agent: int, r: int, t: int) -> Optional[int]:
        """Smallest raised grid profile for `agent` whose round-t allocation differs from p's."""
        coords = list(self.profile_coords(p))
        for a in range(coords[agent] + 1, self.budget.shape[agent]):
            coords[agent] = a
            q = self.profile_index(coords)
            if self.agents[q, r, t] != self.agents[p, r, t]:
                return q
        return None


def build_allocation_table(
    rule: AllocationRule,
    budget: EnumerationBudget,
    mechanism: Optional[Mechanism] = None,
    threads: int = 1,
) -> AllocationTable:
    """Run `rule` (or `mechanism`, recording payments) on every realization under every grid profile."""
    _require_deterministic(rule)
    budget.check(rule.k, rule.T)
    k, T = rule.k, rule.T
    profiles = budget.profiles()
    indices = np.arange(1 << (k * T), dtype=np.int64)
    logger.info(f"Enumerating {len(indices)} realizations x {len(profiles)} profiles for {rule.name} (k={k}, T={T})")

    def run_profile(p: int):
        source = EnumeratedSource(k, T, indices)
        fresh = rule.spawn()
        bids = as_bid_matrix(profiles[p], len(indices))
        if mechanism is None:
            batch = simulate(fresh, bids, source)
        else:
            batch = mechanism.run(fresh, bids, source)
        return batch.agents.astype(np.int8), batch.click_counts, batch.payments

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_profile, range(len(profiles))))
    else:
        parts = [run_profile(p) for p in range(len(profiles))]

    table = AllocationTable(k=k, T=T, budget=budget, profiles=profiles, agents=np.stack([p[0] for p in parts]))
    if mechanism is not None:
        table.clicks = np.stack([p[1] for p in parts])
        table.payments = np.stack([p[2] for p in parts])
    return table


def _first(mask: np.ndarray) -> Optional[Tuple[int, ...]]:
    """Lexicographically smallest index where mask holds."""
    hits = np.argwhere(mask)
    if len(hits) == 0:
        return None
    return tuple(int(x) for x in hits[0])


def _trace_text(table: AllocationTable, p: int, r: int) -> str:
    return "allocation " + ",".join(str(int(a)) for a in table.agents[p, r])


# ----------------------------- Exhaustive checks ----------------------------- #

def check_pointwise_monotone(rule: AllocationRule, budget: EnumerationBudget,
                             table: Optional[AllocationTable] = None, threads: int = 1) -> CheckResult:
    """A played agent stays played at that round after raising her bid to any larger grid value."""
    table = table or build_allocation_table(rule, budget, threads=threads)
    secured = table.secured()
    played = np.stack([table.agents == i for i in range(table.k)], axis=-1)
    violation = _first(played & ~secured)
    checked = table.agents.shape[0] * table.agents.shape[1]
    if violation is None:
        return CheckResult("pointwise-monotone", True, checked=checked)
    p, r, t, i = violation
    q = table.raised_profile(p, i, r, t)
    cex = Counterexample(
        kind="monotonicity", rule=rule.name, bids=table.profiles[p], realization=table.realization(r),
        rounds=(t,), agents=(i,), alternative_bids=table.profiles[q],
        outcomes=(_trace_text(table, p, r), _trace_text(table, q, r)),
    )
    logger.warning(f"{rule.name} is not pointwise monotone: agent {i} loses round {t} after raising her bid")
    return CheckResult("pointwise-monotone", False, cex, checked)


def check_exploration_separated(rule: AllocationRule, budget: EnumerationBudget,
                                table: Optional[AllocationTable] = None, threads: int = 1) -> CheckResult:
    """Every round that is influential under some grid profile is bid-independent for that realization."""
    table = table or build_allocation_table(rule, budget, threads=threads)
    influential, _ = table.influence()
    A = table.agents
    bid_independent = np.all(A == A[:1], axis=0)
    # (r, t) order: smallest realization first
    bad = influential.any(axis=0) & ~bid_independent
    checked = A.shape[0] * A.shape[1]
    violation = _first(bad)
    if violation is None:
        return CheckResult("exploration-separated", True, checked=checked)
    r, t = violation
    p = int(np.argmax(influential[:, r, t]))
    q = int(np.argmax(A[:, r, t] != A[p, r, t]))
    later = _influenced_round(table, p, r, t)
    cex = Counterexample(
        kind="separation", rule=rule.name, bids=table.profiles[p], realization=table.realization(r),
        rounds=(t, later), agents=(int(A[p, r, t]),), alternative_bids=table.profiles[q],
        outcomes=(_trace_text(table, p, r), _trace_text(table, q, r)),
    )
    logger.warning(f"{rule.name} is not exploration-separated: round {t} is influential and bid-dependent")
    return CheckResult("exploration-separated", False, cex, checked)


def _influenced_round(table: AllocationTable, p: int, r: int, t: int) -> int:
    j = int(table.agents[p, r, t])
    flipped = r ^ (1 << (j * table.T + t))
    differs = table.agents[p, flipped, t + 1:] != table.agents[p, r, t + 1:]
    return t + 1 + int(np.argmax(differs))


def check_weakly_separated(rule: AllocationRule, budget: EnumerationBudget,
                           table: Optional[AllocationTable] = None, threads: int = 1) -> CheckResult:
    """An influential round must be secured from every agent it influences."""
    table = table or build_allocation_table(rule, budget, threads=threads)
    _, influenced = table.influence()
    secured = table.secured()
    violation = _first(influenced & ~secured)
    checked = table.agents.shape[0] * table.agents.shape[1]
    if violation is None:
        return CheckResult("weakly-separated", True, checked=checked)
    p, r, t, i = violation
    q = table.raised_profile(p, i, r, t)
    cex = Counterexample(
        kind="weak-separation", rule=rule.name, bids=table.profiles[p], realization=table.realization(r),
        rounds=(t, _influenced_round(table, p, r, t)), agents=(int(table.agents[p, r, t]), i),
        alternative_bids=table.profiles[q],
        outcomes=(_trace_text(table, p, r), _trace_text(table, q, r)),
    )
    logger.warning(f"{rule.name} is not weakly separated: round {t} influences agent {i} but is not secured")
    return CheckResult("weakly-separated", False, cex, checked)


def _tolerance(values: np.ndarray) -> Number:
    if values.dtype == object:
        return 0
    return get_settings().myerson_relative_tol * (1.0 + np.abs(values))


def check_truthful_exhaustive(mechanism: Mechanism, k: int, T: int, budget: EnumerationBudget,
                              table: Optional[AllocationTable] = None, threads: int = 1) -> CheckResult:
    """
    For every realization, agent, true value v and deviation b from the agent's grid, and
    opponents' grid bids: v·C − P under bid v is at least v·C − P under bid b.

    Exact arithmetic (tolerance 0) when the grid is rational and the payments are exact.
    """
    rule = mechanism.rule(k, T)
    table = table or build_allocation_table(rule, budget, mechanism=mechanism, threads=threads)
    shape = budget.shape
    R = table.n_realizations
    clicks = table.clicks.reshape(*shape, R, k)
    payments = table.payments.reshape(*shape, R, k)
    checked = len(table.profiles) * R
    best: Optional[Tuple[Tuple[int, ...], int]] = None

    for i in range(k):
        c = np.moveaxis(clicks[..., i], i, 0)
        pay = np.moveaxis(payments[..., i], i, 0)
        grid = budget.grids[i]
        if pay.dtype == object or c.dtype == object:
            values = np.array([Fraction(v) if not isinstance(v, float) else v for v in grid], dtype=object)
        else:
            values = np.array([float(v) for v in grid])
        values = values.reshape((len(grid),) + (1,) * c.ndim)
        # utility[a, c_idx, ...]: value grid[a], bid grid[c_idx]
        utility = values * c[None] - pay[None]
        truthful = np.stack([utility[a, a] for a in range(len(grid))])
        gain = utility - truthful[:, None]
        bad = np.asarray(gain > _tolerance(truthful[:, None]), dtype=bool)
        # realization first, then agent
        hit = _first(np.moveaxis(bad, -1, 0))
        if hit is not None and (best is None or (hit[0], i) < (best[0][0], best[1])):
            best = (hit, i)

    if best is None:
        return CheckResult("truthful", True, checked=checked)
    (r, a, b_idx, *others), i = best
    others = list(others)
    coords_true = others[:i] + [a] + others[i:]
    coords_dev = others[:i] + [b_idx] + others[i:]
    p_true, p_dev = table.profile_index(coords_true), table.profile_index(coords_dev)
    v = budget.grids[i][a]
    u_true = v * table.clicks[p_true, r, i] - table.payments[p_true, r, i]
    u_dev = v * table.clicks[p_dev, r, i] - table.payments[p_dev, r, i]
    cex = Counterexample(
        kind="truthfulness", rule=mechanism.name, bids=table.profiles[p_true], realization=table.realization(r),
        rounds=(), agents=(i,), alternative_bids=table.profiles[p_dev], value=v,
        outcomes=(f"utility {format_number(u_true)}", f"utility {format_number(u_dev)}"),
    )
    logger.warning(f"{mechanism.name} is not truthful: agent {i} with value {format_number(v)} gains by bidding "
                   f"{format_number(budget.grids[i][b_idx])}")
    return CheckResult("truthful", False, cex, checked)


def check_normalized(mechanism: Mechanism, k: int, T: int, budget: EnumerationBudget,
                     table: Optional[AllocationTable] = None, threads: int = 1) -> CheckResult:
    """0 <= P_i <= b_i·C_i for every enumerated (b, ρ)."""
    rule = mechanism.rule(k, T)
    table = table or build_allocation_table(rule, budget, mechanism=mechanism, threads=threads)
    bids = np.stack([as_bid_matrix(p)[0] for p in table.profiles])[:, None, :]
    cap = bids * table.clicks
    tol = _tolerance(cap)
    bad = np.asarray((table.payments < -tol) | (table.payments > cap + tol), dtype=bool)
    checked = len(table.profiles) * table.n_realizations
    hit = _first(bad)
    if hit is None:
        return CheckResult("normalized", True, checked=checked)
    p, r, i = hit
    cex = Counterexample(
        kind="normalization", rule=mechanism.name, bids=table.profiles[p], realization=table.realization(r),
        rounds=(), agents=(i,),
        outcomes=(f"payment {format_number(table.payments[p, r, i])}",
                  f"bid x clicks {format_number(cap[p, r, i])}"),
    )
    logger.warning(f"{mechanism.name} is not normalized: agent {i} pays {format_number(table.payments[p, r, i])}")
    return CheckResult("normalized", False, cex, checked)


def replay(cex: Counterexample, mechanism: Mechanism) -> bool:
    """Re-run the stored inputs and report whether the violation still occurs."""
    k, T = cex.realization.k, cex.realization.T
    rule = mechanism.rule(k, T)

    def trace(bids: BidProfile, realization: Realization) -> np.ndarray:
        return _allocations(rule, as_bid_matrix(bids), realization)[0]

    base = trace(cex.bids, cex.realization)
    if cex.kind == "monotonicity":
        (t,), (i,) = cex.rounds, cex.agents
        raised = cex.alternative_bids
        return bool(base[t] == i and raised[i] > cex.bids[i] and trace(raised, cex.realization)[t] != i)
    if cex.kind in ("separation", "weak-separation"):
        t, later = cex.rounds
        flipped = trace(cex.bids, cex.realization.flip(int(base[t]), t))
        other = trace(cex.alternative_bids, cex.realization)
        if flipped[later] == base[later] or other[t] == base[t]:
            return False
        if cex.kind == "separation":
            return True
        i = cex.agents[-1]
        raised_only_i = all(
            (a == b) if j != i else (a > b) for j, (a, b) in enumerate(zip(cex.alternative_bids.bids, cex.bids.bids))
        )
        return raised_only_i and i in (int(base[later]), int(flipped[later]))

    runs = [mechanism.run_once(b, cex.realization) for b in (cex.bids, cex.alternative_bids or cex.bids)]
    (i,) = cex.agents
    if cex.kind == "truthfulness":
        v = cex.value
        u_true = v * runs[0].click_counts[0, i] - runs[0].payments[0, i]
        u_dev = v * runs[1].click_counts[0, i] - runs[1].payments[0, i]
        if isinstance(u_true, Fraction) and isinstance(u_dev, Fraction):
            return u_dev > u_true
        return bool(u_dev > u_true + get_settings().myerson_relative_tol * (1.0 + abs(float(u_true))))
    payment = runs[0].payments[0, i]
    cap = cex.bids[i] * runs[0].click_counts[0, i]
    return bool(payment < 0 or payment > cap)


# ----------------------------- Monte-Carlo checks ----------------------------- #

@dataclass(frozen=True)
class DeviationEstimate:
    realization: int
    agent: int
    value: float
    bid: float
    opponents: Tuple[float, ...]
    gain_of_truth: float
    stderr: float
    flagged: bool


@dataclass
class WeakTruthfulnessReport:
    mechanism: str
    seeds: int
    estimates: List[DeviationEstimate]
    note: str = "Monte-Carlo evidence over the mechanism's random seed, not a proof"

    @property
    def flagged(self) -> List[DeviationEstimate]:
        return [e for e in self.estimates if e.flagged]

    @property
    def passed(self) -> bool:
        return not self.flagged

    def __bool__(self) -> bool:
        return self.passed


def _mean_se(samples: np.ndarray, axis: int = -1) -> Tuple[np.ndarray, np.ndarray]:
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    se = samples.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _is_flagged(mean: np.ndarray, se: np.ndarray, scale: float) -> np.ndarray:
    return mean < -(get_settings().flag_sigmas * se + 1e-12 * scale)


def check_weakly_truthful_mc(
    mechanism: Mechanism,
    k: int,
    T: int,
    grid: Sequence[Number],
    realizations: Sequence[Realization],
    seeds: int,
    seed: int,
    agents: Optional[Sequence[int]] = None,
) -> WeakTruthfulnessReport:
    """
    For each fixed realization, agent, true value v, deviation b and opponent grid bids,
    estimate E_seed[U(v)] − E_seed[U(b)] and flag it when below −3·SE.

    Every bid profile is simulated with the same rule seed, so the compared runs share
    their random draws.
    """
    if seeds < 1 or not realizations:
        raise ConfigurationError("Need at least one seed and one realization")
    for rho in realizations:
        if rho.k != k or rho.T != T:
            raise ConfigurationError(f"Realization shape ({rho.k}, {rho.T}) does not match k={k}, T={T}")
    grid = sorted(float(x) for x in set(grid))
    n_real = len(realizations)
    n_runs = n_real * seeds
    if n_runs > get_settings().max_batch_runs:
        raise BudgetExceededError(f"{n_runs} runs per profile exceed the batch budget",
                                  requested=n_runs, limit=get_settings().max_batch_runs)
    rows = np.repeat(np.arange(n_real), seeds)
    source_bits = np.stack([r.array for r in realizations])
    cache: Dict[Tuple[float, ...], Tuple[np.ndarray, np.ndarray]] = {}

    def outcome(profile: Tuple[float, ...]) -> Tuple[np.ndarray, np.ndarray]:
        if profile not in cache:
            rule = mechanism.rule(k, T)
            batch = mechanism.run(rule, as_bid_matrix(np.asarray(profile, dtype=float), n_runs),
                                  RealizationSource(source_bits, rows=rows),
                                  rng=make_rng(seed, RULE_STREAM), keep_trace=False)
            cache[profile] = (batch.click_counts.astype(float).reshape(n_real, seeds, k),
                              np.asarray(batch.payments, dtype=float).reshape(n_real, seeds, k))
        return cache[profile]

    estimates: List[DeviationEstimate] = []
    for i in (agents if agents is not None else range(k)):
        for others in itertools.product(grid, repeat=k - 1):
            def profile(x: float) -> Tuple[float, ...]:
                return tuple(others[:i]) + (x,) + tuple(others[i:])

            for v in grid:
                c_true, p_true = outcome(profile(v))
                u_true = v * c_true[..., i] - p_true[..., i]
                for b in grid:
                    if b == v:
                        continue
                    c_dev, p_dev = outcome(profile(b))
                    gain = u_true - (v * c_dev[..., i] - p_dev[..., i])
                    mean, se = _mean_se(gain)
                    flags = _is_flagged(mean, se, max(1.0, v * T))
                    for r in range(n_real):
                        estimates.append(DeviationEstimate(
                            realization=r, agent=i, value=v, bid=b, opponents=tuple(others),
                            gain_of_truth=float(mean[r]), stderr=float(se[r]), flagged=bool(flags[r]),
                        ))
    report = WeakTruthfulnessReport(mechanism.name, seeds, estimates)
    logger.info(f"Weak truthfulness of {mechanism.name}: {len(report.flagged)} of {len(estimates)} deviations flagged")
    return report


@dataclass(frozen=True)
class ClickCurvePoint:
    bid: float
    mean_clicks: float
    stderr: float
    flagged: bool


@dataclass
class MonotonicityReport:
    rule: str
    agent: int
    trials: int
    points: List[ClickCurvePoint]
    note: str = "Monte-Carlo evidence over click realizations, not a proof"

    @property
    def flagged(self) -> List[ClickCurvePoint]:
        return [p for p in self.points if p.flagged]

    @property
    def passed(self) -> bool:
        return not self.flagged

    def __bool__(self) -> bool:
        return self.passed


def check_monotone_in_expectation_mc(
    rule: AllocationRule,
    instance: StochasticInstance,
    agent: int,
    grid: Sequence[Number],
    trials: int,
    seed: int,
    threads: int = 1,
) -> MonotonicityReport:
    """
    E[C_agent] along the bid grid, with the other bids from the instance.

    Grid points share click realizations and rule seeds, so consecutive points are
    compared through paired differences; a drop beyond 3·SE of the difference is flagged.
    """
    if not 0 <= agent < instance.k:
        raise ConfigurationError(f"Agent {agent} outside [0, {instance.k})")
    if trials < 2:
        raise ConfigurationError("Need at least two trials")
    grid = sorted(float(x) for x in set(grid))
    curves = []
    for x in grid:
        bids = instance.bids.with_bid(agent, x)
        _, clicks = stochastic_counts(rule, instance, trials, seed, threads, bids=np.asarray(
            [float(b) for b in bids.bids]))
        curves.append(clicks[:, agent].astype(float))
    points = []
    for n, x in enumerate(grid):
        mean, se = _mean_se(curves[n])
        flagged = False
        if n > 0:
            d_mean, d_se = _mean_se(curves[n] - curves[n - 1])
            flagged = bool(_is_flagged(np.asarray(d_mean), np.asarray(d_se), instance.T))
        points.append(ClickCurvePoint(x, float(mean), float(se), flagged))
    report = MonotonicityReport(rule.name, agent, trials, points)
    logger.info(f"Monotonicity in expectation of {rule.name}: {len(report.flagged)} flagged drops")
    return report
