"""
Deterministic allocation rules (naive explore-then-exploit, UCB1, elimination),
their payment rules, and the name registry used by the command line.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigurationError
from models import BidProfile, History, MechanismOutcome, Number, RunBatch
from services.allocation_service import (
    AllocationRule,
    AntiThresholdRule,
    ConstantRule,
    ThresholdRule,
    TieBreakRule,
    UniformRandomRule,
    as_bid_matrix,
    first_argmax,
    simulate,
)
from services.click_streams import ClickSource, RealizationSource

logger = logging.getLogger(__name__)


def _zeros_like_bids(bids: np.ndarray) -> np.ndarray:
    if bids.dtype == object:
        return np.full(bids.shape, Fraction(0), dtype=object)
    return np.zeros(bids.shape, dtype=float)


# ----------------------------- Naive explore-then-exploit ----------------------------- #

def naive_exploration_length(k: int, T: int) -> int:
    """T0 = ceil(k^{-2/3} T^{2/3} (ln T)^{1/3}), at least 1 and at most floor(T/k)."""
    raw = k ** (-2 / 3) * T ** (2 / 3) * math.log(T) ** (1 / 3)
    return min(max(1, math.ceil(raw)), T // k)


class NaiveRule(AllocationRule):
    """Round-robin for k·T0 rounds, then the agent maximizing clicks × bid for the rest."""

    name = "naive"
    rational_breakpoints = True

    def __init__(self, k: int, T: int, t0: Optional[int] = None):
        if T < k:
            raise ConfigurationError(f"naive: need T >= k, got T={T}, k={k}")
        super().__init__(k, T)
        self.t0 = naive_exploration_length(k, T) if t0 is None else int(t0)
        if self.t0 < 1 or k * self.t0 > T:
            raise ConfigurationError(f"naive: T0={self.t0} must satisfy 1 <= T0 and k*T0 <= T={T}")
        self.exploration_rounds = k * self.t0

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.explore_clicks = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.winner: Optional[np.ndarray] = None

    def select(self, t: int) -> np.ndarray:
        if t < self.exploration_rounds:
            return np.full(self.n_runs, t % self.k, dtype=np.int64)
        return self.winner

    def observe(self, t, agents, clicks):
        if t < self.exploration_rounds:
            self.explore_clicks[self._runs, agents] += clicks
            if t == self.exploration_rounds - 1:
                self.winner = first_argmax(self.explore_clicks * self.bids)

    def describe(self) -> dict:
        return {**super().describe(), "t0": self.t0}


def naive_prices(explore_clicks: np.ndarray, bids: np.ndarray, winner: np.ndarray) -> np.ndarray:
    """max_{j≠i*} c_j b_j / c_{i*} per run; 0 when c_{i*} = 0."""
    runs = np.arange(len(winner))
    products = explore_clicks * bids
    others = products.copy()
    others[runs, winner] = 0
    runner_up = others.max(axis=1)
    c_win = explore_clicks[runs, winner]
    safe = np.where(c_win > 0, c_win, 1)
    prices = runner_up / safe
    zero = Fraction(0) if bids.dtype == object else 0.0
    return np.where(c_win > 0, prices, zero)


def naive_batch_payments(rule: NaiveRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    payments = _zeros_like_bids(rule.bids)
    runs = np.arange(rule.n_runs)
    winner = rule.winner
    prices = naive_prices(rule.explore_clicks, rule.bids, winner)
    exploit_clicks = batch.click_counts[runs, winner] - rule.explore_clicks[runs, winner]
    payments[runs, winner] = prices * exploit_clicks
    return payments


def naive_payments(history: History, bids: BidProfile, t0: Optional[int] = None) -> Tuple[Number, ...]:
    """Exploration is free; the winner pays the threshold price per exploitation click."""
    k, T = bids.k, len(history)
    rule = NaiveRule(k, T, t0)
    agents = np.asarray(history.agents)
    clicks = np.asarray(history.clicks)
    if np.any(agents >= k):
        raise ConfigurationError(f"History shows an agent outside [0, {k})")
    explore = rule.exploration_rounds
    if np.any(agents[:explore] != np.arange(explore) % k):
        raise ConfigurationError("History exploration rounds are not the naive round-robin")
    bid_row = bids.as_array()[None, :]
    explore_clicks = np.zeros((1, k), dtype=np.int64)
    np.add.at(explore_clicks[0], agents[:explore], clicks[:explore])
    winner = first_argmax(explore_clicks * bid_row)
    if np.any(agents[explore:] != winner[0]):
        raise ConfigurationError("History exploitation rounds do not match the winner implied by these bids")
    price = naive_prices(explore_clicks, bid_row, winner)[0]
    payments = list(_zeros_like_bids(bid_row)[0])
    payments[int(winner[0])] = price * int(clicks[explore:].sum())
    return tuple(payments)


# ----------------------------- UCB1 ----------------------------- #

def ucb_values(clicks: np.ndarray, impressions: np.ndarray, t: int) -> np.ndarray:
    """μ̄ + sqrt(8 ln t / n), with +inf for agents never shown (0/0 = 0, 1/0 = ∞)."""
    clicks = np.asarray(clicks, dtype=float)
    impressions = np.asarray(impressions, dtype=float)
    seen = impressions > 0
    safe = np.where(seen, impressions, 1.0)
    radius = np.sqrt(8.0 * math.log(max(t, 1)) / safe)
    return np.where(seen, clicks / safe + radius, np.inf)


def ucb1_index(clicks: int, impressions: int, t: int, bid: float) -> float:
    return float(ucb_values(np.array([clicks]), np.array([impressions]), t)[0] * bid)


def ucb1_prices(ucb: np.ndarray, bids: np.ndarray, winners: np.ndarray) -> np.ndarray:
    """
    Per-click price of the round winner in each run.

    Initialized winner: max_{j≠w} U_j b_j / U_w. Uninitialized winner: highest bid among
    the other uninitialized agents, 0 if none. Always clipped to [0, b_w].
    """
    n, k = ucb.shape
    if k == 1:
        return np.zeros(n)
    runs = np.arange(n)
    uninit = ~np.isfinite(ucb)
    products = np.where(uninit, np.inf, ucb * bids)
    products[runs, winners] = -np.inf
    runner_up = products.max(axis=1)
    u_win = ucb[runs, winners]
    b_win = bids[runs, winners]
    ratio_ok = np.isfinite(u_win) & (u_win > 0) & np.isfinite(runner_up)
    ratio = np.where(ratio_ok, np.where(ratio_ok, runner_up, 0.0) / np.where(ratio_ok, u_win, 1.0), 0.0)
    other_uninit = uninit.copy()
    other_uninit[runs, winners] = False
    init_price = np.where(other_uninit, bids, 0.0).max(axis=1)
    prices = np.where(np.isfinite(u_win), ratio, init_price)
    return np.clip(prices, 0.0, b_win)


@dataclass
class Ucb1State:
    """Per-agent impression and click counts after t elapsed rounds."""
    impressions: Tuple[int, ...]
    clicks: Tuple[int, ...]
    t: int

    def ucb(self) -> np.ndarray:
        return ucb_values(np.asarray(self.clicks), np.asarray(self.impressions), self.t)


def ucb1_price_from_indices(ucb: Sequence[float], bids: Sequence[float], winner: int) -> float:
    ucb_row = np.asarray(ucb, dtype=float)[None, :]
    bid_row = np.asarray([float(b) for b in bids])[None, :]
    return float(ucb1_prices(ucb_row, bid_row, np.array([winner]))[0])


def ucb1_round_price(state: Ucb1State, bids, winner: int) -> float:
    if isinstance(bids, BidProfile):
        bids = bids.bids
    return ucb1_price_from_indices(state.ucb(), bids, winner)


class Ucb1Rule(AllocationRule):
    """
    argmax_i (μ̄_i + sqrt(8 ln t / n_i))·b_i after t elapsed rounds.

    Agents never shown have an infinite index; among them the highest bid goes
    first, then the lowest index. Round 0 therefore shows the highest bidder, which
    is agent 0 only when it bids the most. The per-round price of the winner is accumulated
    in `charges` on every click.
    """

    name = "ucb1"

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.fbids = np.asarray(bids, dtype=float)
        self.impressions = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.clicks = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.charges = np.zeros((self.n_runs, self.k), dtype=float)
        self._price = np.zeros(self.n_runs)

    def select(self, t: int) -> np.ndarray:
        ucb = ucb_values(self.clicks, self.impressions, t)
        uninit = self.impressions == 0
        pending = uninit.any(axis=1)
        first_pass = first_argmax(np.where(uninit, self.fbids, -np.inf))
        by_index = first_argmax(np.where(uninit, -np.inf, ucb * self.fbids))
        agents = np.where(pending, first_pass, by_index)
        self._price = ucb1_prices(ucb, self.fbids, agents)
        return agents

    def observe(self, t, agents, clicks):
        self.impressions[self._runs, agents] += 1
        self.clicks[self._runs, agents] += clicks
        self.charges[self._runs, agents] += self._price * clicks


# ----------------------------- Elimination ----------------------------- #

class EliminationRule(AllocationRule):
    """
    Round-robin over active agents; after each pass, deactivate every agent whose
    sample product (click rate × bid) is more than the threshold below the best
    active one.

    r0 = sqrt(8 ln T / T)·v_max. With schedule "fixed" (default) the threshold is r0 itself;
    with "confidence" it is r0·sqrt(T / passes) = v_max·sqrt(8 ln T / passes).
    """

    name = "elimination"
    schedules = ("fixed", "confidence")

    def __init__(self, k: int, T: int, v_max: float = 1.0, schedule: str = "fixed"):
        if T < k:
            raise ConfigurationError(f"elimination: need T >= k, got T={T}, k={k}")
        super().__init__(k, T)
        if schedule not in self.schedules:
            raise ConfigurationError(f"elimination: schedule must be one of {self.schedules}")
        self.v_max = float(v_max)
        self.schedule = schedule
        self.r0 = math.sqrt(8.0 * math.log(T) / T) * self.v_max

    def threshold(self, passes: np.ndarray) -> np.ndarray:
        passes = np.maximum(np.asarray(passes, dtype=float), 1.0)
        if self.schedule == "fixed":
            return np.full(passes.shape, self.r0)
        return self.r0 * np.sqrt(self.T / passes)

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.fbids = np.asarray(bids, dtype=float)
        self.active = np.ones((self.n_runs, self.k), dtype=bool)
        self.samples = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.sample_clicks = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.passes = np.zeros(self.n_runs, dtype=np.int64)
        self._order = np.tile(np.arange(self.k), (self.n_runs, 1))
        self._pass_len = np.full(self.n_runs, self.k)
        self._pos = np.zeros(self.n_runs, dtype=np.int64)

    def select(self, t: int) -> np.ndarray:
        return self._order[self._runs, self._pos]

    def observe(self, t, agents, clicks):
        self.samples[self._runs, agents] += 1
        self.sample_clicks[self._runs, agents] += clicks
        self._pos += 1
        done = self._pos >= self._pass_len
        if done.any():
            self._end_pass(np.nonzero(done)[0])

    def _end_pass(self, rows: np.ndarray):
        self.passes[rows] += 1
        samples = self.samples[rows]
        rates = self.sample_clicks[rows] / np.maximum(samples, 1)
        products = rates * self.fbids[rows]
        active = self.active[rows]
        best = np.where(active, products, -np.inf).max(axis=1)
        gap = best[:, None] - products
        drop = active & (gap > self.threshold(self.passes[rows])[:, None])
        active = active & ~drop
        self.active[rows] = active
        self._order[rows] = np.argsort(~active, axis=1, kind="stable")
        self._pass_len[rows] = active.sum(axis=1)
        self._pos[rows] = 0

    def describe(self) -> dict:
        return {**super().describe(), "v_max": self.v_max, "schedule": self.schedule, "r0": self.r0}


# ----------------------------- Mechanisms ----------------------------- #

PaymentFn = Callable[[AllocationRule, RunBatch, ClickSource], np.ndarray]


def zero_payments(rule: AllocationRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    return _zeros_like_bids(rule.bids)


def first_price_payments(rule: AllocationRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    """Bid per click."""
    return rule.bids * batch.click_counts


def per_impression_payments(rule: AllocationRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    """Bid per impression, clicked or not."""
    return rule.bids * batch.impressions


def accumulated_charges(rule: AllocationRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    """Per-click prices the rule charged while running."""
    if not hasattr(rule, "charges"):
        raise ConfigurationError(f"{rule.name} does not charge per click")
    return rule.charges.copy()


def myerson_batch_payments(rule: AllocationRule, batch: RunBatch, source: ClickSource) -> np.ndarray:
    """Unrestricted Myerson payment of every agent in every run, by counterfactual re-simulation."""
    from services.myerson_service import myerson_payment, myerson_payments_batch

    payments = _zeros_like_bids(batch.bids)
    first = batch.bids[0]
    if np.all(batch.bids == first[None, :]):
        profile = BidProfile(tuple(first))
        for agent in range(rule.k):
            payments[:, agent] = myerson_payments_batch(rule, profile, source, agent)
        return payments
    for run in range(batch.n_runs):
        profile = BidProfile(tuple(batch.bids[run]))
        realization = source.realization(run)
        for agent in range(rule.k):
            payments[run, agent] = myerson_payment(rule, profile, realization, agent)
    return payments


@dataclass(frozen=True)
class Mechanism:
    """An allocation rule paired with a payment rule."""
    name: str
    rule_factory: Callable[[int, int], AllocationRule]
    payment_fn: PaymentFn
    options: Dict[str, object] = field(default_factory=dict)

    def rule(self, k: int, T: int) -> AllocationRule:
        return self.rule_factory(k, T)

    def run(
        self,
        rule: AllocationRule,
        bids,
        source: ClickSource,
        rng: Optional[np.random.Generator] = None,
        keep_trace: bool = True,
    ) -> RunBatch:
        batch = simulate(rule, bids, source, rng, keep_trace)
        batch.payments = self.payment_fn(rule, batch, source)
        return batch

    def run_once(self, bids: BidProfile, realization, rng=None) -> RunBatch:
        rule = self.rule(bids.k, realization.T)
        return self.run(rule, as_bid_matrix(bids), RealizationSource(realization.array), rng)

    def play(self, bids: BidProfile, realization, values: Optional[Sequence[Number]] = None,
             rng=None) -> MechanismOutcome:
        """One run on a fixed realization; values default to the bids."""
        batch = self.run_once(bids, realization, rng)
        values = tuple(values) if values is not None else bids.bids
        if len(values) != bids.k:
            raise ConfigurationError(f"Expected {bids.k} values, got {len(values)}")
        payments = tuple(batch.payments[0].tolist())
        return MechanismOutcome(batch.history(0), batch.allocation(0), payments, values)


RULE_NAMES = ("naive", "ucb1", "elimination", "psim", "constant", "uniform")


def get_rule(name: str, k: int, T: int, v_max: float = 1.0, **options) -> AllocationRule:
    """Instantiate a registered allocation rule by name."""
    from services.psim_service import PsimRule

    if name == "naive":
        return NaiveRule(k, T, t0=options.get("t0"))
    if name == "ucb1":
        return Ucb1Rule(k, T)
    if name == "elimination":
        return EliminationRule(k, T, v_max=v_max, schedule=options.get("schedule") or "fixed")
    if name == "psim":
        return PsimRule(k, T, v_max=v_max)
    if name == "constant":
        return ConstantRule(k, T, agent=options.get("agent", 0))
    if name == "uniform":
        return UniformRandomRule(k, T)
    raise ConfigurationError(f"Unknown rule {name!r}; valid rules: {', '.join(RULE_NAMES)}")


def check_rule_name(name: str) -> str:
    if name not in RULE_NAMES:
        raise ConfigurationError(f"Unknown rule {name!r}; valid rules: {', '.join(RULE_NAMES)}")
    return name


DEFAULT_PAYMENTS: Dict[str, PaymentFn] = {
    "naive": naive_batch_payments,
    "ucb1": accumulated_charges,
    "elimination": myerson_batch_payments,
    "psim": accumulated_charges,
    "constant": zero_payments,
    "uniform": zero_payments,
}

PAYMENT_RULES: Dict[str, PaymentFn] = {
    "zero": zero_payments,
    "first-price": first_price_payments,
    "per-impression": per_impression_payments,
    "myerson": myerson_batch_payments,
    "charges": accumulated_charges,
}


def get_payment(name: Optional[str]) -> Optional[PaymentFn]:
    """Payment rule by name; None or "default" keeps the rule's own."""
    if name in (None, "default"):
        return None
    if name not in PAYMENT_RULES:
        raise ConfigurationError(f"Unknown payment rule {name!r}; valid: default, {', '.join(PAYMENT_RULES)}")
    return PAYMENT_RULES[name]


def get_mechanism(name: str, v_max: float = 1.0, payment: Optional[PaymentFn] = None, **options) -> Mechanism:
    """Registered rule with its own payment rule (or an explicit override)."""
    check_rule_name(name)
    return Mechanism(
        name=name,
        rule_factory=lambda k, T: get_rule(name, k, T, v_max=v_max, **options),
        payment_fn=payment or DEFAULT_PAYMENTS[name],
        options={"v_max": v_max, **options},
    )


FIXTURE_RULES = {
    "threshold": ThresholdRule,
    "anti-threshold": AntiThresholdRule,
    "tie-break": TieBreakRule,
}


def fixture_mechanism(name: str, payment: PaymentFn = zero_payments) -> Mechanism:
    """Small two-agent rules used to exercise the checkers."""
    if name not in FIXTURE_RULES:
        raise ConfigurationError(f"Unknown fixture rule {name!r}; valid: {', '.join(FIXTURE_RULES)}")
    return Mechanism(name=name, rule_factory=FIXTURE_RULES[name], payment_fn=payment)
