"""
Allocation-rule contract and the batched run engine.

Rules act on a batch of independent runs: select(t) returns the agent shown in
every run at round t, observe(t, agents, clicks) delivers only the clicks of the
agents that were shown. A single run is a batch of one.
"""
import copy
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import get_settings
from core.exceptions import ConfigurationError
from models import BidProfile, ClickAllocation, History, Realization, RunBatch, StochasticInstance
from services.click_streams import RULE_STREAM, ClickSource, RealizationSource, StochasticSource, make_rng

logger = logging.getLogger(__name__)


def first_argmax(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties to the lowest index; works on object arrays."""
    values = np.asarray(values)
    if values.dtype == object:
        best = values.max(axis=1, keepdims=True)
        return np.asarray(values == best, dtype=bool).argmax(axis=1)
    return values.argmax(axis=1)


def as_bid_matrix(bids, n_runs: Optional[int] = None) -> np.ndarray:
    """Normalize a BidProfile, vector or (n, k) array into an (n, k) bid matrix."""
    if isinstance(bids, BidProfile):
        bids = bids.as_array()
    bids = np.asarray(bids)
    if bids.ndim == 1:
        bids = bids[None, :]
    if n_runs is not None and bids.shape[0] == 1 and n_runs != 1:
        bids = np.repeat(bids, n_runs, axis=0)
    return bids


class AllocationRule(ABC):
    """Online allocation rule over a batch of runs."""

    name = "rule"
    deterministic = True
    # Breakpoints of x -> C_i(x, b_-i) lie on ratios b_j * m / n with m, n <= T
    rational_breakpoints = False

    def __init__(self, k: int, T: int):
        if k < 1 or T < 1:
            raise ConfigurationError(f"{self.name}: need k >= 1 and T >= 1, got k={k}, T={T}")
        self.k = k
        self.T = T
        self.bids: Optional[np.ndarray] = None
        self.n_runs = 0
        self.rng: Optional[np.random.Generator] = None

    def reset(self, bids: np.ndarray, rng: Optional[np.random.Generator] = None):
        """Start a fresh batch; bids is (n_runs, k)."""
        if bids.shape[1] != self.k:
            raise ConfigurationError(f"{self.name}: expected {self.k} bids, got {bids.shape[1]}")
        if not self.deterministic and rng is None:
            raise ConfigurationError(f"{self.name} is randomized and needs a random generator")
        self.bids = bids
        self.n_runs = bids.shape[0]
        self.rng = rng
        self._runs = np.arange(self.n_runs)

    @abstractmethod
    def select(self, t: int) -> np.ndarray:
        """Agents shown at round t, shape (n_runs,)."""

    def observe(self, t: int, agents: np.ndarray, clicks: np.ndarray):
        """Feedback of round t for the shown agents."""

    def spawn(self) -> "AllocationRule":
        return copy.deepcopy(self)

    def next(self, bids: BidProfile, history: History, t: int, rng: Optional[np.random.Generator] = None) -> int:
        """Decision at round t after the observed prefix history[:t], by fresh replay."""
        if len(history) < t:
            raise ConfigurationError(f"History has {len(history)} rounds, need a prefix of {t}")
        rule = self.spawn()
        rule.reset(as_bid_matrix(bids), rng)
        for s, record in enumerate(history.rounds[:t]):
            rule.select(s)
            rule.observe(s, np.array([record.agent]), np.array([record.click], dtype=np.int8))
        return int(rule.select(t)[0])

    def describe(self) -> dict:
        return {"rule": self.name, "k": self.k, "T": self.T}


class ConstantRule(AllocationRule):
    """Always shows the same agent."""

    name = "constant"
    rational_breakpoints = True

    def __init__(self, k: int, T: int, agent: int = 0):
        super().__init__(k, T)
        if not 0 <= agent < k:
            raise ConfigurationError(f"constant: agent {agent} outside [0, {k})")
        self.agent = agent

    def select(self, t: int) -> np.ndarray:
        return np.full(self.n_runs, self.agent, dtype=np.int64)


class ThresholdRule(AllocationRule):
    """Shows agent 0 iff b_0 >= b_1, in every round; agent 1 otherwise."""

    name = "threshold"
    rational_breakpoints = True

    def select(self, t: int) -> np.ndarray:
        return np.where(np.asarray(self.bids[:, 0] >= self.bids[:, 1], dtype=bool), 0, 1)


class AntiThresholdRule(AllocationRule):
    """Shows agent 0 iff b_0 < b_1: anti-monotone on purpose."""

    name = "anti-threshold"
    rational_breakpoints = True

    def select(self, t: int) -> np.ndarray:
        return np.where(np.asarray(self.bids[:, 0] < self.bids[:, 1], dtype=bool), 0, 1)


class TieBreakRule(AllocationRule):
    """
    Two-agent rule whose first round is a threshold on bids and whose later rounds
    break bid ties with the first-round click of agent 0.
    """

    name = "tie-break"
    rational_breakpoints = True

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.first_click = np.zeros(self.n_runs, dtype=np.int8)

    def select(self, t: int) -> np.ndarray:
        b0, b1 = self.bids[:, 0], self.bids[:, 1]
        if t == 0:
            return np.where(np.asarray(b0 >= b1, dtype=bool), 0, 1)
        wins = np.asarray(b0 > b1, dtype=bool) | (np.asarray(b0 == b1, dtype=bool) & (self.first_click == 1))
        return np.where(wins, 0, 1)

    def observe(self, t, agents, clicks):
        if t == 0:
            self.first_click = np.where(agents == 0, clicks, 0).astype(np.int8)


class UniformRandomRule(AllocationRule):
    """Shows a uniformly random agent every round."""

    name = "uniform"
    deterministic = False

    def select(self, t: int) -> np.ndarray:
        return self.rng.integers(self.k, size=self.n_runs)


def simulate(
    rule: AllocationRule,
    bids,
    source: ClickSource,
    rng: Optional[np.random.Generator] = None,
    keep_trace: bool = True,
) -> RunBatch:
    """Run `rule` on every run of `source`; the rule only ever sees the shown agent's bit."""
    if source.k != rule.k or source.T != rule.T:
        raise ConfigurationError(
            f"Dimension mismatch: rule has k={rule.k}, T={rule.T}; source has k={source.k}, T={source.T}"
        )
    bids = as_bid_matrix(bids, source.n_runs)
    if bids.shape != (source.n_runs, rule.k):
        raise ConfigurationError(f"Bid matrix shape {bids.shape} does not match {source.n_runs} runs of k={rule.k}")
    n = source.n_runs
    rule.reset(bids, rng)
    runs = np.arange(n)
    impressions = np.zeros((n, rule.k), dtype=np.int64)
    click_counts = np.zeros((n, rule.k), dtype=np.int64)
    agents_trace = np.empty((n, rule.T), dtype=np.int64) if keep_trace else None
    clicks_trace = np.empty((n, rule.T), dtype=np.int8) if keep_trace else None

    for t in range(rule.T):
        agents = np.asarray(rule.select(t), dtype=np.int64)
        clicks = source.column(t)[runs, agents]
        rule.observe(t, agents, clicks)
        impressions[runs, agents] += 1
        click_counts[runs, agents] += clicks
        if keep_trace:
            agents_trace[:, t] = agents
            clicks_trace[:, t] = clicks

    return RunBatch(
        bids=bids,
        impressions=impressions,
        click_counts=click_counts,
        agents=agents_trace,
        clicks=clicks_trace,
    )


def _check_dimensions(rule: AllocationRule, bids: BidProfile, realization: Realization):
    if bids.k != rule.k or realization.k != rule.k or realization.T != rule.T:
        raise ConfigurationError(
            f"Dimension mismatch: rule (k={rule.k}, T={rule.T}), bids k={bids.k}, "
            f"realization (k={realization.k}, T={realization.T})"
        )


def run_allocation(
    rule: AllocationRule,
    bids: BidProfile,
    realization: Realization,
    rng: Optional[np.random.Generator] = None,
) -> History:
    """History of one run of `rule` on a fixed realization."""
    _check_dimensions(rule, bids, realization)
    batch = simulate(rule.spawn(), bids, RealizationSource(realization.array), rng)
    return batch.history(0)


def click_allocation(history: History, k: int) -> ClickAllocation:
    clicks = [0] * k
    impressions = [0] * k
    for record in history.rounds:
        if record.agent >= k:
            raise ConfigurationError(f"History shows agent {record.agent} but k={k}")
        impressions[record.agent] += 1
        clicks[record.agent] += record.click
    return ClickAllocation(tuple(clicks), tuple(impressions))


@dataclass(frozen=True)
class RegretEstimate:
    mean: float
    stderr: float
    trials: int

    def __iter__(self):
        return iter((self.mean, self.stderr))


def _mean_and_stderr(samples: np.ndarray) -> RegretEstimate:
    n = len(samples)
    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return RegretEstimate(mean, stderr, n)


def trial_batches(trials: int, batch_size: Optional[int] = None) -> List[np.ndarray]:
    """Fixed partition of trial ids; independent of the worker count."""
    batch_size = batch_size or get_settings().trial_batch_size
    return [np.arange(s, min(s + batch_size, trials)) for s in range(0, trials, batch_size)]


def stochastic_counts(
    rule: AllocationRule,
    inst: StochasticInstance,
    trials: int,
    seed: int,
    threads: int = 1,
    bids=None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Impression and click counts, each (trials, k), of `rule` on i.i.d. realizations of `inst`.

    Trials are cut into fixed-size batches and concatenated in order, so the result
    does not depend on `threads`. `bids` overrides the instance bids.
    """
    batches = trial_batches(trials)
    bids = inst.bids if bids is None else bids

    def run_batch(index: int) -> Tuple[np.ndarray, np.ndarray]:
        ids = batches[index]
        source = StochasticSource(inst.ctrs, inst.T, seed, ids)
        rng = None if rule.deterministic else make_rng(seed, RULE_STREAM, int(ids[0]))
        batch = simulate(rule.spawn(), bids, source, rng, keep_trace=False)
        return batch.impressions, batch.click_counts

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_batch, range(len(batches))))
    else:
        parts = [run_batch(i) for i in range(len(batches))]
    impressions = np.concatenate([p[0] for p in parts], axis=0)
    clicks = np.concatenate([p[1] for p in parts], axis=0)
    return impressions, clicks


def stochastic_impressions(
    rule: AllocationRule,
    inst: StochasticInstance,
    trials: int,
    seed: int,
    threads: int = 1,
) -> np.ndarray:
    """Impression counts (trials, k) of `rule` on i.i.d. realizations of `inst`."""
    return stochastic_counts(rule, inst, trials, seed, threads)[0]


def regret_stochastic(
    rule: AllocationRule,
    inst: StochasticInstance,
    trials: int,
    seed: int,
    threads: int = 1,
) -> RegretEstimate:
    """
    Monte-Carlo estimate of T·max_i μ_i v_i − E[Σ_t μ_{x_t} v_{x_t}] with its standard error.

    Uses the expected per-round welfare of the shown agent rather than the realized
    click, so only impression counts are needed.
    """
    if trials < 1:
        raise ConfigurationError("regret_stochastic needs at least one trial")
    if rule.k != inst.k or rule.T != inst.T:
        raise ConfigurationError(f"Rule (k={rule.k}, T={rule.T}) does not match instance (k={inst.k}, T={inst.T})")
    if inst.k == 1:
        return RegretEstimate(0.0, 0.0, trials)
    rates = inst.welfare_rates
    impressions = stochastic_impressions(rule, inst, trials, seed, threads)
    regrets = inst.T * rates.max() - impressions @ rates
    estimate = _mean_and_stderr(regrets)
    logger.debug(f"regret {rule.name} on {inst.label or 'instance'} T={inst.T}: {estimate.mean:.4f} ± {estimate.stderr:.4f}")
    return estimate


def regret_adversarial(
    rule: AllocationRule,
    bids: BidProfile,
    values: Sequence[float],
    realization: Realization,
    seeds: int = 1,
    seed: int = 0,
) -> float:
    """Best fixed agent in hindsight minus realized welfare, averaged over the rule's random streams."""
    _check_dimensions(rule, bids, realization)
    if len(values) != rule.k:
        raise ConfigurationError(f"Expected {rule.k} values, got {len(values)}")
    v = np.asarray([float(x) for x in values])
    n_runs = 1 if rule.deterministic else max(1, seeds)
    rng = None if rule.deterministic else make_rng(seed, RULE_STREAM)
    batch = simulate(rule.spawn(), bids, RealizationSource.repeated(realization, n_runs), rng, keep_trace=False)
    best = float((v * realization.array.sum(axis=1)).max())
    realized = batch.click_counts @ v
    return float(np.mean(best - realized))
