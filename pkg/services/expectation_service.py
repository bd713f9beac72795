"""
Expected clicks and payments as polynomials in the CTRs, and the γ-mixture
mechanism whose monomial payments are truthful in expectation.

A deterministic rule's history is fixed by its click sequence y ∈ {0,1}^T: the
agent at round t depends only on y_<t. Running the rule on the realization in
which every agent's bit at t equals y_t therefore yields every consistent
history exactly once.

Monomial payments are not ex-post normalized; single realizations can carry
large positive or negative charges.
"""
import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config.settings import get_settings
from core.exceptions import BudgetExceededError, ConfigurationError
from models import BidProfile, History, Number, StochasticInstance
from services.allocation_service import AllocationRule, RegretEstimate, regret_stochastic, simulate, trial_batches
from services.click_streams import RULE_STREAM, EnumeratedSource, StochasticSource, make_rng
from services.myerson_service import bid_matrix_with, exact_candidates, step_segments, use_exact_mode
from services.polynomial import CtrPolynomial

logger = logging.getLogger(__name__)

BRANCH_TARGET = "target"
BRANCH_EXPLORE = "explore"


# ----------------------------- Consistent histories ----------------------------- #

def _check_budget(k: int, T: int):
    settings = get_settings()
    if k * T > settings.max_polynomial_kt:
        raise BudgetExceededError(
            f"Symbolic expectations need k*T <= {settings.max_polynomial_kt}, got {k * T}",
            requested=k * T, limit=settings.max_polynomial_kt,
        )
    if 2 ** T > settings.max_history_enumeration:
        raise BudgetExceededError(
            f"2^T = {2 ** T} consistent histories exceed {settings.max_history_enumeration}",
            requested=2 ** T, limit=settings.max_history_enumeration,
        )


def _require_deterministic(rule: AllocationRule):
    if not rule.deterministic:
        raise ConfigurationError(f"Polynomial expectations need a deterministic rule; {rule.name} is randomized")


def click_sequences(T: int) -> np.ndarray:
    """All y ∈ {0,1}^T, shape (2^T, T); row n holds the bits of n, round 0 lowest."""
    n = np.arange(2 ** T, dtype=np.int64)
    return ((n[:, None] >> np.arange(T)) & 1).astype(np.int8)


def _broadcast_indices(k: int, T: int) -> np.ndarray:
    """Realization index giving every agent the click sequence y."""
    spread = sum(1 << (j * T) for j in range(k))
    return np.arange(2 ** T, dtype=np.int64) * spread


def history_tables(rule: AllocationRule, bid_rows: np.ndarray) -> np.ndarray:
    """Agent shown at every round of every click sequence, per bid row: (m, 2^T, T)."""
    k, T = rule.k, rule.T
    n_seq = 2 ** T
    m = bid_rows.shape[0]
    source = EnumeratedSource(k, T, np.tile(_broadcast_indices(k, T), m))
    batch = simulate(rule.spawn(), np.repeat(bid_rows, n_seq, axis=0), source)
    return batch.agents.reshape(m, n_seq, T)


def _click_groups(agents: np.ndarray, sequences: np.ndarray, k: int) -> Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], int]:
    """Count of histories per (clicks per agent, misses per agent)."""
    shown = agents[:, :, None] == np.arange(k)
    hits = (shown & (sequences[:, :, None] == 1)).sum(axis=1)
    misses = (shown & (sequences[:, :, None] == 0)).sum(axis=1)
    groups: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], int] = {}
    for a, b in zip(map(tuple, hits.tolist()), map(tuple, misses.tolist())):
        groups[(a, b)] = groups.get((a, b), 0) + 1
    return groups


def _clicks_polynomials(agents: np.ndarray, sequences: np.ndarray, k: int) -> List[CtrPolynomial]:
    polys = [CtrPolynomial.zero(k) for _ in range(k)]
    for (a, b), count in _click_groups(agents, sequences, k).items():
        product = CtrPolynomial.click_product(a, b)
        for i in range(k):
            if a[i]:
                polys[i] = polys[i] + count * a[i] * product
    return polys


def _as_row(bids: BidProfile, exact: bool) -> np.ndarray:
    if exact:
        return np.array([[Fraction(b) for b in bids.bids]], dtype=object)
    return np.array([[float(b) for b in bids.bids]])


# ----------------------------- Polynomials ----------------------------- #

def history_probability_polynomial(rule: AllocationRule, bids: BidProfile, history: History) -> CtrPolynomial:
    """P[h] = Π_t μ_{x_t}^{y_t}(1 − μ_{x_t})^{1−y_t}, or 0 when the rule would not produce h."""
    _require_deterministic(rule)
    k, T = rule.k, rule.T
    _check_budget(k, T)
    if len(history) != T or bids.k != k:
        raise ConfigurationError(f"History of length {len(history)} and {bids.k} bids do not match k={k}, T={T}")
    agents = np.asarray(history.agents)
    clicks = np.asarray(history.clicks)
    if np.any(agents >= k):
        return CtrPolynomial.zero(k)
    index = int(sum(int(y) << t for t, y in enumerate(clicks)))
    table = history_tables(rule, _as_row(bids, use_exact_mode(rule, bids)))[0]
    if np.any(table[index] != agents):
        return CtrPolynomial.zero(k)
    hits = [int(((agents == j) & (clicks == 1)).sum()) for j in range(k)]
    misses = [int(((agents == j) & (clicks == 0)).sum()) for j in range(k)]
    return CtrPolynomial.click_product(hits, misses)


def history_probability_total(rule: AllocationRule, bids: BidProfile) -> CtrPolynomial:
    """Σ over consistent histories of P[h]; identically 1 for any deterministic rule."""
    _require_deterministic(rule)
    _check_budget(rule.k, rule.T)
    agents = history_tables(rule, _as_row(bids, use_exact_mode(rule, bids)))[0]
    total = CtrPolynomial.zero(rule.k)
    for (a, b), count in _click_groups(agents, click_sequences(rule.T), rule.k).items():
        total = total + count * CtrPolynomial.click_product(a, b)
    return total


def expected_clicks_polynomial(rule: AllocationRule, bids: BidProfile, agent: int) -> CtrPolynomial:
    """C_i = Σ_h P[h]·#clicks_i(h)."""
    _require_deterministic(rule)
    _check_budget(rule.k, rule.T)
    if not 0 <= agent < rule.k:
        raise ConfigurationError(f"Agent {agent} outside [0, {rule.k})")
    agents = history_tables(rule, _as_row(bids, use_exact_mode(rule, bids)))[0]
    return _clicks_polynomials(agents, click_sequences(rule.T), rule.k)[agent]


def myerson_expected_payment_polynomial(rule: AllocationRule, bids: BidProfile, agent: int,
                                        gamma: Number) -> CtrPolynomial:
    """
    γ·[b_i·C_i(b_i) − ∫₀^{b_i} C_i(x) dx], coefficient by coefficient.

    C_i(x) only changes where the history table changes, so the integral is a
    sum over the table's constant pieces.
    """
    _require_deterministic(rule)
    k, T = rule.k, rule.T
    _check_budget(k, T)
    if not 0 <= agent < k:
        raise ConfigurationError(f"Agent {agent} outside [0, {k})")
    exact = use_exact_mode(rule, bids)
    sequences = click_sequences(T)
    cache: Dict[bytes, CtrPolynomial] = {}

    def evaluate(xs):
        tables = history_tables(rule, bid_matrix_with(bids, agent, list(xs), exact))
        return tables.reshape(len(tables), -1)

    def clicks_for(signature: np.ndarray) -> CtrPolynomial:
        key = signature.astype(np.int8).tobytes()
        if key not in cache:
            cache[key] = _clicks_polynomials(signature.reshape(2 ** T, T), sequences, k)[agent]
        return cache[key]

    b_i = Fraction(bids[agent]) if exact else float(bids[agent])
    if exact:
        segments, signatures = step_segments(evaluate, b_i, candidates=exact_candidates(bids, agent, T))
        weight = Fraction(gamma) if not isinstance(gamma, Fraction) else gamma
    else:
        segments, signatures = step_segments(evaluate, b_i, max_breakpoints=get_settings().max_history_enumeration)
        weight = float(gamma)

    integral = CtrPolynomial.zero(k)
    for segment, signature in zip(segments, signatures):
        integral = integral + segment.width * clicks_for(signature)
    at_bid = clicks_for(evaluate([b_i])[0])
    payment = weight * (b_i * at_bid - integral)
    if not exact:
        tol = get_settings().myerson_relative_tol * max(1.0, abs(b_i) * T)
        payment = CtrPolynomial(k, {key: v for key, v in payment.cs.items() if abs(v) > tol})
    return payment


# ----------------------------- Relevant histories ----------------------------- #

def relevant_prefix(exponent: Sequence[int]) -> List[int]:
    """Agent 0 α_0 times, then agent 1 α_1 times, ..., every one of them clicked."""
    return [j for j, a in enumerate(exponent) for _ in range(a)]


def relevant_history_member(exponent: Sequence[int], agent: int, history: History) -> bool:
    """
    Whether h belongs to the relevant set of the monomial Π μ_j^{α_j}.

    The set is the same for every agent; `agent` is accepted for symmetry with the payment.
    """
    prefix = relevant_prefix(exponent)
    if len(prefix) > len(history):
        raise ConfigurationError(f"Monomial degree {len(prefix)} exceeds the horizon {len(history)}")
    return all(r.agent == j and r.click == 1 for r, j in zip(history.rounds, prefix))


def relevant_mask(exponent: Sequence[int], agents: np.ndarray, clicks: np.ndarray) -> np.ndarray:
    """relevant_history_member for every run of a trace, shape (n,)."""
    prefix = np.asarray(relevant_prefix(exponent), dtype=np.int64)
    d = len(prefix)
    if d == 0:
        return np.ones(agents.shape[0], dtype=bool)
    return np.all(agents[:, :d] == prefix[None, :], axis=1) & np.all(clicks[:, :d] == 1, axis=1)


def relevant_set_probability(exponent: Sequence[int], k: int, T: int) -> CtrPolynomial:
    """P_expl[H(Q)] under the uniform explorer, by enumerating all (2k)^T explorer histories."""
    if (2 * k) ** T > get_settings().max_history_enumeration:
        raise BudgetExceededError(
            f"(2k)^T = {(2 * k) ** T} explorer histories exceed {get_settings().max_history_enumeration}",
            requested=(2 * k) ** T, limit=get_settings().max_history_enumeration,
        )
    prefix = relevant_prefix(exponent)
    if len(prefix) > T:
        raise ConfigurationError(f"Monomial degree {len(prefix)} exceeds T={T}")
    total = CtrPolynomial.zero(k)
    weight = Fraction(1, k ** T)
    for agents in itertools.product(range(k), repeat=T):
        if list(agents[:len(prefix)]) != prefix:
            continue
        for clicks in itertools.product((0, 1), repeat=T):
            if any(c != 1 for c in clicks[:len(prefix)]):
                continue
            hits = [sum(1 for a, c in zip(agents, clicks) if a == j and c) for j in range(k)]
            misses = [sum(1 for a, c in zip(agents, clicks) if a == j and not c) for j in range(k)]
            total = total + weight * CtrPolynomial.click_product(hits, misses)
    return total


def check_exploration_identity(k: int, T: int) -> bool:
    """k^{deg Q}·P_expl[H(Q)] ≡ Q for every monomial Q of degree ≤ T."""
    for exponent in itertools.product(range(T + 1), repeat=k):
        degree = sum(exponent)
        if degree > T:
            continue
        lhs = k ** degree * relevant_set_probability(exponent, k, T)
        if lhs != CtrPolynomial.monomial(exponent):
            logger.warning(f"Exploration identity fails for monomial {exponent} at k={k}, T={T}")
            return False
    return True


def monomial_payment(history: History, agent: int, pmi: CtrPolynomial, gamma: Number, branch: str) -> Number:
    """
    Nothing on the target branch; on the exploration branch
    (1/(1−γ))·Σ_{Q: h ∈ H(Q)} k^{deg Q}·coef_Q.
    """
    if branch not in (BRANCH_TARGET, BRANCH_EXPLORE):
        raise ConfigurationError(f"Unknown branch {branch!r}")
    if branch == BRANCH_TARGET or not pmi:
        return 0
    total = 0
    for exponent, coefficient in pmi:
        if relevant_history_member(exponent, agent, history):
            total = total + pmi.k ** sum(exponent) * coefficient
    return total / (1 - gamma)


def monomial_payments(pmis: Sequence[CtrPolynomial], agents: np.ndarray, clicks: np.ndarray,
                      explore: np.ndarray, gamma: float) -> np.ndarray:
    """Monomial payment of every agent in every run of a mixture trace, shape (n, k)."""
    n, k = agents.shape[0], len(pmis)
    payments = np.zeros((n, k))
    for i, pmi in enumerate(pmis):
        for exponent, coefficient in pmi:
            mask = relevant_mask(exponent, agents, clicks) & explore
            payments[mask, i] += k ** sum(exponent) * float(coefficient)
    return payments / (1.0 - gamma)


# ----------------------------- Mixture mechanism ----------------------------- #

@dataclass(frozen=True)
class MixtureParams:
    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"γ must lie in (0, 1), got {self.gamma}")


def regret_preserving_gamma(T: int) -> float:
    """γ = 1 − 1/T: the exploration branch adds at most v_max regret."""
    if T < 2:
        raise ConfigurationError("Need T >= 2 for γ = 1 − 1/T")
    return 1.0 - 1.0 / T


def mixture_regret_bound(target_regret: float, gamma: float, v_max: float, T: int) -> float:
    """γ·R_target + (1 − γ)·v_max·T."""
    return gamma * target_regret + (1.0 - gamma) * v_max * T


class MixtureRule(AllocationRule):
    """Runs the target rule with probability γ, otherwise a uniformly random agent every round."""

    name = "mixture"
    deterministic = False

    def __init__(self, target: AllocationRule, params: MixtureParams):
        super().__init__(target.k, target.T)
        self.target = target
        self.params = params

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.inner = self.target.spawn()
        self.inner.reset(bids, None if self.target.deterministic else rng)
        self.branches = np.where(rng.random(self.n_runs) < self.params.gamma, BRANCH_TARGET, BRANCH_EXPLORE)
        self.explore = self.branches == BRANCH_EXPLORE

    def select(self, t: int) -> np.ndarray:
        self._chosen = np.asarray(self.inner.select(t), dtype=np.int64)
        uniform = self.rng.integers(self.k, size=self.n_runs)
        return np.where(self.explore, uniform, self._chosen)

    def observe(self, t, agents, clicks):
        # Exploration runs feed the target its own choice with no click; those runs are never read back
        self.inner.observe(t, np.where(self.explore, self._chosen, agents), np.where(self.explore, 0, clicks))

    def describe(self) -> dict:
        return {**super().describe(), "target": self.target.name, "gamma": self.params.gamma}


# ----------------------------- Verification ----------------------------- #

@dataclass(frozen=True)
class AgentExpectation:
    agent: int
    polynomial: float
    mean: float
    stderr: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == self.polynomial else float("inf")
        return (self.mean - self.polynomial) / self.stderr


@dataclass
class ExpectationReport:
    quantity: str
    trials: int
    agents: List[AgentExpectation]

    @property
    def max_abs_z(self) -> float:
        return max((abs(a.z) for a in self.agents), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_abs_z < get_settings().flag_sigmas

    def __bool__(self) -> bool:
        return self.passed


def _mixture_samples(rule: AllocationRule, bids: BidProfile, gamma: float, mu: Sequence[float], trials: int,
                     seed: int, pmis: Sequence[CtrPolynomial]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-trial clicks and monomial payments of the γ-mixture, both (trials, k)."""
    mixture = MixtureRule(rule, MixtureParams(gamma))
    bid_row = np.array([[float(b) for b in bids.bids]])
    clicks, payments = [], []
    for ids in trial_batches(trials):
        source = StochasticSource(mu, rule.T, seed, ids)
        fresh = mixture.spawn()
        batch = simulate(fresh, bid_row, source, make_rng(seed, RULE_STREAM, int(ids[0])))
        clicks.append(batch.click_counts)
        payments.append(monomial_payments(pmis, batch.agents, batch.clicks, fresh.explore, gamma))
    return np.concatenate(clicks), np.concatenate(payments)


def _report(quantity: str, polys: Sequence[float], samples: np.ndarray) -> ExpectationReport:
    n = samples.shape[0]
    agents = []
    for i, value in enumerate(polys):
        estimate = RegretEstimate(float(samples[:, i].mean()),
                                  float(samples[:, i].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0, n)
        agents.append(AgentExpectation(i, float(value), estimate.mean, estimate.stderr))
    return ExpectationReport(quantity, n, agents)


def verify_expected_payment(rule: AllocationRule, bids: BidProfile, gamma: float, mu: Sequence[float],
                            trials: int, seed: int) -> ExpectationReport:
    """Mean monomial payment of the full mixture against the Myerson payment polynomial at μ."""
    if len(mu) != rule.k:
        raise ConfigurationError(f"Expected {rule.k} CTRs, got {len(mu)}")
    pmis = [myerson_expected_payment_polynomial(rule, bids, i, gamma) for i in range(rule.k)]
    _, payments = _mixture_samples(rule, bids, gamma, mu, trials, seed, pmis)
    report = _report("payment", [float(p.evaluate([float(m) for m in mu])) for p in pmis], payments)
    logger.info(f"Expected payment check for {rule.name}: max |z| = {report.max_abs_z:.3f}")
    return report


def verify_expected_clicks(rule: AllocationRule, bids: BidProfile, mu: Sequence[float],
                           trials: int, seed: int) -> ExpectationReport:
    """Mean clicks of the target rule alone against its click polynomials at μ."""
    polys = [expected_clicks_polynomial(rule, bids, i) for i in range(rule.k)]
    clicks = []
    bid_row = np.array([[float(b) for b in bids.bids]])
    for ids in trial_batches(trials):
        source = StochasticSource(mu, rule.T, seed, ids)
        clicks.append(simulate(rule.spawn(), bid_row, source, keep_trace=False).click_counts)
    return _report("clicks", [float(p.evaluate([float(m) for m in mu])) for p in polys], np.concatenate(clicks))


@dataclass(frozen=True)
class ExpectedDeviation:
    agent: int
    value: Number
    bid: Number
    opponents: Tuple[Number, ...]
    gain_of_truth: Number


@dataclass
class ExpectationTruthfulnessReport:
    deviations: List[ExpectedDeviation]

    @property
    def violations(self) -> List[ExpectedDeviation]:
        return [d for d in self.deviations if d.gain_of_truth < 0]

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


def expected_utility(rule: AllocationRule, bids: BidProfile, agent: int, value: Number, gamma: Number,
                     mu: Sequence[Number]) -> Number:
    """
    v·E[C_i] − E[P_i] for the mixture: E[C_i] = γ·C_i(μ) + (1 − γ)·T·μ_i/k and
    E[P_i] = P^M_i(μ), the exploration branch paying the Myerson polynomial in expectation.
    """
    clicks = expected_clicks_polynomial(rule, bids, agent).evaluate(mu)
    payment = myerson_expected_payment_polynomial(rule, bids, agent, gamma).evaluate(mu)
    explore_clicks = (1 - gamma) * rule.T * mu[agent] / rule.k
    return value * (gamma * clicks + explore_clicks) - payment


def check_truthful_in_expectation(rule: AllocationRule, grid: Sequence[Number], gamma: Number,
                                  mu: Sequence[Number]) -> ExpectationTruthfulnessReport:
    """Expected utility at the truthful bid against every grid deviation, all opponents' grid bids."""
    if len(mu) != rule.k:
        raise ConfigurationError(f"Expected {rule.k} CTRs, got {len(mu)}")
    grid = sorted(set(grid))
    deviations = []
    for i in range(rule.k):
        for others in itertools.product(grid, repeat=rule.k - 1):
            def profile(x):
                return BidProfile(tuple(others[:i]) + (x,) + tuple(others[i:]))

            for v in grid:
                truthful = expected_utility(rule, profile(v), i, v, gamma, mu)
                for b in grid:
                    if b == v:
                        continue
                    gain = truthful - expected_utility(rule, profile(b), i, v, gamma, mu)
                    if not isinstance(gain, Fraction):
                        gain = gain if abs(gain) > 1e-9 * max(1.0, abs(float(v)) * rule.T) else 0.0
                    deviations.append(ExpectedDeviation(i, v, b, tuple(others), gain))
    report = ExpectationTruthfulnessReport(deviations)
    logger.info(f"Truthfulness in expectation of the {rule.name} mixture: {len(report.violations)} violations")
    return report


def mixture_regret(rule: AllocationRule, inst: StochasticInstance, gamma: float, trials: int,
                   seed: int) -> RegretEstimate:
    """Stochastic regret of the γ-mixture around `rule`."""
    return regret_stochastic(MixtureRule(rule, MixtureParams(gamma)), inst, trials, seed)
