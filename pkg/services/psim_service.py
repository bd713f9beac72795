"""
PSim: phased, strongly separated randomized allocation with multiplicative weights.

Each phase holds k exploration rounds, one per agent, placed uniformly at random
and independently of bids. Exploration clicks update the weights
w_i = (1+ε)^{b_i s_i / v_max}; every other round samples an agent from the
weights frozen at the start of the phase and its feedback is discarded.
A click in an exploitation round is charged b_i − ∫₀^{b_i} γ_i(x) dx / γ_i(b_i).
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import integrate
from scipy.special import logsumexp, softmax

from config.settings import get_settings
from core.exceptions import ConfigurationError, InternalConsistencyError
from models import BidProfile
from services.allocation_service import AllocationRule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsimParams:
    k: int
    T: int
    P: int
    Q: int
    epsilon: float
    v_max: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.P < 1 or self.Q < 1:
            raise ConfigurationError(f"PSim needs k, P, Q >= 1: {self}")
        if self.k > self.Q:
            raise ConfigurationError(f"PSim phase length Q={self.Q} is shorter than k={self.k}")
        if self.k > 1 and self.epsilon <= 0:
            raise ConfigurationError(f"PSim learning rate must be positive, got {self.epsilon}")
        if self.v_max <= 0:
            raise ConfigurationError("v_max must be positive")

    @property
    def log_base(self) -> float:
        return math.log1p(self.epsilon)

    def phase_of(self, t: int) -> int:
        return min(t // self.Q, self.P - 1)


def psim_params(k: int, T: int, v_max: float = 1.0) -> PsimParams:
    """P = round((ln k)^{1/3} (T/k)^{2/3}) clamped so that Q = floor(T/P) >= k; ε = (k ln k / T)^{1/3}."""
    if T < k:
        raise ConfigurationError(f"PSim: phase length would be shorter than k={k} (T={T})")
    log_k = math.log(k) if k > 1 else 0.0
    P = max(1, round(log_k ** (1 / 3) * (T / k) ** (2 / 3)))
    P = min(P, T // k)
    Q = T // P
    epsilon = (k * log_k / T) ** (1 / 3)
    return PsimParams(k=k, T=T, P=P, Q=Q, epsilon=epsilon, v_max=float(v_max))


def _logits(params: PsimParams, bids: np.ndarray, s: np.ndarray) -> np.ndarray:
    return params.log_base * bids * s / params.v_max


def psim_gammas(params: PsimParams, bids: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Sampling probabilities per run, shape (n, k)."""
    return softmax(_logits(params, np.asarray(bids, dtype=float), np.asarray(s, dtype=float)), axis=-1)


def psim_gamma(params: PsimParams, bids, agent: int, exploration_clicks: Sequence[int]) -> float:
    """γ_i = (1+ε)^{b_i s_i/v_max} / Σ_j (1+ε)^{b_j s_j/v_max}; s holds clicks of earlier phases."""
    if isinstance(bids, BidProfile):
        bids = bids.bids
    b = np.asarray([float(x) for x in bids])[None, :]
    s = np.asarray(exploration_clicks, dtype=float)[None, :]
    if b.shape != s.shape or b.shape[1] != params.k:
        raise ConfigurationError(f"Expected {params.k} bids and click counts")
    return float(psim_gammas(params, b, s)[0, agent])


def psim_prices(params: PsimParams, bids: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Closed-form per-click price for every agent, shape (n, k).

    With c = s_i/v_max, a = 1+ε and D = Σ_{j≠i} a^{b_j s_j / v_max}:
    ∫₀^{b} γ_i = (ln(a^{cb} + D) − ln(1 + D)) / (c ln a), price = b − ∫/γ_i(b); 0 when c = 0.
    """
    bids = np.asarray(bids, dtype=float)
    s = np.asarray(s, dtype=float)
    n, k = bids.shape
    logits = _logits(params, bids, s)
    prices = np.zeros((n, k))
    if k == 1:
        return prices
    for i in range(k):
        others = np.delete(logits, i, axis=1)
        log_d = logsumexp(others, axis=1)
        own = logits[:, i]
        c_log_a = params.log_base * s[:, i] / params.v_max
        clicked = c_log_a > 0
        safe = np.where(clicked, c_log_a, 1.0)
        integral = (np.logaddexp(own, log_d) - np.logaddexp(0.0, log_d)) / safe
        gamma_b = np.exp(own - np.logaddexp(own, log_d))
        price = bids[:, i] - integral / gamma_b
        prices[:, i] = np.where(clicked, np.clip(price, 0.0, bids[:, i]), 0.0)
    return prices


def psim_payment_per_click(params: PsimParams, bids, agent: int, exploration_clicks: Sequence[int],
                           check_quadrature: bool = True) -> float:
    """Per-click exploitation price of `agent`; cross-checked against adaptive quadrature."""
    if isinstance(bids, BidProfile):
        bids = bids.bids
    b = np.asarray([float(x) for x in bids])[None, :]
    s = np.asarray(exploration_clicks, dtype=float)[None, :]
    price = float(psim_prices(params, b, s)[0, agent])
    if check_quadrature:
        reference = psim_price_by_quadrature(params, b[0], agent, s[0])
        settings = get_settings()
        allowed = max(settings.quadrature_rel_tol * max(abs(reference), abs(price)),
                      settings.quadrature_abs_tol * params.v_max)
        if abs(price - reference) > allowed:
            raise InternalConsistencyError(
                f"PSim price closed form {price!r} disagrees with quadrature {reference!r}"
            )
    return price


def psim_price_by_quadrature(params: PsimParams, bids: np.ndarray, agent: int, s: np.ndarray) -> float:
    bids = np.asarray(bids, dtype=float)
    s = np.asarray(s, dtype=float)
    b_i = bids[agent]

    def gamma_at(x: float) -> float:
        trial = bids.copy()
        trial[agent] = x
        return float(psim_gammas(params, trial[None, :], s[None, :])[0, agent])

    integral, _ = integrate.quad(gamma_at, 0.0, b_i, epsabs=1e-14, epsrel=1e-13, limit=200)
    return b_i - integral / gamma_at(b_i)


class PsimRule(AllocationRule):
    """Randomized; exploitation clicks are charged into `charges`."""

    name = "psim"
    deterministic = False

    def __init__(self, k: int, T: int, v_max: float = 1.0, params: Union[PsimParams, None] = None):
        super().__init__(k, T)
        self.params = params or psim_params(k, T, v_max)
        if self.params.k != k or self.params.T != T:
            raise ConfigurationError("PSim params do not match (k, T)")
        self.v_max = self.params.v_max

    def reset(self, bids, rng=None):
        super().reset(bids, rng)
        self.fbids = np.asarray(bids, dtype=float)
        # Independent streams: exploration schedule and exploitation sampling
        schedule_seed, sample_seed = rng.integers(0, 2 ** 63, size=2)
        self._schedule_rng = np.random.Generator(np.random.Philox(int(schedule_seed)))
        self._sample_rng = np.random.Generator(np.random.Philox(int(sample_seed)))
        self.exploration_clicks = np.zeros((self.n_runs, self.k), dtype=np.int64)
        self.charges = np.zeros((self.n_runs, self.k))
        self.phase = -1
        self._explore = False

    def _start_phase(self, p: int):
        self.phase = p
        Q = self.params.Q
        # k distinct positions in the phase, agent j explored at the j-th
        self.schedule = self._schedule_rng.random((self.n_runs, Q)).argsort(axis=1)[:, : self.k]
        s_prev = self.exploration_clicks.astype(float)
        self.gamma = psim_gammas(self.params, self.fbids, s_prev)
        self.cdf = np.cumsum(self.gamma, axis=1)
        self.prices = psim_prices(self.params, self.fbids, s_prev)

    def select(self, t: int) -> np.ndarray:
        p = self.params.phase_of(t)
        if p != self.phase:
            self._start_phase(p)
        offset = t - p * self.params.Q
        u = self._sample_rng.random(self.n_runs)
        if self.k == 1:
            self._explored = np.ones(self.n_runs, dtype=bool)
            return np.zeros(self.n_runs, dtype=np.int64)
        hits = self.schedule == offset
        self._explored = hits.any(axis=1)
        sampled = np.minimum((self.cdf < u[:, None]).sum(axis=1), self.k - 1)
        return np.where(self._explored, hits.argmax(axis=1), sampled)

    def observe(self, t, agents, clicks):
        explored = self._explored
        self.exploration_clicks[self._runs, agents] += np.where(explored, clicks, 0)
        exploit_click = (~explored) & (clicks == 1)
        self.charges[self._runs, agents] += np.where(exploit_click, self.prices[self._runs, agents], 0.0)

    def describe(self) -> dict:
        p = self.params
        return {**super().describe(), "P": p.P, "Q": p.Q, "epsilon": p.epsilon, "v_max": p.v_max}
