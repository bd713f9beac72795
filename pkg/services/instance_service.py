"""
Constructors for the stochastic instance families used by the experiments.
"""
import logging
import math
from typing import List

from core.exceptions import ConfigurationError, InstanceError
from models import BidProfile, StochasticInstance

logger = logging.getLogger(__name__)


def lower_bound_epsilon(k: int, T: int) -> float:
    return k ** (1 / 3) * T ** (-1 / 3)


def make_lower_bound_instance(kind: str, i: int, k: int, T: int, v_max: float = 1.0) -> StochasticInstance:
    """
    Hard instances for exploration-separated rules.

    kind "I": μ_i = ½ + ε, every other μ = ½, all bids and values v_max.
    kind "J": all μ = ½, agent i bids v_max, every other agent v_max / 2.
    ε = k^{1/3} T^{-1/3} must keep ½ + ε ≤ 1 for both kinds.
    """
    kind = kind.upper().split("_")[0]
    if kind not in ("I", "J"):
        raise ConfigurationError(f"Unknown lower-bound instance kind {kind!r}; expected 'I' or 'J'")
    if not 0 <= i < k:
        raise ConfigurationError(f"Agent index {i} outside [0, {k})")
    if T < 1 or v_max <= 0:
        raise ConfigurationError(f"Need T >= 1 and v_max > 0, got T={T}, v_max={v_max}")
    eps = lower_bound_epsilon(k, T)
    if eps > 0.5:
        raise InstanceError(f"ε = k^(1/3)·T^(-1/3) = {eps:.6g} exceeds 1/2 for k={k}, T={T}")

    if kind == "I":
        ctrs = tuple(0.5 + eps if j == i else 0.5 for j in range(k))
        values = tuple(v_max for _ in range(k))
    else:
        ctrs = tuple(0.5 for _ in range(k))
        values = tuple(v_max if j == i else v_max / 2 for j in range(k))
    return StochasticInstance(
        k=k, T=T, ctrs=ctrs, values=values, bids=BidProfile(values), v_max=v_max, label=f"{kind}_{i}"
    )


def lower_bound_family(k: int, T: int, v_max: float = 1.0) -> List[StochasticInstance]:
    """All 2k instances I_0..I_{k-1}, J_0..J_{k-1} at horizon T."""
    return [make_lower_bound_instance(kind, i, k, T, v_max) for kind in ("I", "J") for i in range(k)]


def _check_delta(delta: float):
    if not 0 < delta <= 0.25:
        raise InstanceError(f"δ must lie in (0, 1/4], got {delta}")


def make_delta_gap_instance(delta: float, k: int, v_max: float = 1.0, T: int = 1) -> StochasticInstance:
    """All values v_max, μ_0 = ½ + δ, others ½: best product exceeds the runner-up by δ·v_max."""
    _check_delta(delta)
    if k < 1:
        raise ConfigurationError("Need k >= 1")
    ctrs = tuple(0.5 + delta if j == 0 else 0.5 for j in range(k))
    values = tuple(v_max for _ in range(k))
    return StochasticInstance(
        k=k, T=T, ctrs=ctrs, values=values, bids=BidProfile(values), v_max=v_max, label=f"gap_{delta:g}"
    )


def make_delta_gap_hard_instance(delta: float, lam: float, k: int, T: int, v_max: float = 1.0) -> StochasticInstance:
    """
    δ-gap instance that stays hard for exploration-separated rules.

    Agent 0 has μ = ½ + ε with ε = T^{-λ/2}; agent 1 bids v_max; every other agent bids
    v_max(1 − 2δ)/(1 + 2ε). Agent 1 is best, ahead of agent 0 by exactly δ·v_max.
    """
    _check_delta(delta)
    if k < 2:
        raise ConfigurationError("The hard δ-gap instance needs k >= 2")
    if lam <= 0:
        raise ConfigurationError(f"λ must be positive, got {lam}")
    eps = T ** (-lam / 2)
    if eps > 0.5:
        raise InstanceError(f"ε = T^(-λ/2) = {eps:.6g} exceeds 1/2")
    low = v_max * (1 - 2 * delta) / (1 + 2 * eps)
    ctrs = tuple(0.5 + eps if j == 0 else 0.5 for j in range(k))
    values = tuple(v_max if j == 1 else low for j in range(k))
    return StochasticInstance(
        k=k, T=T, ctrs=ctrs, values=values, bids=BidProfile(values), v_max=v_max,
        label=f"gap_hard_{delta:g}_{lam:g}",
    )


def delta_gap_of(inst: StochasticInstance) -> float:
    """(best − second best product) / max value."""
    rates = sorted(inst.welfare_rates, reverse=True)
    if len(rates) < 2:
        return math.inf
    return (rates[0] - rates[1]) / max(float(v) for v in inst.values)
