"""
Myerson payments b_i·C_i(b_i) − ∫₀^{b_i} C_i(x) dx by counterfactual re-simulation.

x ↦ C_i(x, b_-i; ρ) is an integer step function. Its pieces are located either
exactly, from the candidate breakpoints b_j·m/n (m, n ≤ T) of rules whose
thresholds are ratios of click counts, or by recursive bisection to a width
tolerance.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import get_settings
from core.exceptions import ConfigurationError, InternalConsistencyError
from models import BidProfile, History, Number, Realization
from services.allocation_service import AllocationRule, simulate
from services.click_streams import ClickSource, EnumeratedSource, RealizationSource

logger = logging.getLogger(__name__)

Evaluator = Callable[[Sequence[Number]], np.ndarray]


@dataclass(frozen=True)
class StepSegment:
    left: Number
    right: Number
    probe: Number

    @property
    def width(self) -> Number:
        return self.right - self.left


def exact_candidates(bids: BidProfile, agent: int, T: int) -> List[Fraction]:
    """Every b_j·m/n with j ≠ agent and 1 ≤ m, n ≤ T that lies strictly inside (0, b_agent)."""
    upper = Fraction(bids[agent])
    ratios = {Fraction(m, n) for m in range(1, T + 1) for n in range(1, T + 1)}
    points = {Fraction(b) * r for j, b in enumerate(bids.bids) if j != agent for r in ratios}
    return sorted(p for p in points if 0 < p < upper)


def _same(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.all(a == b, axis=1)


def step_segments(
    evaluate: Evaluator,
    upper: Number,
    candidates: Optional[Sequence[Fraction]] = None,
    tol: Optional[float] = None,
    max_breakpoints: Optional[int] = None,
) -> Tuple[List[StepSegment], np.ndarray]:
    """
    Split (0, upper] into pieces on which evaluate(x) is constant.

    evaluate maps m points to an (m, d) signature array. Returns the pieces and the
    signature of each piece (taken at its midpoint).
    """
    if candidates is not None:
        points = [Fraction(0), *candidates, Fraction(upper)]
        probes = [(a + b) / 2 for a, b in zip(points[:-1], points[1:])]
        signatures = np.asarray(evaluate(probes))
        segments = [StepSegment(a, b, p) for a, b, p in zip(points[:-1], points[1:], probes)]
        return segments, signatures

    settings = get_settings()
    upper = float(upper)
    tol = tol if tol is not None else settings.myerson_relative_tol * upper
    x_min = upper * 2.0 ** -40
    grid = np.linspace(x_min, upper, settings.myerson_initial_grid + 1)
    sig = np.asarray(evaluate(grid))
    change = ~_same(sig[:-1], sig[1:])
    lo, hi = grid[:-1][change], grid[1:][change]
    sig_lo, sig_hi = sig[:-1][change], sig[1:][change]
    breakpoints: List[float] = []

    while len(lo):
        done = (hi - lo) <= tol
        breakpoints.extend(((lo[done] + hi[done]) / 2).tolist())
        lo, hi, sig_lo, sig_hi = lo[~done], hi[~done], sig_lo[~done], sig_hi[~done]
        if max_breakpoints is not None and len(breakpoints) + len(lo) > max_breakpoints:
            raise InternalConsistencyError(
                f"Step function has more than {max_breakpoints} breakpoints below {upper}"
            )
        if not len(lo):
            break
        mid = (lo + hi) / 2
        sig_mid = np.asarray(evaluate(mid))
        left = _same(sig_mid, sig_lo)
        right = _same(sig_mid, sig_hi) & ~left
        split = ~left & ~right
        lo = np.concatenate([np.where(left, mid, lo)[left | right], lo[split], mid[split]])
        hi = np.concatenate([np.where(left, hi, mid)[left | right], mid[split], hi[split]])
        sig_lo = np.concatenate([np.where(left[:, None], sig_mid, sig_lo)[left | right], sig_lo[split], sig_mid[split]])
        sig_hi = np.concatenate([np.where(left[:, None], sig_hi, sig_mid)[left | right], sig_mid[split], sig_hi[split]])

    points = [0.0, *sorted(breakpoints), upper]
    probes = [(a + b) / 2 for a, b in zip(points[:-1], points[1:])]
    signatures = np.asarray(evaluate(probes))
    segments = [StepSegment(a, b, p) for a, b, p in zip(points[:-1], points[1:], probes)]
    return segments, signatures


def use_exact_mode(rule: AllocationRule, bids: BidProfile) -> bool:
    return bids.exact and rule.rational_breakpoints


def bid_matrix_with(bids: BidProfile, agent: int, xs: Sequence[Number], exact: bool) -> np.ndarray:
    """One bid row per x, with agent's bid replaced by x."""
    if exact:
        base = np.array([Fraction(b) for b in bids.bids], dtype=object)
        matrix = np.tile(base, (len(xs), 1))
        matrix[:, agent] = [Fraction(x) for x in xs]
    else:
        base = np.array([float(b) for b in bids.bids])
        matrix = np.tile(base, (len(xs), 1))
        matrix[:, agent] = np.asarray(xs, dtype=float)
    return matrix


def _tiled_source(source: ClickSource, repeats: int) -> ClickSource:
    """Run (q, r) of the result uses realization r of `source`; q-major."""
    if isinstance(source, EnumeratedSource):
        return EnumeratedSource(source.k, source.T, np.tile(source.indices, repeats))
    if isinstance(source, RealizationSource):
        rows = np.arange(source.bits.shape[0]) if source.rows is None else np.asarray(source.rows)
        return RealizationSource(source.bits, rows=np.tile(rows, repeats))
    materialized = RealizationSource.of([source.realization(run) for run in range(source.n_runs)])
    return _tiled_source(materialized, repeats)


def click_curve_evaluator(rule: AllocationRule, bids: BidProfile, source: ClickSource, agent: int,
                          exact: bool) -> Evaluator:
    """x ↦ clicks of `agent` in every run of `source` when bidding x, shape (m, n_runs)."""
    settings = get_settings()
    n = source.n_runs

    def evaluate(xs: Sequence[Number]) -> np.ndarray:
        xs = list(xs)
        per_chunk = max(1, settings.max_batch_runs // max(n, 1))
        rows = []
        for start in range(0, len(xs), per_chunk):
            chunk = xs[start:start + per_chunk]
            matrix = np.repeat(bid_matrix_with(bids, agent, chunk, exact), n, axis=0)
            batch = simulate(rule.spawn(), matrix, _tiled_source(source, len(chunk)), keep_trace=False)
            rows.append(batch.click_counts[:, agent].reshape(len(chunk), n))
        return np.concatenate(rows, axis=0)

    return evaluate


def myerson_payments_batch(rule: AllocationRule, bids: BidProfile, source: ClickSource, agent: int,
                           tol: Optional[float] = None) -> np.ndarray:
    """Myerson payment of `agent` in every run of `source` (same bids in all runs)."""
    if not rule.deterministic:
        raise ConfigurationError(f"Myerson payments need a deterministic rule; {rule.name} is randomized")
    if bids.k != rule.k or source.k != rule.k or source.T != rule.T:
        raise ConfigurationError("Rule, bids and realizations must share k and T")
    exact = use_exact_mode(rule, bids)
    if not exact:
        return np.array([
            myerson_payment(rule, bids, source.realization(run), agent, tol) for run in range(source.n_runs)
        ], dtype=float)

    evaluate = click_curve_evaluator(rule, bids, source, agent, exact=True)
    b_i = Fraction(bids[agent])
    segments, clicks = step_segments(evaluate, b_i, candidates=exact_candidates(bids, agent, rule.T))
    at_bid = evaluate([b_i])[0]
    widths = np.array([s.width for s in segments], dtype=object)
    integral = widths @ clicks.astype(object)
    return b_i * at_bid.astype(object) - integral


def myerson_payment(rule: AllocationRule, bids: BidProfile, realization: Realization, agent: int,
                    tol: Optional[float] = None) -> Number:
    """Unrestricted Myerson payment of one agent on one fully known realization."""
    if not rule.deterministic:
        raise ConfigurationError(f"Myerson payments need a deterministic rule; {rule.name} is randomized")
    if bids.k != rule.k or realization.k != rule.k or realization.T != rule.T:
        raise ConfigurationError("Rule, bids and realization must share k and T")
    source = RealizationSource(realization.array)
    if use_exact_mode(rule, bids):
        return myerson_payments_batch(rule, bids, source, agent)[0]

    evaluate = click_curve_evaluator(rule, bids, source, agent, exact=False)
    b_i = float(bids[agent])
    segments, clicks = step_segments(
        evaluate, b_i, tol=tol, max_breakpoints=rule.T * (rule.k + 1)
    )
    integral = sum(s.width * float(c) for s, c in zip(segments, clicks[:, 0]))
    at_bid = float(evaluate([b_i])[0, 0])
    return b_i * at_bid - integral


def observed_realization(history: History, k: int, fill: int = 1) -> Realization:
    """Realization agreeing with the history on observed bits and equal to `fill` elsewhere."""
    bits = np.full((k, len(history)), fill, dtype=np.int8)
    for t, record in enumerate(history.rounds):
        bits[record.agent, t] = record.click
    return Realization.from_array(bits)


def myerson_payment_from_history(rule: AllocationRule, bids: BidProfile, history: History, agent: int,
                                 tol: Optional[float] = None) -> Number:
    """Payment computed from observed clicks only; unobserved bits are taken to be clicks."""
    return myerson_payment(rule, bids, observed_realization(history, bids.k), agent, tol)
