"""
Domain value types shared by the services.

Agents and rounds are 0-based throughout.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import ConfigurationError

Number = Union[int, float, Fraction]


def parse_bid(text: str) -> Number:
    """Parse a bid literal; decimal and ratio literals stay exact ("3/2", "0.5", "2")."""
    text = text.strip()
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(f"Not a valid bid: {text!r}")
    return value


def format_number(value: Number) -> str:
    """Render an exact number as 'p/q' or an integer, floats via repr."""
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def is_exact(value: Any) -> bool:
    return isinstance(value, (Rational, np.integer)) and not isinstance(value, bool)


@dataclass(frozen=True)
class Realization:
    """Full k×T click table, including the bits of agents that were not shown."""
    bits: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if not self.bits or not self.bits[0]:
            raise ConfigurationError("Realization needs at least one agent and one round")
        width = len(self.bits[0])
        for row in self.bits:
            if len(row) != width:
                raise ConfigurationError("Realization rows must all have length T")
            if any(b not in (0, 1) for b in row):
                raise ConfigurationError("Realization entries must be 0 or 1")

    @property
    def k(self) -> int:
        return len(self.bits)

    @property
    def T(self) -> int:
        return len(self.bits[0])

    @property
    def array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int8)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Realization":
        array = np.asarray(array)
        if array.ndim != 2:
            raise ConfigurationError(f"Realization array must be 2-D, got shape {array.shape}")
        return cls(tuple(tuple(int(b) for b in row) for row in array))

    @classmethod
    def zeros(cls, k: int, T: int) -> "Realization":
        return cls.from_array(np.zeros((k, T), dtype=np.int8))

    def flip(self, agent: int, t: int) -> "Realization":
        array = self.array
        array[agent, t] ^= 1
        return Realization.from_array(array)

    def to_text(self) -> str:
        """One line per agent, T characters of 0/1."""
        return "\n".join("".join(str(b) for b in row) for row in self.bits) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Realization":
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        if not rows:
            raise ConfigurationError("Empty realization text")
        bad = [r for r in rows if set(r) - {"0", "1"}]
        if bad:
            raise ConfigurationError(f"Realization lines may only contain 0 and 1: {bad[0]!r}")
        return cls(tuple(tuple(int(c) for c in row) for row in rows))


@dataclass(frozen=True)
class BidProfile:
    """Strictly positive bids, one per agent."""
    bids: Tuple[Number, ...]

    def __post_init__(self):
        if len(self.bids) == 0:
            raise ConfigurationError("Bid profile must contain at least one bid")
        for b in self.bids:
            if not b > 0:
                raise ConfigurationError(f"Bids must be strictly positive, got {b}")

    @classmethod
    def of(cls, values: Iterable[Number]) -> "BidProfile":
        return cls(tuple(values))

    @classmethod
    def parse(cls, text: str) -> "BidProfile":
        return cls(tuple(parse_bid(part) for part in text.split(",") if part.strip()))

    @property
    def k(self) -> int:
        return len(self.bids)

    @property
    def exact(self) -> bool:
        return all(is_exact(b) for b in self.bids)

    def __getitem__(self, i: int) -> Number:
        return self.bids[i]

    def as_array(self) -> np.ndarray:
        """Object array of Fractions when every bid is rational, float64 otherwise."""
        if self.exact:
            return np.array([Fraction(b) for b in self.bids], dtype=object)
        return np.array([float(b) for b in self.bids], dtype=np.float64)

    def with_bid(self, agent: int, bid: Number) -> "BidProfile":
        bids = list(self.bids)
        bids[agent] = bid
        return BidProfile(tuple(bids))

    def __str__(self) -> str:
        return ",".join(format_number(b) for b in self.bids)


@dataclass(frozen=True)
class StochasticInstance:
    """CTRs, values and bids for a stochastic run of T rounds."""
    k: int
    T: int
    ctrs: Tuple[float, ...]
    values: Tuple[Number, ...]
    bids: BidProfile
    v_max: Number
    label: str = ""

    def __post_init__(self):
        if self.k < 1 or self.T < 1:
            raise ConfigurationError("Instance needs k >= 1 and T >= 1")
        if len(self.ctrs) != self.k or len(self.values) != self.k or self.bids.k != self.k:
            raise ConfigurationError(
                f"Instance dimension mismatch: k={self.k}, ctrs={len(self.ctrs)}, "
                f"values={len(self.values)}, bids={self.bids.k}"
            )
        if any(not 0.0 <= mu <= 1.0 for mu in self.ctrs):
            raise ConfigurationError(f"CTRs must lie in [0, 1]: {self.ctrs}")
        if not self.v_max > 0 or any(not 0 < v <= self.v_max for v in self.values):
            raise ConfigurationError(f"Values must lie in (0, v_max={self.v_max}]: {self.values}")

    @property
    def welfare_rates(self) -> np.ndarray:
        return np.asarray(self.ctrs, dtype=float) * np.asarray([float(v) for v in self.values])

    @property
    def best_agent(self) -> int:
        return int(np.argmax(self.welfare_rates))


class Round(NamedTuple):
    agent: int
    click: int


@dataclass(frozen=True)
class History:
    """What a mechanism actually saw: the agent shown and its click, per round."""
    rounds: Tuple[Round, ...]

    def __post_init__(self):
        for r in self.rounds:
            if r.agent < 0 or r.click not in (0, 1):
                raise ConfigurationError(f"Invalid history record {r}")

    @classmethod
    def from_sequences(cls, agents: Sequence[int], clicks: Sequence[int]) -> "History":
        if len(agents) != len(clicks):
            raise ConfigurationError("History agents and clicks must have equal length")
        return cls(tuple(Round(int(a), int(c)) for a, c in zip(agents, clicks)))

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def T(self) -> int:
        return len(self.rounds)

    @property
    def agents(self) -> Tuple[int, ...]:
        return tuple(r.agent for r in self.rounds)

    @property
    def clicks(self) -> Tuple[int, ...]:
        return tuple(r.click for r in self.rounds)

    def prefix(self, t: int) -> "History":
        return History(self.rounds[:t])

    def to_records(self) -> List[Dict[str, int]]:
        return [{"round": t, "agent": r.agent, "click": r.click} for t, r in enumerate(self.rounds)]


@dataclass(frozen=True)
class ClickAllocation:
    """Per-agent click and impression counts of one run."""
    clicks: Tuple[int, ...]
    impressions: Tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.clicks)

    @property
    def total_clicks(self) -> int:
        return sum(self.clicks)


@dataclass(frozen=True)
class MechanismOutcome:
    history: History
    allocation: ClickAllocation
    payments: Tuple[Number, ...]
    values: Tuple[Number, ...]
    utilities: Tuple[Number, ...] = ()

    def __post_init__(self):
        if not self.utilities:
            utilities = tuple(
                v * c - p for v, c, p in zip(self.values, self.allocation.clicks, self.payments)
            )
            object.__setattr__(self, "utilities", utilities)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "history": self.history.to_records(),
            "clicks": list(self.allocation.clicks),
            "impressions": list(self.allocation.impressions),
            "payments": [format_number(p) for p in self.payments],
            "values": [format_number(v) for v in self.values],
            "utilities": [format_number(u) for u in self.utilities],
        }


@dataclass
class RunBatch:
    """Result of simulating n independent runs at once (arrays indexed by run first)."""
    bids: np.ndarray
    impressions: np.ndarray
    click_counts: np.ndarray
    agents: Optional[np.ndarray] = None
    clicks: Optional[np.ndarray] = None
    payments: Optional[np.ndarray] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return self.impressions.shape[0]

    def history(self, run: int) -> History:
        if self.agents is None or self.clicks is None:
            raise ConfigurationError("Batch was simulated without a trace")
        return History.from_sequences(self.agents[run].tolist(), self.clicks[run].tolist())

    def allocation(self, run: int) -> ClickAllocation:
        return ClickAllocation(
            tuple(int(c) for c in self.click_counts[run]),
            tuple(int(c) for c in self.impressions[run]),
        )

