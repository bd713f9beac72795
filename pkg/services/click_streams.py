"""
Click sources feeding the simulation engine.

A source serves, round by round, the full (n_runs, k) column of would-be clicks.
The engine reads only the entry of the agent it shows, so allocation rules never
see unobserved bits.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from core.exceptions import ConfigurationError
from models import Realization

logger = logging.getLogger(__name__)

# Stream identifiers inside a seed's key space
CLICK_STREAM = 0
RULE_STREAM = 1


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator addressed by (seed, *key)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


class ClickSource:
    """Base interface: n_runs independent runs of k agents over T rounds."""

    n_runs: int
    k: int
    T: int

    def column(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def realization(self, run: int = 0) -> Realization:
        """Full realization behind one run."""
        raise NotImplementedError


class RealizationSource(ClickSource):
    """Explicit realizations, one (k, T) matrix per run."""

    def __init__(self, bits: np.ndarray, rows: Optional[np.ndarray] = None):
        bits = np.asarray(bits, dtype=np.int8)
        if bits.ndim == 2:
            bits = bits[None, :, :]
        if bits.ndim != 3:
            raise ConfigurationError(f"Realization batch must be (n, k, T), got {bits.shape}")
        self.bits = bits
        self.rows = rows
        self.n_runs = bits.shape[0] if rows is None else len(rows)
        self.k = bits.shape[1]
        self.T = bits.shape[2]

    @classmethod
    def of(cls, realizations: Sequence[Realization]) -> "RealizationSource":
        return cls(np.stack([r.array for r in realizations]))

    @classmethod
    def repeated(cls, realization: Realization, n_runs: int) -> "RealizationSource":
        return cls(realization.array[None], rows=np.zeros(n_runs, dtype=np.int64))

    def column(self, t: int) -> np.ndarray:
        if self.rows is None:
            return self.bits[:, :, t]
        return self.bits[self.rows, :, t]

    def realization(self, run: int = 0) -> Realization:
        row = run if self.rows is None else int(self.rows[run])
        return Realization.from_array(self.bits[row])


class EnumeratedSource(ClickSource):
    """Realizations addressed by integer index: bit (j, t) sits at position j*T + t."""

    def __init__(self, k: int, T: int, indices: np.ndarray):
        self.k = k
        self.T = T
        self.indices = np.asarray(indices, dtype=np.int64)
        self.n_runs = len(self.indices)
        self._shifts = np.arange(k, dtype=np.int64) * T

    def column(self, t: int) -> np.ndarray:
        return ((self.indices[:, None] >> (self._shifts[None, :] + t)) & 1).astype(np.int8)

    def realization(self, run: int = 0) -> Realization:
        return realization_from_index(int(self.indices[run]), self.k, self.T)


def realization_from_index(index: int, k: int, T: int) -> Realization:
    bits = [[(int(index) >> (j * T + t)) & 1 for t in range(T)] for j in range(k)]
    return Realization(tuple(tuple(row) for row in bits))


def realization_index(realization: Realization) -> int:
    index = 0
    for j, row in enumerate(realization.bits):
        for t, bit in enumerate(row):
            index |= bit << (j * realization.T + t)
    return index


class StochasticSource(ClickSource):
    """
    Bernoulli(μ_j) clicks generated lazily per trial.

    Trial m draws uniforms round by round from make_rng(seed, CLICK_STREAM, m), so
    bit (m, j, t) is the same for every mechanism and every batch layout, and the
    bits of two instances with different μ are coupled through the same uniforms.
    """

    def __init__(self, ctrs: Sequence[float], T: int, seed: int, trial_ids: Sequence[int], chunk: int = 4096):
        self.ctrs = np.asarray(ctrs, dtype=float)
        if self.ctrs.ndim != 1 or np.any(self.ctrs < 0) or np.any(self.ctrs > 1):
            raise ConfigurationError(f"CTRs must be a vector in [0, 1]: {ctrs}")
        self.k = len(self.ctrs)
        self.T = T
        self.seed = seed
        self.trial_ids = np.asarray(trial_ids, dtype=np.int64)
        self.n_runs = len(self.trial_ids)
        self.chunk = chunk
        self._generators: list = []
        self._block: Optional[np.ndarray] = None
        self._block_start = -1

    def _fill(self, start: int):
        if start == 0:
            self._generators = [make_rng(self.seed, CLICK_STREAM, m) for m in self.trial_ids]
        size = min(self.chunk, self.T - start)
        self._block = np.stack([g.random((size, self.k)) for g in self._generators])
        self._block_start = start

    def column(self, t: int) -> np.ndarray:
        if self._block is None or not self._block_start <= t < self._block_start + self._block.shape[1]:
            if t != self._block_start + (0 if self._block is None else self._block.shape[1]) and t != 0:
                raise ConfigurationError("StochasticSource must be read in round order")
            self._fill(t)
        return (self._block[:, t - self._block_start, :] < self.ctrs[None, :]).astype(np.int8)

    def realization(self, run: int = 0) -> Realization:
        """Materialize one run's full realization (fresh generator, same stream)."""
        g = make_rng(self.seed, CLICK_STREAM, int(self.trial_ids[run]))
        u = g.random((self.T, self.k))
        return Realization.from_array((u < self.ctrs[None, :]).astype(np.int8).T)
