"""
Sparse multivariate polynomials in the click-through rates μ_0..μ_{k-1}.
"""
from fractions import Fraction
from math import comb
from numbers import Number as _Number
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from core.exceptions import ConfigurationError

Exponent = Tuple[int, ...]
Coefficient = Union[int, float, Fraction]


def is_scalar(x) -> bool:
    return isinstance(x, _Number) and not isinstance(x, bool)


class CtrPolynomial:
    """Map from exponent vectors (α_0..α_{k-1}) to nonzero coefficients."""

    __slots__ = ("k", "cs")

    def __init__(self, k: int, cs: Dict[Exponent, Coefficient] = None):
        if k < 1:
            raise ConfigurationError("A CTR polynomial needs at least one variable")
        self.k = k
        coefs = {}
        for key, value in (cs or {}).items():
            key = tuple(int(a) for a in key)
            if len(key) != k or any(a < 0 for a in key):
                raise ConfigurationError(f"Exponent {key} is not a length-{k} vector of non-negative integers")
            if value == 0:
                continue
            coefs[key] = value
        self.cs = coefs

    # Constructors

    @classmethod
    def zero(cls, k: int) -> "CtrPolynomial":
        return cls(k)

    @classmethod
    def constant(cls, k: int, value: Coefficient) -> "CtrPolynomial":
        return cls(k, {(0,) * k: value})

    @classmethod
    def variable(cls, k: int, i: int) -> "CtrPolynomial":
        exponent = [0] * k
        exponent[i] = 1
        return cls(k, {tuple(exponent): 1})

    @classmethod
    def monomial(cls, exponent: Sequence[int], coefficient: Coefficient = 1) -> "CtrPolynomial":
        return cls(len(exponent), {tuple(exponent): coefficient})

    @classmethod
    def click_product(cls, clicks: Sequence[int], misses: Sequence[int]) -> "CtrPolynomial":
        """Π_j μ_j^{a_j} (1 − μ_j)^{b_j}, expanded binomially."""
        k = len(clicks)
        terms: Dict[Exponent, Coefficient] = {tuple(clicks): 1}
        for j, b in enumerate(misses):
            if b == 0:
                continue
            expanded: Dict[Exponent, Coefficient] = {}
            for key, value in terms.items():
                for m in range(b + 1):
                    shifted = list(key)
                    shifted[j] += m
                    shifted = tuple(shifted)
                    expanded[shifted] = expanded.get(shifted, 0) + value * comb(b, m) * (-1) ** m
            terms = expanded
        return cls(k, terms)

    def promote(self, item) -> "CtrPolynomial":
        if isinstance(item, CtrPolynomial):
            if item.k != self.k:
                raise ConfigurationError(f"Polynomials over {self.k} and {item.k} variables do not mix")
            return item
        if not is_scalar(item):
            raise ConfigurationError(f"Cannot combine a polynomial with {type(item).__name__}")
        return CtrPolynomial.constant(self.k, item)

    # Arithmetic

    def __eq__(self, other):
        try:
            other = self.promote(other)
        except ConfigurationError:
            return NotImplemented
        return self.cs == other.cs

    def __hash__(self):
        return hash((self.k, tuple(sorted(self.cs.items()))))

    def __add__(self, other):
        other = self.promote(other)
        cs = dict(self.cs)
        for key, value in other.cs.items():
            cs[key] = cs.get(key, 0) + value
        return CtrPolynomial(self.k, cs)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self.promote(other))

    def __rsub__(self, other):
        return self.promote(other) - self

    def __neg__(self):
        return CtrPolynomial(self.k, {key: -value for key, value in self.cs.items()})

    def __rmul__(self, r):
        if not is_scalar(r):
            return NotImplemented
        return CtrPolynomial(self.k, {key: r * value for key, value in self.cs.items()})

    def __mul__(self, other):
        if is_scalar(other):
            return self.__rmul__(other)
        other = self.promote(other)
        cs: Dict[Exponent, Coefficient] = {}
        for k1, v1 in self.cs.items():
            for k2, v2 in other.cs.items():
                key = tuple(a + b for a, b in zip(k1, k2))
                cs[key] = cs.get(key, 0) + v1 * v2
        return CtrPolynomial(self.k, cs)

    def __pow__(self, n: int):
        if n < 0:
            raise ConfigurationError("Negative powers are not polynomials")
        p = CtrPolynomial.constant(self.k, 1)
        for _ in range(n):
            p = p * self
        return p

    # Inspection

    def __bool__(self) -> bool:
        return bool(self.cs)

    def __iter__(self) -> Iterator[Tuple[Exponent, Coefficient]]:
        return iter(sorted(self.cs.items()))

    def __len__(self) -> int:
        return len(self.cs)

    def coefficient(self, exponent: Sequence[int]) -> Coefficient:
        return self.cs.get(tuple(exponent), 0)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(key) for key in self.cs), default=-1)

    def monomials(self) -> List[Exponent]:
        return sorted(self.cs)

    @property
    def exact(self) -> bool:
        return all(isinstance(v, (int, Fraction)) for v in self.cs.values())

    def evaluate(self, mu: Sequence[float]):
        """Value at μ; exact when μ and every coefficient are rational."""
        if len(mu) != self.k:
            raise ConfigurationError(f"Expected {self.k} CTRs, got {len(mu)}")
        total = 0
        for key, value in self.cs.items():
            term = value
            for m, a in zip(mu, key):
                if a:
                    term = term * m ** a
            total = total + term
        return total

    def evaluate_many(self, mu: np.ndarray) -> np.ndarray:
        """Float evaluation at every row of an (n, k) array."""
        mu = np.asarray(mu, dtype=float)
        if not self.cs:
            return np.zeros(mu.shape[0])
        keys = np.array(list(self.cs), dtype=float)
        values = np.array([float(v) for v in self.cs.values()])
        return (mu[:, None, :] ** keys[None, :, :]).prod(axis=2) @ values

    def map_coefficients(self, fn) -> "CtrPolynomial":
        return CtrPolynomial(self.k, {key: fn(value) for key, value in self.cs.items()})

    # Serialization

    def to_records(self) -> List[dict]:
        """(exponent vector, numerator, denominator) per term; floats become exact ratios."""
        records = []
        for key, value in self:
            ratio = Fraction(value)
            records.append({"exponent": list(key), "numerator": ratio.numerator, "denominator": ratio.denominator})
        return records

    @classmethod
    def from_records(cls, k: int, records: Iterable[dict]) -> "CtrPolynomial":
        cs: Dict[Exponent, Coefficient] = {}
        for record in records:
            key = tuple(record["exponent"])
            cs[key] = cs.get(key, 0) + Fraction(record["numerator"], record["denominator"])
        return cls(k, cs)

    def __str__(self) -> str:
        if not self.cs:
            return "0"
        terms = []
        for key, value in self:
            factors = []
            for i, a in enumerate(key):
                if a == 1:
                    factors.append(f"mu{i}")
                elif a > 1:
                    factors.append(f"mu{i}^{a}")
            s = "*".join(factors)
            if not s:
                terms.append(str(value))
            elif value == 1:
                terms.append(s)
            elif value == -1:
                terms.append(f"-{s}")
            else:
                terms.append(f"{value}*{s}")
        return " + ".join(terms).replace("+ -", "- ")

    __repr__ = __str__
