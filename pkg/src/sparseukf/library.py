"""Libraries of candidate basis functions for the unknown partial dynamics.

A library is an ordered, immutable list of named scalar terms evaluated at a
state/input pair. The estimated coefficient on each term is what makes the
identified model readable, so term names double as the reporting vocabulary
("x1^3", "sin(x2)", ...).
"""

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NonFiniteResult",
    "DimensionMismatch",
    "LibraryTerm",
    "FunctionLibrary",
    "TermReport",
    "CoefficientReport",
    "library_from_names",
    "make_duffing_libraries",
    "make_golf_library",
    "builtin_library",
    "eval_library",
    "approx_g",
    "dominant_terms",
    "BUILTIN_LIBRARIES",
]


class NonFiniteResult(ArithmeticError):
    """A library term evaluated to NaN or infinity."""


class DimensionMismatch(ValueError):
    """Vector lengths do not agree with the library layout."""


@dataclass(frozen=True)
class LibraryTerm:
    """A named candidate function of (state, input).

    The evaluator must be pure and accept the state either as a 1-d vector
    or as an (n_x, k) batch of column vectors, returning a matching scalar
    or length-k array.
    """

    name: str
    evaluator: Callable


@dataclass(frozen=True)
class FunctionLibrary:
    """Ordered collection of candidate terms for a system with n_x states."""

    n_x: int
    terms: tuple

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate term names in library: {names}")
        # A usable library always carries a constant, every state and the input.
        if len(self.terms) < self.n_x + 2:
            raise ValueError(
                f"library needs at least n_x + 2 = {self.n_x + 2} terms, got {len(self.terms)}"
            )

    @property
    def n_theta(self):
        return len(self.terms)

    @property
    def names(self):
        return tuple(t.name for t in self.terms)

    def evaluate(self, x, u):
        return eval_library(self, x, u)


@dataclass(frozen=True)
class TermReport:
    index: int  # 1-based, matching the theta_i naming in reports
    name: str
    value: float
    active: bool


@dataclass(frozen=True)
class CoefficientReport:
    """Per-term coefficient snapshot at one filter step."""

    step: int
    threshold: float
    entries: tuple

    @property
    def active_count(self):
        return sum(e.active for e in self.entries)

    @property
    def active_names(self):
        return tuple(e.name for e in self.entries if e.active)

    @property
    def dominant(self):
        """Entry with the largest coefficient magnitude."""
        return max(self.entries, key=lambda e: abs(e.value))


def eval_library(lib: FunctionLibrary, x, u) -> np.ndarray:
    """Evaluate every term at (x, u); component i is terms[i](x, u)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != lib.n_x:
        raise DimensionMismatch(f"state has {x.shape[0]} rows, library expects {lib.n_x}")
    rows = [np.broadcast_to(np.asarray(t.evaluator(x, u), dtype=float), x.shape[1:]) for t in lib.terms]
    out = np.stack(rows, axis=0)
    if not np.isfinite(out).all():
        bad = [t.name for t, row in zip(lib.terms, rows) if not np.isfinite(row).all()]
        raise NonFiniteResult(f"library terms {bad} evaluated to NaN/Inf")
    return out


def approx_g(lib: FunctionLibrary, theta, x, u) -> float:
    """Linear combination theta . Psi(x, u) approximating the unknown dynamics."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != lib.n_theta:
        raise DimensionMismatch(f"theta has {theta.shape[0]} entries, library has {lib.n_theta}")
    return theta @ lib.evaluate(x, u)


def dominant_terms(lib: FunctionLibrary, theta, threshold: float, step: int = 0) -> CoefficientReport:
    """Flag terms whose coefficient magnitude exceeds the sparsity barrier."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (lib.n_theta,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, library has {lib.n_theta} terms")
    entries = tuple(
        TermReport(i + 1, t.name, float(v), bool(abs(v) > threshold))
        for i, (t, v) in enumerate(zip(lib.terms, theta))
    )
    return CoefficientReport(step=step, threshold=threshold, entries=entries)


# --- term-name parsing -------------------------------------------------------

_POWER_RE = re.compile(r"^x(\d+)\^(\d+)$")
_STATE_RE = re.compile(r"^x(\d+)$")
_TRIG_RE = re.compile(r"^(sin|cos)\(x(\d+)\)$")


def _factor_evaluator(factor: str, n_x: int):
    if factor == "1":
        return lambda x, u: np.ones(np.shape(x)[1:])
    if factor == "u":
        return lambda x, u: np.broadcast_to(np.asarray(u, dtype=float), np.shape(x)[1:])
    m = _STATE_RE.match(factor)
    if m:
        i = int(m.group(1)) - 1
        if not 0 <= i < n_x:
            raise ValueError(f"state index out of range in term factor {factor!r}")
        return lambda x, u: x[i]
    m = _POWER_RE.match(factor)
    if m:
        i, k = int(m.group(1)) - 1, int(m.group(2))
        if not 0 <= i < n_x:
            raise ValueError(f"state index out of range in term factor {factor!r}")
        return lambda x, u: x[i] ** k
    m = _TRIG_RE.match(factor)
    if m:
        fn = np.sin if m.group(1) == "sin" else np.cos
        i = int(m.group(2)) - 1
        if not 0 <= i < n_x:
            raise ValueError(f"state index out of range in term factor {factor!r}")
        return lambda x, u: fn(x[i])
    raise ValueError(f"cannot parse term factor {factor!r}")


def term_from_name(name: str, n_x: int) -> LibraryTerm:
    """Build a term from a compact name like "x1^3", "sin(x2)" or "x1*x2"."""
    factors = [_factor_evaluator(f.strip(), n_x) for f in name.split("*")]
    if len(factors) == 1:
        return LibraryTerm(name, factors[0])

    def evaluator(x, u, _factors=tuple(factors)):
        out = _factors[0](x, u)
        for f in _factors[1:]:
            out = out * f(x, u)
        return out

    return LibraryTerm(name, evaluator)


def library_from_names(names: Sequence[str], n_x: int) -> FunctionLibrary:
    return FunctionLibrary(n_x=n_x, terms=tuple(term_from_name(n, n_x) for n in names))


def make_duffing_libraries():
    """The three candidate libraries used on the Duffing benchmark.

    psi1 contains the true cubic term, psi2 drops it, psi3 replaces it by a
    quadratic.
    """
    psi1 = library_from_names(
        ["1", "x1", "x2", "x2^2", "sin(x2)", "x1^3", "x1*x2", "cos(x1)", "u"], n_x=2
    )
    psi2 = library_from_names(
        ["1", "x1", "x2", "x2^2", "sin(x2)", "x1*x2", "cos(x1)", "u"], n_x=2
    )
    psi3 = library_from_names(
        ["1", "x1", "x2", "x2^2", "sin(x2)", "x1^2", "x1*x2", "cos(x1)", "u"], n_x=2
    )
    return psi1, psi2, psi3


def make_golf_library():
    """Candidate library for the golf-robot friction torque."""
    return library_from_names(
        ["1", "x1", "x2", "x2^2", "x1^3", "sin(x2)", "cos(x1)", "u"], n_x=2
    )


def _golf():
    return make_golf_library()


BUILTIN_LIBRARIES = {
    "duffing_psi1": lambda: make_duffing_libraries()[0],
    "duffing_psi2": lambda: make_duffing_libraries()[1],
    "duffing_psi3": lambda: make_duffing_libraries()[2],
    "golf_psi": _golf,
}


def builtin_library(key: str) -> FunctionLibrary:
    try:
        return BUILTIN_LIBRARIES[key]()
    except KeyError:
        raise KeyError(
            f"unknown library key {key!r}; available: {sorted(BUILTIN_LIBRARIES)}"
        ) from None
