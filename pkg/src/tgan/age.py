"""Thermometer age codes, age-difference codes and the cosine age-scaling factor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_LENGTH = 1000
DEFAULT_MAX_AGE = 100.0

ASP_MODES = ("literal", "complement")


@dataclass(frozen=True)
class AgeCode:
    bits: np.ndarray
    age_years: float
    max_age: float = DEFAULT_MAX_AGE

    @property
    def length(self) -> int:
        return int(self.bits.shape[0])

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class AgeDiffCode:
    values: np.ndarray

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


def n_ones(age_years: float, length: int = DEFAULT_LENGTH, max_age: float = DEFAULT_MAX_AGE) -> int:
    """Number of leading ones for ``age_years`` (round half up)."""
    # round to 9 places first so 0.15 * 1000 / 100 counts as 1.5, not 1.4999...
    x = round(age_years * length / max_age, 9)
    return int(math.floor(x + 0.5))


def encode_age(age_years: float, length: int = DEFAULT_LENGTH, max_age: float = DEFAULT_MAX_AGE) -> AgeCode:
    if length < 1:
        raise ValueError(f"code length must be >= 1, got {length}")
    if not (0.0 <= age_years <= max_age):
        raise ValueError(f"age {age_years!r} outside [0, {max_age}]")
    bits = np.zeros(length, dtype=np.int8)
    bits[: n_ones(age_years, length, max_age)] = 1
    return AgeCode(bits=bits, age_years=float(age_years), max_age=float(max_age))


def _check_compatible(a_i: AgeCode, a_j: AgeCode) -> None:
    if a_i.length != a_j.length:
        raise ValueError(f"age code length mismatch: {a_i.length} vs {a_j.length}")
    if a_i.max_age != a_j.max_age:
        raise ValueError(f"age code max_age mismatch: {a_i.max_age} vs {a_j.max_age}")


def age_difference_code(a_i: AgeCode, a_j: AgeCode) -> AgeDiffCode:
    _check_compatible(a_i, a_j)
    return AgeDiffCode(values=a_j.bits.astype(np.int8) - a_i.bits.astype(np.int8))


def cosine_scale(a_i: AgeCode, a_j: AgeCode, mode: str = "complement") -> float:
    """Cosine similarity of two age codes (``literal``) or one minus it (``complement``)."""
    if mode not in ASP_MODES:
        raise ValueError(f"unknown asp mode {mode!r}; expected one of {ASP_MODES}")
    _check_compatible(a_i, a_j)
    ni, nj = a_i.popcount, a_j.popcount
    if ni == 0 or nj == 0:
        raise ValueError("cosine scale undefined for an all-zero age code")
    # prefix-ones codes: dot product is the shorter prefix, norms are sqrt(popcount)
    cos = min(ni, nj) / math.sqrt(ni * nj)
    return cos if mode == "literal" else 1.0 - cos


def cosine_scale_ages(age_i: float, age_j: float, mode: str = "complement",
                      length: int = DEFAULT_LENGTH, max_age: float = DEFAULT_MAX_AGE) -> float:
    return cosine_scale(encode_age(age_i, length, max_age), encode_age(age_j, length, max_age), mode)
