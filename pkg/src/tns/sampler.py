"""Neighbor-index plans for recent, uniform, expanded and time-aware sampling.

Indices are 1-based recency positions: 1 is the most recent neighbor.
Plans for a single ``(node, time)`` are :class:`SamplePlan` objects; the
batched helpers at the bottom return dense ``(B, S)`` index/mask arrays for
the embedding engine.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

# relative slack when testing 1 + (s-1) r <= N under float error
INDEX_RTOL = 1e-9


@dataclass(frozen=True)
class SamplePlan:
    indices: np.ndarray
    rate: float
    budget: int

    @property
    def realized(self):
        return len(self.indices)


@dataclass(frozen=True)
class ExpansionRate:
    value: float
    pre_truncation: float
    upper: float

    @property
    def active(self):
        """True when the clamp passes gradient (raw value inside its range)."""
        return self.upper > 1.0 and 1.0 <= self.pre_truncation <= self.upper


@dataclass(frozen=True)
class Strategy:
    """Sampling strategy: ``recent``, ``uniform``, ``expanded`` (fixed rate) or ``tns``."""

    kind: str
    rate: float = 1.0

    KINDS = ("recent", "uniform", "expanded", "tns")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "expanded" and not self.rate >= 1.0:
            raise ConfigError(f"expansion rate must be >= 1, got {self.rate}")

    @classmethod
    def parse(cls, text):
        """Parse ``recent``, ``uniform``, ``tns``, ``expanded(4)`` or ``expanded:4``."""
        if isinstance(text, Strategy):
            return text
        text = str(text).strip().lower()
        m = re.fullmatch(r"expanded\s*[(:=]\s*([^)]+?)\s*\)?", text)
        if m:
            try:
                rate = float(m.group(1))
            except ValueError:
                raise ConfigError(f"bad expansion rate in {text!r}") from None
            return cls("expanded", rate)
        return cls(text)

    def __str__(self):
        if self.kind == "expanded":
            return f"expanded({self.rate:g})"
        return self.kind


def _check_budget(S):
    if S < 1:
        raise ConfigError(f"sampling budget must be >= 1, got {S}")


def recent_indices(N, S):
    _check_budget(S)
    return SamplePlan(np.arange(1, min(N, S) + 1, dtype=np.float64), 1.0, S)


def uniform_indices(N, S, rng):
    """``min(N, S)`` distinct positions drawn without replacement, sorted."""
    _check_budget(S)
    k = min(N, S)
    idx = np.sort(rng.choice(N, size=k, replace=False)) + 1 if k else np.zeros(0)
    return SamplePlan(idx.astype(np.float64), 1.0, S)


def _stride_indices(N, S, r):
    idx = 1.0 + np.arange(S) * r
    keep = idx <= N * (1.0 + INDEX_RTOL)
    return np.minimum(idx[keep], N) if N else idx[:0]


def expanded_indices(N, S, r):
    _check_budget(S)
    if not r >= 1.0:
        raise ConfigError(f"expansion rate must be >= 1, got {r}")
    return SamplePlan(_stride_indices(N, S, float(r)), float(r), S)


def rate_upper_bound(N, S):
    """Largest admissible rate ``(N-1)/(S-1)``; 1 for the degenerate cases."""
    if S <= 1 or N < S:
        return 1.0
    return (N - 1) / (S - 1)


def truncate_rate(x, N, S):
    """Clamp a raw rate into ``[1, (N-1)/(S-1)]``, or 1 when ``N < S``."""
    upper = rate_upper_bound(N, S)
    if N >= S and S > 1:
        value = min(max(1.0, float(x)), upper)
    else:
        value = 1.0
    return ExpansionRate(value, float(x), upper)


def tns_indices(rate, N, S):
    _check_budget(S)
    if not 1.0 <= rate.value <= rate_upper_bound(N, S) * (1.0 + INDEX_RTOL):
        raise ContractError(f"rate {rate.value} inconsistent with N={N}, S={S}")
    return SamplePlan(_stride_indices(N, S, rate.value), rate.value, S)


# -- batched forms -------------------------------------------------------------

def truncate_rates(raw, counts, S):
    """Vectorized :func:`truncate_rate`.

    Returns ``(value, active)`` where ``active`` marks entries whose clamp
    lets gradient through.
    """
    raw = np.asarray(raw, dtype=np.float64)
    counts = np.asarray(counts)
    if S <= 1:
        return np.ones_like(raw), np.zeros(raw.shape, dtype=bool)
    full = counts >= S
    upper = np.where(full, (counts - 1) / (S - 1), 1.0)
    value = np.where(full, np.minimum(np.maximum(raw, 1.0), upper), 1.0)
    active = full & (upper > 1.0) & (raw >= 1.0) & (raw <= upper)
    return value, active


def stride_batch(rates, counts, S):
    """``(B, S)`` positions ``1 + s*r`` with their validity mask."""
    rates = np.asarray(rates, dtype=np.float64)
    counts = np.asarray(counts)
    idx = 1.0 + np.arange(S)[None, :] * rates[:, None]
    valid = idx <= counts[:, None] * (1.0 + INDEX_RTOL)
    idx = np.where(valid, np.minimum(idx, counts[:, None]), 1.0)
    return idx, valid


def recent_batch(counts, S):
    counts = np.asarray(counts)
    idx = np.broadcast_to(np.arange(1, S + 1, dtype=np.float64), (len(counts), S)).copy()
    valid = idx <= counts[:, None]
    return np.where(valid, idx, 1.0), valid


def uniform_batch(counts, S, rng):
    B = len(counts)
    idx = np.ones((B, S))
    valid = np.zeros((B, S), dtype=bool)
    for b, n in enumerate(counts):
        plan = uniform_indices(int(n), S, rng)
        idx[b, :plan.realized] = plan.indices
        valid[b, :plan.realized] = True
    return idx, valid


def plan_batch(strategy, counts, S, rng=None):
    """Index plan for every non-learned strategy."""
    if strategy.kind == "recent":
        return recent_batch(counts, S)
    if strategy.kind == "expanded":
        return stride_batch(np.full(len(counts), strategy.rate), counts, S)
    if strategy.kind == "uniform":
        if rng is None:
            raise ContractError("uniform sampling needs an explicit random source")
        return uniform_batch(counts, S, rng)
    raise ContractError(f"{strategy.kind} plans need learned rates; use stride_batch")
