"""Messages at fractional neighbor indices and their gradients.

The triangular kernel ``max(0, 1 - |n - o|)`` touches at most the two rows
``floor(n)`` and ``floor(n) + 1``, so every routine here works on those two
gathered rows.  The gradient with respect to ``n`` is the projection of the
upstream gradient on ``m(floor(n)+1) - m(floor(n))``; at integral ``n`` the
kernel has a kink and the subgradient is taken as 0.

Batched kernels (``weights``, ``blend``, ``index_grad``) operate on leading
batch axes and are shared by the single-owner API and the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def weights(idx, valid=None):
    """Split fractional indices into ``(lo, w_lo, w_hi, fractional)``.

    ``lo`` is ``floor(n)`` as int; the partner row is ``lo + 1``.
    """
    idx = np.asarray(idx, dtype=np.float64)
    lo_f = np.floor(idx)
    w_hi = idx - lo_f
    w_lo = 1.0 - w_hi
    frac = w_hi > 0
    if valid is not None:
        frac &= valid
        w_lo = np.where(valid, w_lo, 0.0)
        w_hi = np.where(valid, w_hi, 0.0)
    return lo_f.astype(np.int64), w_lo, w_hi, frac


def blend(m_lo, m_hi, w_lo, w_hi):
    """Interpolated messages; ``m_hi`` may be None when no index is fractional."""
    out = w_lo[..., None] * m_lo
    if m_hi is not None:
        out = out + w_hi[..., None] * m_hi
    return out


def index_grad(upstream, m_lo, m_hi, frac):
    """dL/dn for each index: ``u . (m_hi - m_lo)`` where fractional, else 0."""
    if m_hi is None:
        return np.zeros(upstream.shape[:-1])
    g = np.einsum("...d,...d->...", upstream, m_hi - m_lo)
    return np.where(frac, g, 0.0)


def rate_grad(index_grads, valid=None):
    """Chain ``n_s = 1 + (s-1) r`` back to the rate: sum_s dL/dn_s * (s-1)."""
    g = np.asarray(index_grads)
    if valid is not None:
        g = np.where(valid, g, 0.0)
    return g @ np.arange(g.shape[-1], dtype=np.float64)


# -- single-owner API ----------------------------------------------------------

@dataclass(frozen=True)
class MessageMatrix:
    """Rows for a contiguous range of recency positions.

    ``rows[k]`` is the message at position ``first + k``; ``count`` is the
    owner's full neighbor count N (positions beyond the window still exist,
    they are just not materialized).
    """

    rows: np.ndarray
    first: int = 1
    count: int | None = None
    owner: tuple | None = None

    @property
    def N(self):
        return self.count if self.count is not None else self.first + len(self.rows) - 1

    def row(self, o):
        k = o - self.first
        if not 0 <= k < len(self.rows):
            raise ContractError(f"position {o} outside materialized window "
                                f"[{self.first}, {self.first + len(self.rows) - 1}]")
        return self.rows[k]


@dataclass(frozen=True)
class InterpTape:
    index: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray

    @property
    def integer_hit(self):
        return self.w_hi == 0


def _as_indices(indices):
    return np.asarray(getattr(indices, "indices", indices), dtype=np.float64).reshape(-1)


def interpolate(messages, indices):
    """Evaluate messages at (possibly fractional) indices.

    Returns ``(sampled, tape)`` with ``sampled`` of shape ``(K, d_m)``.
    """
    n = _as_indices(indices)
    N = messages.N
    if n.size and (n.min() < 1 or n.max() > N):
        raise ContractError(f"index outside [1, {N}]")
    lo, w_lo, w_hi, frac = weights(n)
    # hi row only needed (and only guaranteed present) where w_hi > 0
    hi = np.where(frac, lo + 1, lo)
    m_lo = np.stack([messages.row(o) for o in lo]) if n.size else messages.rows[:0]
    m_hi = np.stack([messages.row(o) for o in hi]) if n.size else messages.rows[:0]
    out = blend(m_lo, m_hi, w_lo, w_hi)
    return out, InterpTape(n, lo, hi, w_lo, w_hi)


def _check_upstream(tape, upstream, messages=None):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 2 or upstream.shape[0] != len(tape.index):
        raise ContractError(f"upstream shape {upstream.shape} does not match "
                            f"{len(tape.index)} sampled messages")
    if messages is not None and upstream.shape[1] != messages.rows.shape[1]:
        raise ContractError("upstream width differs from message width")
    return upstream


def backward_messages(tape, upstream, messages):
    """Gradient with respect to every materialized row of ``messages``."""
    upstream = _check_upstream(tape, upstream, messages)
    grad = np.zeros_like(messages.rows, dtype=np.float64)
    np.add.at(grad, tape.lo - messages.first, tape.w_lo[:, None] * upstream)
    np.add.at(grad, tape.hi - messages.first, tape.w_hi[:, None] * upstream)
    return grad


def backward_indices(tape, messages, upstream):
    """dL/dn per queried index (0 at integral indices)."""
    upstream = _check_upstream(tape, upstream, messages)
    if not len(tape.index):
        return np.zeros(0)
    m_lo = np.stack([messages.row(o) for o in tape.lo])
    m_hi = np.stack([messages.row(o) for o in tape.hi])
    return index_grad(upstream, m_lo, m_hi, tape.w_hi > 0)


def index_move_sign(tape, messages, upstream):
    """+1 contracts the index toward floor(n), -1 expands it toward floor(n)+1."""
    return np.sign(backward_indices(tape, messages, upstream)).astype(np.int64)
