"""Planted-period interaction streams.

Users (nodes ``0..U-1``) interact with items (nodes ``U..U+I-1``).  Each user
``u`` has a period ``p_u``.  Its stream is cut into consecutive bursts of
exactly ``p_u`` events; all events of a burst carry the same signal value
``v ~ N(0, 1)`` in edge-feature column 0 (plus small per-event noise), so
inside a burst the events are redundant copies of one another.  The label of
an event is ``1`` iff the sum of the signal values of the user's
``label_bursts`` most recent bursts (strictly before the event) is positive.

Sampling positions ``1, 1 + p_u, 1 + 2 p_u, ...`` therefore hits one event of
each of the latest bursts whatever the phase, which makes ``p_u`` the ideal
expansion rate for user ``u`` when the budget equals ``label_bursts``.
Periods are drawn per user, so the ideal rate differs across nodes.

The destination item of each event is drawn from community ``label`` (items
are split into two halves), so future edges are predictable from the same
signal.  When ``expose_period`` is set, user node features are the one-hot
period, letting a rate module condition on it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .graph_store import TemporalGraph


@dataclass
class SyntheticConfig:
    num_users: int = 100
    num_items: int = 50
    num_events: int = 50_000
    p_max: int = 8
    periods: list | None = None
    label_bursts: int = 5
    noise: float = 0.1
    d_e: int = 4
    expose_period: bool = True
    seed: int = 0

    def validate(self):
        if self.num_events < 1:
            raise ConfigError("num_events must be >= 1")
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.num_items < 2:
            raise ConfigError("num_items must be >= 2 (two communities)")
        if self.p_max < 1:
            raise ConfigError("p_max must be >= 1")
        if self.label_bursts < 1:
            raise ConfigError("label_bursts must be >= 1")
        if self.d_e < 1:
            raise ConfigError("d_e must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.periods is not None:
            if len(self.periods) != self.num_users:
                raise ConfigError("periods must list one period per user")
            if min(self.periods) < 1 or max(self.periods) > self.p_max:
                raise ConfigError(f"periods must lie in [1, {self.p_max}]")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticData:
    graph: TemporalGraph
    periods: np.ndarray
    config: SyntheticConfig

    @property
    def labels(self):
        return self.graph.labels

    def period_summary(self):
        vals, counts = np.unique(self.periods, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def gen_synthetic(config, rng=None):
    cfg = config.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    U, I = cfg.num_users, cfg.num_items
    if cfg.periods is not None:
        periods = np.asarray(cfg.periods, dtype=np.int64)
    else:
        periods = rng.integers(1, cfg.p_max + 1, size=U)
    per_user = np.full(U, cfg.num_events // U)
    per_user[: cfg.num_events % U] += 1
    half = I // 2
    community_size = np.array([half, I - half])
    community_base = np.array([U, U + half])

    src, dst, ts, feats, labels = [], [], [], [], []
    for u in range(U):
        n, p = int(per_user[u]), int(periods[u])
        if n == 0:
            continue
        burst = np.arange(n) // p
        values = rng.standard_normal(burst[-1] + 1)
        # label of event j uses bursts up to that of event j-1
        csum = np.r_[0.0, np.cumsum(values)]
        prev = burst - (np.arange(n) % p == 0)   # burst of event j-1 (-1 for j=0)
        lo = np.maximum(prev - cfg.label_bursts + 1, 0)
        window = np.where(prev >= 0, csum[prev + 1] - csum[lo], 0.0)
        lab = (window > 0).astype(np.float64)
        f = cfg.noise * rng.standard_normal((n, cfg.d_e))
        f[:, 0] += values[burst]
        c = lab.astype(np.int64)
        items = community_base[c] + rng.integers(0, community_size[c])
        t = rng.uniform(0, U) + np.cumsum(rng.exponential(U, size=n))
        src.append(np.full(n, u))
        dst.append(items)
        ts.append(t)
        feats.append(f)
        labels.append(lab)

    src, dst = np.concatenate(src), np.concatenate(dst)
    ts, feats, labels = np.concatenate(ts), np.vstack(feats), np.concatenate(labels)
    order = np.argsort(ts, kind="stable")
    node_feats = np.zeros((U + I, cfg.p_max if cfg.expose_period else 0))
    if cfg.expose_period:
        node_feats[np.arange(U), periods - 1] = 1.0
    graph = TemporalGraph(src[order], dst[order], ts[order], feats[order],
                          labels=labels[order], node_features=node_feats, num_nodes=U + I)
    return SyntheticData(graph, periods, cfg)
