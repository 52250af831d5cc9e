"""Temporal embeddings with mean aggregation and learned expansion rates.

Parameters live in a flat ``dict[str, ndarray]``:

``time.omega``, ``time.beta``
    shared cosine time encoding.
``l{l}.W1 l{l}.b1 l{l}.W2 l{l}.b2``
    mean-aggregation layer ``l`` (1-based).
``l{l}.rate.W1 ... l{l}.rate.b2``
    expansion-learning module of layer ``l`` (only for the ``tns`` strategy).

:class:`TemporalEmbedder` runs batched forward passes that record a tape and
replays it in :meth:`TemporalEmbedder.backward` to produce gradients for
every parameter.  All matrices use the row-vector convention
``y = x @ W.T + b``.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import interp
from .errors import ConfigError, ContractError
from .sampler import (ExpansionRate, Strategy, plan_batch, rate_upper_bound, recent_batch,
                      stride_batch, truncate_rate, truncate_rates)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_v: int
    d_e: int
    d_t: int = 16
    d_h: int = 100
    d_o: int = 100
    d_h_rate: int | None = None
    num_layers: int = 1
    budget: int = 10
    strategy: Strategy = field(default_factory=lambda: Strategy("recent"))
    sigma_init: float = 1e-5

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.num_layers not in (1, 2):
            raise ConfigError(f"num_layers must be 1 or 2, got {self.num_layers}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.d_t < 1:
            raise ConfigError("d_t must be >= 1")
        if not self.sigma_init > 0:
            raise ConfigError("sigma_init must be > 0")
        if self.d_h_rate is None:
            self.d_h_rate = self.d_h

    def d_in(self, l):
        return self.d_v if l == 1 else self.d_o

    def d_m(self, l):
        return self.d_in(l) + self.d_e + self.d_t

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["strategy"] = str(self.strategy)
        return d


# -- parameters ----------------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def init_params(config, rng):
    """Glorot-uniform weights, zero biases; the rate module's output layer
    starts at ``W ~ N(0, sigma_init^2)``, ``b = 1`` so initial rates sit at 1."""
    c = config
    p = {
        "time.omega": 1.0 / 10 ** np.linspace(0, 9, c.d_t),
        "time.beta": np.zeros(c.d_t),
    }
    for l in range(1, c.num_layers + 1):
        d_i, d_m = c.d_in(l), c.d_m(l)
        p[f"l{l}.W1"] = _glorot(rng, c.d_h, d_m)
        p[f"l{l}.b1"] = np.zeros(c.d_h)
        p[f"l{l}.W2"] = _glorot(rng, c.d_o, d_i + c.d_h)
        p[f"l{l}.b2"] = np.zeros(c.d_o)
        if c.strategy.kind == "tns":
            p[f"l{l}.rate.W1"] = _glorot(rng, c.d_h_rate, d_m)
            p[f"l{l}.rate.b1"] = np.zeros(c.d_h_rate)
            p[f"l{l}.rate.W2"] = rng.normal(0.0, c.sigma_init, size=(1, d_i + c.d_h_rate))
            p[f"l{l}.rate.b2"] = np.ones(1)
    return p


@dataclass
class AggregatorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class LayerParams(AggregatorParams):
    rate: AggregatorParams | None = None
    layer: int = 1


def layer_params(params, l):
    """View of one layer's arrays (no copies)."""
    pre = f"l{l}."
    rate = None
    if pre + "rate.W1" in params:
        rate = AggregatorParams(*(params[pre + "rate." + k] for k in ("W1", "b1", "W2", "b2")))
    return LayerParams(params[pre + "W1"], params[pre + "b1"], params[pre + "W2"],
                       params[pre + "b2"], rate=rate, layer=l)


def save_params(params, path, meta=None):
    """JSON checkpoint: per-array shape header plus little-endian float64 payload."""
    doc = {"format": "tns-params", "version": CHECKPOINT_VERSION, "meta": meta or {},
           "params": {}}
    for name in sorted(params):
        a = np.ascontiguousarray(params[name], dtype="<f8")
        doc["params"][name] = {"shape": list(a.shape), "dtype": "<f8",
                               "data": base64.b64encode(a.tobytes()).decode("ascii")}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_params(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "tns-params":
        raise ContractError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for name, rec in doc["params"].items():
        if rec["dtype"] != "<f8":
            raise ContractError(f"{path}: {name} has dtype {rec['dtype']}")
        a = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f8")
        params[name] = a.reshape(rec["shape"]).astype(np.float64)
    return params, doc.get("meta", {})


# -- primitives ----------------------------------------------------------------

def time_encode(params, dt):
    """``cos(omega * dt + beta)`` elementwise; ``dt`` may be any array shape."""
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ContractError("time differences must be non-negative")
    return np.cos(dt[..., None] * params["time.omega"] + params["time.beta"])


def aggregate_forward(W1, b1, W2, b2, h_self, mean):
    """Batched mean-aggregation head on precomputed message means."""
    pre = mean @ W1.T + b1
    hhat = np.maximum(pre, 0.0)
    cat = np.concatenate([h_self, hhat], axis=-1)
    out = cat @ W2.T + b2
    return out, (pre, cat)


def aggregate_backward(W1, W2, cache, mean, dout):
    """Returns ``(dW1, db1, dW2, db2, dh_self, dmean)``."""
    pre, cat = cache
    d_i = cat.shape[-1] - pre.shape[-1]
    dW2 = dout.T @ cat
    db2 = dout.sum(0)
    dcat = dout @ W2
    dpre = dcat[:, d_i:] * (pre > 0)
    dW1 = dpre.T @ mean
    db1 = dpre.sum(0)
    return dW1, db1, dW2, db2, dcat[:, :d_i], dpre @ W1


def masked_mean(rows, valid):
    """Mean over valid rows; zero vector when nothing is valid."""
    cnt = valid.sum(-1)
    s = (rows * valid[..., None]).sum(-2)
    return s / np.maximum(cnt, 1)[..., None]


def mean_aggregate(layer, h_self, sampled):
    """``W2 (h_self || ReLU(W1 mean(sampled) + b1)) + b2`` for one node."""
    h_self = np.asarray(h_self, dtype=np.float64)
    sampled = np.asarray(sampled, dtype=np.float64).reshape(-1, layer.W1.shape[1])
    if h_self.shape[-1] + layer.W1.shape[0] != layer.W2.shape[1]:
        raise ContractError("h_self width does not match W2")
    mean = sampled.mean(0) if len(sampled) else np.zeros(layer.W1.shape[1])
    out, _ = aggregate_forward(layer.W1, layer.b1, layer.W2, layer.b2,
                               h_self[None], mean[None])
    return out[0]


def learn_rate(layer, h_self, recent_messages, N, S):
    """Expansion rate from the rate module on the ``min(S, N)`` most recent messages."""
    if layer.rate is None:
        raise ContractError("layer has no expansion-learning module")
    raw = mean_aggregate(layer.rate, h_self, recent_messages)
    return truncate_rate(float(raw[0]), N, S)


def build_messages(graph, params, i, t, window, h_prev=None):
    """Rows ``h_prev(nbr, t) || e || phi(t - t_o)`` for recency positions in ``window``.

    ``h_prev`` maps ``(node, t)`` to the previous-layer embedding; raw node
    features when omitted.
    """
    N = graph.neighbor_count(i, t)
    lo, hi = window
    if lo < 1 or hi > N or lo > hi:
        raise ContractError(f"window [{lo}, {hi}] outside [1, {N}]")
    pos = np.arange(lo, hi + 1)
    nbr, eid, tn = graph.positions(np.array([i]), np.array([N]), pos[None])
    nbr, eid, tn = nbr[0], eid[0], tn[0]
    if h_prev is None:
        h = graph.node_features[nbr]
    else:
        h = np.stack([np.asarray(h_prev(int(j), t), dtype=np.float64) for j in nbr])
    rows = np.concatenate([h, graph.edge_features[eid], time_encode(params, t - tn)], axis=1)
    return interp.MessageMatrix(rows, first=lo, count=N, owner=(i, t))


# -- batched engine ----------------------------------------------------------------

def _unique_pairs(nodes, times):
    key = np.column_stack([nodes.astype(np.float64), times])
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    return uniq[:, 0].astype(np.int64), uniq[:, 1], inv.reshape(-1)


@dataclass
class _Block:
    """Messages on one ``(B, K)`` grid of recency positions."""

    pos: np.ndarray
    mask: np.ndarray
    dt: np.ndarray
    msg: np.ndarray
    h_self: np.ndarray | None
    lower: object = None        # tape of layer l-1 (None at l=1)
    inverse: np.ndarray | None = None


@dataclass
class LayerTape:
    layer: int
    nodes: np.ndarray
    times: np.ndarray
    counts: np.ndarray
    blocks: list
    idx: np.ndarray
    valid: np.ndarray
    frac: np.ndarray
    col_lo: np.ndarray          # column of floor(n) across the concatenated blocks
    col_hi: np.ndarray          # column of floor(n) + 1 (equals col_lo where n is integral)
    weights: np.ndarray         # (B, columns) interpolation weight of every gathered row
    mean: np.ndarray
    agg_cache: tuple
    rate_raw: np.ndarray | None = None
    rate: np.ndarray | None = None
    rate_active: np.ndarray | None = None
    rate_mean: np.ndarray | None = None
    rate_cache: tuple | None = None
    index_grads: np.ndarray | None = None


@dataclass
class Tape:
    """Top-level forward record consumed once by ``backward``."""

    root: LayerTape
    fingerprint: tuple
    consumed: bool = False

    def layers(self):
        """Every :class:`LayerTape` in the recursion, top layer first."""
        out, stack = [], [self.root]
        while stack:
            t = stack.pop()
            out.append(t)
            stack.extend(b.lower for b in t.blocks if b.lower is not None)
        return out


def _fingerprint(params):
    return tuple((k, hash(np.ascontiguousarray(v).tobytes())) for k, v in sorted(params.items()))


def _distinct_positions(pos, need):
    """Per-row distinct entries of ``pos`` where ``need``, ascending and packed left.

    Returns ``(upos, umask, col)``; ``col`` is the column of every entry in
    ``upos`` (meaningless where ``need`` is False).
    """
    B = pos.shape[0]
    big = np.iinfo(np.int64).max
    key = np.where(need, pos, big)
    order = np.argsort(key, axis=1, kind="stable")
    sk = np.take_along_axis(key, order, 1)
    first = sk < big
    first[:, 1:] &= sk[:, 1:] != sk[:, :-1]
    cid = np.cumsum(first, axis=1) - 1
    n = first.sum(1)
    U = int(n.max()) if B else 0
    upos = np.ones((B, U), dtype=np.int64)
    r, c = np.nonzero(first)
    upos[r, cid[r, c]] = sk[r, c]
    col = np.empty_like(cid)
    np.put_along_axis(col, order, np.maximum(cid, 0), 1)
    return upos, np.arange(U)[None, :] < n[:, None], col


def _scatter(B, width, entries):
    """Dense ``(B, width)`` sums of ``(col, weight, mask)`` entries."""
    rows = np.arange(B)[:, None]
    flat = [(rows * width + col)[m] for col, _, m in entries]
    vals = [w[m] for _, w, m in entries]
    out = np.bincount(np.concatenate(flat), np.concatenate(vals), minlength=B * width)
    return out.reshape(B, width)


def _weighted_rows(w, m):
    """``sum_k w[b, k] * m[b, k, :]`` as a batched product."""
    return (w[:, None, :] @ m)[:, 0, :]


def _project(m, u):
    """``m[b, k, :] . u[b, :]`` for every row."""
    return (m @ u[:, :, None])[..., 0]


class TemporalEmbedder:
    """Batched L-layer temporal embedding with explicit reverse pass.

    Each layer gathers messages once per distinct recency position of a
    request: interpolation rows that coincide with each other or with the
    recent rows read by the rate module share one message.
    """

    def __init__(self, graph, config):
        if config.d_v != graph.d_v or config.d_e != graph.d_e:
            raise ConfigError(f"config dims (d_v={config.d_v}, d_e={config.d_e}) do not "
                              f"match graph (d_v={graph.d_v}, d_e={graph.d_e})")
        self.graph = graph
        self.config = config

    # forward ----------------------------------------------------------------

    def forward(self, params, nodes, times, rng=None):
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        h, tape = self._layer(params, self.config.num_layers, nodes, times, rng)
        return h, Tape(tape, _fingerprint(params))

    def _gather(self, params, l, nodes, times, counts, pos, mask, include_self, rng):
        g = self.graph
        nbr, eid, tn = g.positions(nodes, counts, pos)
        dt = np.where(mask, times[:, None] - tn, 0.0)
        lower = inverse = None
        if l == 1:
            h_self = g.node_features[nodes] if include_self else None
            h = g.node_features[nbr]
        else:
            q_nodes = [nodes, nbr[mask]] if include_self else [nbr[mask]]
            q_times = [times] if include_self else []
            q_times.append(np.broadcast_to(times[:, None], mask.shape)[mask])
            un, ut, inverse = _unique_pairs(np.concatenate(q_nodes), np.concatenate(q_times))
            H, lower = self._layer(params, l - 1, un, ut, rng)
            rows = H[inverse]
            h_self = rows[:len(nodes)] if include_self else None
            h = np.zeros(mask.shape + (H.shape[1],))
            h[mask] = rows[len(nodes):] if include_self else rows
        omega, beta = params["time.omega"], params["time.beta"]
        d_i = self.config.d_in(l)
        off = d_i + g.d_e
        m = np.empty(mask.shape + (off + len(omega),))
        m[..., :d_i] = h
        m[..., d_i:off] = g.edge_features[eid]
        phi = m[..., off:]
        np.multiply(dt[..., None], omega, out=phi)
        phi += beta
        np.cos(phi, out=phi)
        m[~mask] = 0.0
        return _Block(pos, mask, dt, m, h_self, lower, inverse)

    def _layer(self, params, l, nodes, times, rng):
        if l == 0:
            return self.graph.node_features[nodes], None
        cfg = self.config
        S = cfg.budget
        pre = f"l{l}."
        counts = self.graph.count_before(nodes, times)
        kind = cfg.strategy.kind
        if kind in ("recent", "tns"):
            idx, valid = recent_batch(counts, S)
        else:
            idx, valid = plan_batch(cfg.strategy, counts, S, rng)
        lo, w_lo, w_hi, frac = interp.weights(idx, valid)
        if kind in ("recent", "tns"):
            # positions 1..S on a fixed grid: column = position - 1
            blocks = [self._gather(params, l, nodes, times, counts, lo, valid, True, rng)]
            col_lo = lo - 1
        else:
            upos, umask, col = _distinct_positions(np.hstack([lo, lo + 1]),
                                                   np.hstack([valid, frac]))
            blocks = [self._gather(params, l, nodes, times, counts, upos, umask, True, rng)]
            col_lo = col[:, :S]
        col_hi = col_lo + 1 if kind in ("recent", "tns") else col[:, S:]
        h_self = blocks[0].h_self

        rate_fields = {}
        if kind == "tns":
            rate_mean = masked_mean(blocks[0].msg, valid)
            raw, rcache = aggregate_forward(params[pre + "rate.W1"], params[pre + "rate.b1"],
                                            params[pre + "rate.W2"], params[pre + "rate.b2"],
                                            h_self, rate_mean)
            raw = raw[:, 0]
            r, active = truncate_rates(raw, counts, S)
            idx, valid = stride_batch(r, counts, S)
            lo, w_lo, w_hi, frac = interp.weights(idx, valid)
            hi = lo + 1
            # rows beyond the recent window go to one extra block
            need = np.hstack([valid & (lo > S), frac & (hi > S)])
            col_lo, col_hi = lo - 1, hi - 1
            if need.any():
                upos, umask, col = _distinct_positions(np.hstack([lo, hi]), need)
                blocks.append(self._gather(params, l, nodes, times, counts, upos, umask,
                                           False, rng))
                col_lo = np.where(need[:, :S], S + col[:, :S], col_lo)
                col_hi = np.where(need[:, S:], S + col[:, S:], col_hi)
            rate_fields = dict(rate_raw=raw, rate=r, rate_active=active,
                               rate_mean=rate_mean, rate_cache=rcache)
        col_hi = np.where(frac, col_hi, col_lo)

        width = sum(b.msg.shape[1] for b in blocks)
        W = _scatter(len(nodes), width, [(col_lo, w_lo, valid), (col_hi, w_hi, frac)])
        mean = np.zeros((len(nodes), blocks[0].msg.shape[2]))
        k = 0
        for b in blocks:
            K = b.msg.shape[1]
            mean += _weighted_rows(W[:, k:k + K], b.msg)
            k += K
        mean /= np.maximum(valid.sum(1), 1)[:, None]
        out, cache = aggregate_forward(params[pre + "W1"], params[pre + "b1"],
                                       params[pre + "W2"], params[pre + "b2"], h_self, mean)
        tape = LayerTape(l, nodes, times, counts, blocks, idx, valid, frac, col_lo, col_hi,
                         W, mean, cache, **rate_fields)
        return out, tape

    # backward ----------------------------------------------------------------

    def backward(self, params, tape, dh, grads=None):
        """Accumulate parameter gradients of ``sum(dh * h)`` into ``grads``."""
        if tape.consumed:
            raise ContractError("tape already consumed by a backward pass")
        if _fingerprint(params) != tape.fingerprint:
            raise ContractError("parameters changed since the forward pass (stale tape)")
        dh = np.asarray(dh, dtype=np.float64)
        if dh.shape != (len(tape.root.nodes), self.config.d_o):
            raise ContractError(f"upstream shape {dh.shape} does not match embeddings")
        if grads is None:
            grads = {k: np.zeros_like(v) for k, v in params.items()}
        self._layer_backward(params, tape.root, dh, grads)
        tape.consumed = True
        return grads

    def _layer_backward(self, params, t, dout, grads):
        pre = f"l{t.layer}."
        dW1, db1, dW2, db2, dh_self, dmean = aggregate_backward(
            params[pre + "W1"], params[pre + "W2"], t.agg_cache, t.mean, dout)
        grads[pre + "W1"] += dW1
        grads[pre + "b1"] += db1
        grads[pre + "W2"] += dW2
        grads[pre + "b2"] += db2

        # message gradients are rank one per request: row weight times a
        # per-request vector, kept in that form as (coef, vec) terms
        u = dmean / np.maximum(t.valid.sum(1), 1)[:, None]
        terms, k = [], 0
        for b in t.blocks:
            K = b.msg.shape[1]
            terms.append([(t.weights[:, k:k + K], u)])
            k += K

        if t.rate is not None:
            if t.frac.any():
                proj = np.hstack([_project(b.msg, u) for b in t.blocks])
                dn = np.take_along_axis(proj, t.col_hi, 1) - np.take_along_axis(proj, t.col_lo, 1)
                dn = np.where(t.frac, dn, 0.0)
            else:
                dn = np.zeros(t.valid.shape)
            t.index_grads = dn
            draw = interp.rate_grad(dn, t.valid) * t.rate_active
            rW1, rW2 = params[pre + "rate.W1"], params[pre + "rate.W2"]
            rdW1, rdb1, rdW2, rdb2, rdh_self, rdmean = aggregate_backward(
                rW1, rW2, t.rate_cache, t.rate_mean, draw[:, None])
            grads[pre + "rate.W1"] += rdW1
            grads[pre + "rate.b1"] += rdb1
            grads[pre + "rate.W2"] += rdW2
            grads[pre + "rate.b2"] += rdb2
            dh_self = dh_self + rdh_self
            rvalid = t.blocks[0].mask
            terms[0].append((rvalid / np.maximum(rvalid.sum(1), 1)[:, None], rdmean))

        for k, b in enumerate(t.blocks):
            self._block_backward(params, t, b, terms[k], dh_self if k == 0 else None, grads)

    def _block_backward(self, params, t, b, terms, dh_self, grads):
        """Message gradient of ``b`` is ``sum coef[:, k, None] * vec[:, None, :]``
        over ``terms``; every coef is zero on masked rows."""
        omega, beta = params["time.omega"], params["time.beta"]
        d_i = self.config.d_in(t.layer)
        off = d_i + self.config.d_e
        sin = np.multiply(b.dt[..., None], omega)
        sin += beta
        np.sin(sin, out=sin)
        for coef, vec in terms:
            v = vec[:, off:]
            grads["time.omega"] -= np.sum(v * _weighted_rows(coef * b.dt, sin), 0)
            grads["time.beta"] -= np.sum(v * _weighted_rows(coef, sin), 0)
        if b.lower is None:
            return
        dm = sum(coef[..., None] * vec[:, None, :d_i] for coef, vec in terms)
        parts = [dh_self] if dh_self is not None else []
        parts.append(dm[b.mask])
        dH = np.zeros((b.inverse.max() + 1 if len(b.inverse) else 0, d_i))
        np.add.at(dH, b.inverse, np.concatenate(parts))
        self._layer_backward(params, b.lower, dH, grads)


# -- single-request API --------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingRequest:
    node: int
    time: float
    num_layers: int = 1
    strategy: Strategy | str = "recent"
    budget: int = 10


def config_from_params(params, graph, num_layers=1, strategy="recent", budget=10):
    """Recover a :class:`ModelConfig` from parameter shapes."""
    d_h = params["l1.W1"].shape[0]
    d_h_rate = params["l1.rate.W1"].shape[0] if "l1.rate.W1" in params else None
    return ModelConfig(d_v=graph.d_v, d_e=graph.d_e, d_t=params["time.omega"].size,
                       d_h=d_h, d_o=params["l1.W2"].shape[0], d_h_rate=d_h_rate,
                       num_layers=num_layers, budget=budget, strategy=strategy)


def embed(request, graph, params, rng=None):
    """Embedding of one ``(node, time)``; returns ``(vector, tape)``."""
    cfg = config_from_params(params, graph, request.num_layers, request.strategy,
                             request.budget)
    eng = TemporalEmbedder(graph, cfg)
    h, tape = eng.forward(params, [request.node], [request.time], rng)
    return h[0], tape


def backward(graph, params, tape, upstream, request):
    """Parameter gradients of ``upstream . embedding`` for a single-request tape."""
    cfg = config_from_params(params, graph, request.num_layers, request.strategy,
                             request.budget)
    return TemporalEmbedder(graph, cfg).backward(params, tape, np.atleast_2d(upstream))


def expansion_rate(tape):
    """The learned :class:`ExpansionRate` of the first query at the top layer."""
    t = tape.root
    if t.rate is None:
        raise ContractError("tape was not produced by the tns strategy")
    return ExpansionRate(float(t.rate[0]), float(t.rate_raw[0]),
                         rate_upper_bound(int(t.counts[0]), t.idx.shape[1]))
