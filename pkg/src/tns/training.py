"""Chronological splits, edge/node prediction tasks and the training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, NumericError
from .metrics import MetricReport, compute_metrics
from .model import TemporalEmbedder, init_params
from .numerics import Adam, default_groups

log = logging.getLogger(__name__)


# -- splits --------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple
    val: tuple
    test: tuple
    inductive_mask: np.ndarray
    val_time: float
    test_time: float

    def range(self, name):
        lo, hi = getattr(self, name)
        return np.arange(lo, hi)

    def boundaries(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test),
                "val_time": self.val_time, "test_time": self.test_time}


def _tie_forward(ts, k):
    # keep every edge sharing the boundary timestamp on the earlier side
    while 0 < k < len(ts) and ts[k] == ts[k - 1]:
        k += 1
    return k


def split_chronological(graph, ratios=(0.70, 0.15, 0.15)):
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    E = graph.num_edges
    if E < 10:
        raise DataError(f"need at least 10 edges to split, got {E}")
    ts = graph.timestamps
    a = _tie_forward(ts, int(np.floor(ratios[0] * E + 0.5)))
    b = _tie_forward(ts, max(a, int(np.floor((ratios[0] + ratios[1]) * E + 0.5))))
    if not 0 < a < b < E:
        raise DataError("degenerate split: timestamps too concentrated to separate "
                        "train/val/test chronologically")
    seen = np.zeros(graph.num_nodes, dtype=bool)
    seen[graph.src[:a]] = True
    seen[graph.dst[:a]] = True
    return Split((0, a), (a, b), (b, E), ~seen, float(ts[a]), float(ts[b]))


# -- decoders ------------------------------------------------------------------

def init_decoder(d_in, d_hidden, rng, zero=False):
    lim1 = np.sqrt(6.0 / (d_in + d_hidden))
    lim2 = np.sqrt(6.0 / (d_hidden + 1))
    p = {
        "dec.W1": rng.uniform(-lim1, lim1, (d_hidden, d_in)),
        "dec.b1": np.zeros(d_hidden),
        "dec.W2": rng.uniform(-lim2, lim2, (1, d_hidden)),
        "dec.b2": np.zeros(1),
    }
    if zero:
        for v in p.values():
            v[...] = 0.0
    return p


def decoder_forward(params, x):
    pre = x @ params["dec.W1"].T + params["dec.b1"]
    hid = np.maximum(pre, 0.0)
    return (hid @ params["dec.W2"].T + params["dec.b2"])[:, 0], (x, pre, hid)


def decoder_backward(params, cache, dlogit, grads):
    x, pre, hid = cache
    dlogit = dlogit[:, None]
    grads["dec.W2"] += dlogit.T @ hid
    grads["dec.b2"] += dlogit.sum(0)
    dpre = (dlogit @ params["dec.W2"]) * (pre > 0)
    grads["dec.W1"] += dpre.T @ x
    grads["dec.b1"] += dpre.sum(0)
    return dpre @ params["dec.W1"]


def bce_with_logits(z, y):
    """Per-sample binary cross-entropy and its derivative in ``z``."""
    loss = np.logaddexp(0.0, z) - y * z
    return loss, expit(z) - y


def sigmoid(z):
    return expit(z)


# -- tasks ---------------------------------------------------------------------

@dataclass
class TaskOutput:
    loss: float
    losses: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    grads: dict | None = None
    tape: object = None


class EdgePrediction:
    """Score ``(src, dst, t)`` against one uniformly drawn negative destination."""

    name = "edge"

    def __init__(self, graph, embedder):
        self.graph = graph
        self.embedder = embedder
        self.candidates = np.unique(graph.dst)
        if len(self.candidates) < 2:
            raise DataError("negative sampling needs at least two destination nodes")

    def negatives(self, dst, rng):
        neg = self.candidates[rng.integers(0, len(self.candidates), size=len(dst))]
        clash = neg == dst
        while clash.any():
            neg[clash] = self.candidates[rng.integers(0, len(self.candidates), clash.sum())]
            clash = neg == dst
        return neg

    def input_width(self, d_o):
        return 2 * d_o

    def run(self, params, edge_ids, rng, grad=False, sample_rng=None):
        if len(edge_ids) == 0:
            raise DataError("empty batch")
        g = self.graph
        src, dst, t = g.src[edge_ids], g.dst[edge_ids], g.timestamps[edge_ids]
        neg = self.negatives(dst, rng)
        B = len(edge_ids)
        H, tape = self.embedder.forward(params, np.concatenate([src, dst, neg]),
                                        np.concatenate([t, t, t]), sample_rng)
        hs, hd, hn = H[:B], H[B:2 * B], H[2 * B:]
        x = np.vstack([np.hstack([hs, hd]), np.hstack([hs, hn])])
        z, cache = decoder_forward(params, x)
        y = np.r_[np.ones(B), np.zeros(B)]
        loss, dz = bce_with_logits(z, y)
        per_sample = 0.5 * (loss[:B] + loss[B:])
        out = TaskOutput(float(loss.mean()), per_sample, sigmoid(z), y, np.asarray(edge_ids))
        if grad:
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            dx = decoder_backward(params, cache, dz / (2 * B), grads)
            d_o = hs.shape[1]
            dH = np.vstack([dx[:B, :d_o] + dx[B:, :d_o], dx[:B, d_o:], dx[B:, d_o:]])
            self.embedder.backward(params, tape, dH, grads)
            out.grads = grads
        out.tape = tape
        return out

    def eval_filter(self, edge_ids, split, mode):
        if mode == "transductive":
            return edge_ids
        m = split.inductive_mask
        return edge_ids[m[self.graph.src[edge_ids]] | m[self.graph.dst[edge_ids]]]


class NodeClassification:
    """Predict the binary ``state_label`` of the source node at event time."""

    name = "node"

    def __init__(self, graph, embedder):
        if not np.all((graph.labels == 0) | (graph.labels == 1)):
            raise DataError("node classification needs binary state labels")
        self.graph = graph
        self.embedder = embedder

    def input_width(self, d_o):
        return d_o

    def run(self, params, edge_ids, rng=None, grad=False, sample_rng=None):
        if len(edge_ids) == 0:
            raise DataError("empty batch")
        g = self.graph
        H, tape = self.embedder.forward(params, g.src[edge_ids], g.timestamps[edge_ids],
                                        sample_rng)
        z, cache = decoder_forward(params, H)
        y = g.labels[edge_ids]
        loss, dz = bce_with_logits(z, y)
        out = TaskOutput(float(loss.mean()), loss, sigmoid(z), y, np.asarray(edge_ids))
        if grad:
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            dH = decoder_backward(params, cache, dz / len(y), grads)
            self.embedder.backward(params, tape, dH, grads)
            out.grads = grads
        out.tape = tape
        return out

    def eval_filter(self, edge_ids, split, mode):
        if mode == "transductive":
            return edge_ids
        return edge_ids[split.inductive_mask[self.graph.src[edge_ids]]]


TASKS = {"edge": EdgePrediction, "node": NodeClassification}


def edge_prediction_loss(embedder, params, edge_ids, rng, split=None, mode="transductive"):
    """``(loss, per-sample losses)`` of the edge task on a batch of positive edges."""
    task = EdgePrediction(embedder.graph, embedder)
    if mode == "inductive":
        if split is None:
            raise ConfigError("inductive mode needs the split's inductive mask")
        edge_ids = task.eval_filter(np.asarray(edge_ids), split, mode)
    out = task.run(params, np.asarray(edge_ids), rng)
    return out.loss, out.losses


def node_classification_loss(embedder, params, edge_ids):
    out = NodeClassification(embedder.graph, embedder).run(params, np.asarray(edge_ids))
    return out.loss, out.losses


# -- training loop ---------------------------------------------------------------

@dataclass
class TrainConfig:
    task: str = "node"
    epochs: int = 10
    lr: float = 1e-4
    alpha: float = 0.1
    batch_size: int = 200
    d_dec: int | None = None
    mode: str = "transductive"
    seed: int = 0
    eval_seed: int = 12345
    rate_warmup: int = 0   # epochs with the expansion group frozen

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {sorted(TASKS)}")
        if self.mode not in ("transductive", "inductive"):
            raise ConfigError("mode must be transductive or inductive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0 or self.alpha < 0:
            raise ConfigError("lr must be > 0 and alpha >= 0")
        if self.rate_warmup < 0:
            raise ConfigError("rate_warmup must be >= 0")
        return self


def _rate_stats(tapes_rates):
    out = {}
    for layer, chunks in sorted(tapes_rates.items()):
        r = np.concatenate(chunks)
        out[layer] = {"min": float(r.min()), "mean": float(r.mean()), "max": float(r.max())}
    return out


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val: dict
    rates: dict = field(default_factory=dict)
    signs: dict = field(default_factory=dict)


class Trainer:
    """Sequential chronological training with per-epoch validation."""

    def __init__(self, graph, model_config, train_config, split=None, params=None):
        self.graph = graph
        self.model_config = model_config
        self.cfg = train_config.validate()
        self.split = split or split_chronological(graph)
        self.embedder = TemporalEmbedder(graph, model_config)
        self.task = TASKS[self.cfg.task](graph, self.embedder)
        rng = np.random.default_rng(self.cfg.seed)
        if params is None:
            params = init_params(model_config, rng)
            d_dec = self.cfg.d_dec or model_config.d_o
            params.update(init_decoder(self.task.input_width(model_config.d_o), d_dec, rng))
        self.params = params
        self.rng = rng
        self.optimizer = Adam(params, default_groups(params, self.cfg.alpha), lr=self.cfg.lr)
        self.history = []

    def train_epoch(self, epoch):
        ids = self.split.range("train")
        bs = self.cfg.batch_size
        total, n = 0.0, 0
        rates, signs = {}, {-1: 0, 0: 0, 1: 0}
        for k, start in enumerate(range(0, len(ids), bs)):
            batch = ids[start:start + bs]
            out = self.task.run(self.params, batch, self.rng, grad=True, sample_rng=self.rng)
            if not np.isfinite(out.loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {k}")
            for lt in out.tape.layers():
                if lt.rate is not None:
                    rates.setdefault(lt.layer, []).append(lt.rate)
                    sel = lt.valid & lt.frac
                    s = np.sign(lt.index_grads[sel])
                    for v in (-1, 0, 1):
                        signs[v] += int(np.sum(s == v))
            self.optimizer.step(out.grads)
            total += out.loss * len(batch)
            n += len(batch)
        return total / max(n, 1), _rate_stats(rates), signs

    def evaluate(self, name="val"):
        ids = self.task.eval_filter(self.split.range(name), self.split, self.cfg.mode)
        if len(ids) == 0:
            raise DataError(f"no {name} samples for mode {self.cfg.mode}")
        rng = np.random.default_rng(self.cfg.eval_seed)
        sample_rng = np.random.default_rng(self.cfg.eval_seed + 1)
        scores, labels, losses, sids, rates = [], [], [], [], {}
        for start in range(0, len(ids), self.cfg.batch_size):
            batch = ids[start:start + self.cfg.batch_size]
            out = self.task.run(self.params, batch, rng, sample_rng=sample_rng)
            scores.append(out.scores)
            labels.append(out.labels)
            losses.append(out.losses)
            sids.append(out.sample_ids)
            for lt in out.tape.layers():
                if lt.rate is not None:
                    rates.setdefault(lt.layer, []).append(lt.rate)
        rep = compute_metrics(np.concatenate(scores), np.concatenate(labels), strict=False)
        rep.losses = np.concatenate(losses).tolist()
        rep.sample_ids = np.concatenate(sids).tolist()
        rep.rates = _rate_stats(rates)
        return rep

    def _set_rate_scale(self, scale):
        for g in self.optimizer.groups:
            if g.name == "expansion":
                g.lr_scale = scale

    def fit(self, callback=None):
        """Train for ``cfg.epochs`` epochs.

        During the first ``cfg.rate_warmup`` epochs the expansion modules are
        frozen, so their first updates see a backbone that already reads the
        messages.  A rate pushed below 1 by early noise sits in the flat part
        of the truncation and never receives gradient again.
        """
        for epoch in range(1, self.cfg.epochs + 1):
            self._set_rate_scale(0.0 if epoch <= self.cfg.rate_warmup else self.cfg.alpha)
            loss, rates, signs = self.train_epoch(epoch)
            val = self.evaluate("val")
            entry = EpochLog(epoch, loss, val.to_dict(), rates, signs)
            self.history.append(entry)
            log.info("epoch %d loss %.4f val acc %.4f", epoch, loss, val.accuracy)
            if callback:
                callback(entry)
        return self.history


@dataclass
class RunResult:
    params: dict
    history: list
    val: MetricReport
    test: MetricReport

    def metrics(self):
        """JSON-ready summary (no timing or path information)."""
        return {
            "val": self.val.to_dict(),
            "test": self.test.to_dict(),
            "test_rates": {str(k): v for k, v in getattr(self.test, "rates", {}).items()},
            "history": [{"epoch": h.epoch, "loss": h.loss, "val": h.val,
                         "rates": {str(k): v for k, v in h.rates.items()},
                         "index_signs": {str(k): v for k, v in h.signs.items()}}
                        for h in self.history],
        }


def train_and_evaluate(graph, model_config, train_config, split=None, callback=None):
    trainer = Trainer(graph, model_config, train_config, split)
    trainer.fit(callback)
    return RunResult(trainer.params, trainer.history, trainer.evaluate("val"),
                     trainer.evaluate("test"))


def train_config_dict(cfg):
    return asdict(cfg)
