"""Immutable temporal interaction store with point-in-time neighbor queries.

Edges are kept in stream order.  For every node the adjacency is an
ascending-time array (ties by ascending edge index), so the neighborhood of
``i`` strictly before ``t`` is a prefix of that array read backwards.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, FormatError, OrderingError, ParseError

CSV_HEADER = ("src", "dst", "timestamp", "state_label")
META_VERSION = 1


@dataclass(frozen=True)
class TemporalEdge:
    src: int
    dst: int
    timestamp: float
    features: np.ndarray
    edge_idx: int
    label: float = 0.0


class Neighbor(NamedTuple):
    """One entry of a temporal neighborhood, most recent first."""

    node: int
    timestamp: float
    features: np.ndarray
    edge_idx: int


@dataclass(frozen=True)
class CsvSchema:
    """Layout of a JODIE-style interaction file.

    ``d_e`` of None means "infer from the first data row".
    """

    has_header: bool = True
    d_e: int | None = None


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TemporalGraph:
    """Event store plus per-node reverse-chronological neighbor sequences.

    Parameters
    ----------
    src, dst : int arrays of shape (E,)
    timestamps : float array of shape (E,), non-decreasing
    edge_features : float array of shape (E, d_e)
    labels : optional float array of shape (E,) (``state_label`` column)
    node_features : optional (num_nodes, d_v) matrix; zeros of width ``d_v``
        when absent.
    """

    def __init__(self, src, dst, timestamps, edge_features, labels=None,
                 node_features=None, num_nodes=None, d_v=0):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        ts = np.asarray(timestamps, dtype=np.float64).reshape(-1)
        E = len(src)
        if len(dst) != E or len(ts) != E:
            raise ContractError("src, dst and timestamps must have equal length")
        feats = np.asarray(edge_features, dtype=np.float64)
        if feats.size == 0 and feats.ndim < 2:
            feats = feats.reshape(E, 0) if E else np.zeros((0, 0))
        if feats.ndim != 2 or feats.shape[0] != E:
            raise ContractError(f"edge_features must be ({E}, d_e), got {feats.shape}")
        if E and (src.min() < 0 or dst.min() < 0):
            raise ContractError("node ids must be non-negative")
        if E and ts.min() < 0:
            raise ContractError("timestamps must be non-negative")
        if E > 1 and np.any(np.diff(ts) < 0):
            k = int(np.argmax(np.diff(ts) < 0)) + 1
            raise OrderingError(f"timestamp decreases at edge {k}")
        labels = np.zeros(E) if labels is None else np.asarray(labels, dtype=np.float64)
        if labels.shape != (E,):
            raise ContractError("labels must have one entry per edge")

        inferred = int(max(src.max(), dst.max())) + 1 if E else 0
        if node_features is not None:
            node_features = np.asarray(node_features, dtype=np.float64)
            inferred = max(inferred, node_features.shape[0])
        if num_nodes is None:
            num_nodes = inferred
        elif num_nodes < inferred:
            raise ContractError(f"num_nodes={num_nodes} but ids reach {inferred - 1}")
        if node_features is None:
            node_features = np.zeros((num_nodes, d_v))
        elif node_features.shape[0] < num_nodes:
            pad = np.zeros((num_nodes - node_features.shape[0], node_features.shape[1]))
            node_features = np.vstack([node_features, pad])

        self.src = _readonly(src)
        self.dst = _readonly(dst)
        self.timestamps = _readonly(ts)
        self.edge_features = _readonly(feats)
        self.labels = _readonly(labels)
        self.node_features = _readonly(node_features)
        self.num_nodes = int(num_nodes)
        self.num_edges = E
        self.d_e = feats.shape[1]
        self.d_v = node_features.shape[1]
        self._build_adjacency()

    def _build_adjacency(self):
        E = self.num_edges
        eid = np.arange(E, dtype=np.int64)
        owner = np.concatenate([self.src, self.dst])
        other = np.concatenate([self.dst, self.src])
        eids = np.concatenate([eid, eid])
        times = np.concatenate([self.timestamps, self.timestamps])
        # self-loops would appear twice in the owner's list; keep one copy
        keep = np.ones(2 * E, dtype=bool)
        keep[E:] = self.src != self.dst
        owner, other, eids, times = owner[keep], other[keep], eids[keep], times[keep]
        order = np.lexsort((eids, times, owner))
        counts = np.bincount(owner, minlength=self.num_nodes)
        self._ptr = _readonly(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        self._nbr = _readonly(other[order])
        self._eid = _readonly(eids[order])
        self._time = _readonly(times[order])
        self._max_degree = int(counts.max()) if len(counts) else 0

    # -- point-in-time queries -------------------------------------------

    def _check_node(self, i):
        if not 0 <= i < self.num_nodes:
            raise ContractError(f"node {i} out of range [0, {self.num_nodes})")

    def neighbor_count(self, i, t):
        """Number of interactions of ``i`` strictly before ``t``."""
        self._check_node(i)
        lo, hi = self._ptr[i], self._ptr[i + 1]
        return int(np.searchsorted(self._time[lo:hi], t, side="left"))

    def neighbors_before(self, i, t, limit=None):
        """Most-recent-first list of :class:`Neighbor` ``(node, timestamp, features, edge_idx)``.

        Entries are strictly before ``t``; equal timestamps come out in
        descending edge index order.
        """
        n = self.neighbor_count(i, t)
        if limit is not None:
            n_out = min(n, int(limit))
        else:
            n_out = n
        base = self._ptr[i] + n - 1
        out = []
        for k in range(n_out):
            j = base - k
            out.append(Neighbor(int(self._nbr[j]), float(self._time[j]),
                                self.edge_features[self._eid[j]], int(self._eid[j])))
        return out

    def count_before(self, nodes, times):
        """Vectorized :meth:`neighbor_count` over parallel arrays."""
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= self.num_nodes):
            raise ContractError("node id out of range")
        lo = self._ptr[nodes].copy()
        hi = self._ptr[nodes + 1].copy()
        start = lo.copy()
        # segment-wise bisection for the first entry with time >= t
        while True:
            open_ = lo < hi
            if not open_.any():
                break
            mid = (lo + hi) // 2
            midc = np.minimum(mid, len(self._time) - 1) if len(self._time) else mid
            below = open_ & (self._time[midc] < times) if len(self._time) else open_
            lo = np.where(below, mid + 1, lo)
            hi = np.where(open_ & ~below, mid, hi)
        return lo - start

    def positions(self, nodes, counts, pos):
        """Neighbor id, edge id and timestamp at 1-based recency position ``pos``.

        ``pos`` broadcasts against ``nodes[:, None]``; positions outside
        ``[1, count]`` must be masked by the caller and return arbitrary
        in-range entries.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        pos = np.asarray(pos, dtype=np.int64)
        if len(self._nbr) == 0:
            z = np.zeros(np.broadcast_shapes(nodes[:, None].shape, pos.shape), dtype=np.int64)
            return z, z, z.astype(np.float64)
        csr = self._ptr[nodes][:, None] + counts[:, None] - pos
        csr = np.clip(csr, 0, len(self._nbr) - 1)
        return self._nbr[csr], self._eid[csr], self._time[csr]

    def edge(self, k):
        return TemporalEdge(int(self.src[k]), int(self.dst[k]), float(self.timestamps[k]),
                            self.edge_features[k], k, float(self.labels[k]))

    def __len__(self):
        return self.num_edges

    def __repr__(self):
        return (f"TemporalGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
                f"d_e={self.d_e}, d_v={self.d_v})")


# -- CSV / JSON I/O ------------------------------------------------------------

def _parse(field, lineno, what):
    try:
        return float(field)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric {what} {field!r}") from None


def _parse_int(field, lineno, what):
    x = _parse(field, lineno, what)
    if x != int(x) or x < 0:
        raise ParseError(f"line {lineno}: {what} must be a non-negative integer, got {field!r}")
    return int(x)


def load_csv(path, schema=None, node_features=None, num_nodes=None, d_v=0):
    """Read ``src,dst,timestamp,state_label,f_1..f_{d_e}`` rows into a graph."""
    schema = schema or CsvSchema()
    src, dst, ts, labels, feats = [], [], [], [], []
    d_e = schema.d_e
    last_t = -np.inf
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and schema.has_header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 4:
                raise FormatError(f"line {lineno}: expected at least 4 columns, got {len(row)}")
            if d_e is None:
                d_e = len(row) - 4
            if len(row) - 4 != d_e:
                raise FormatError(f"line {lineno}: expected {d_e} features, got {len(row) - 4}")
            s = _parse_int(row[0], lineno, "src")
            d = _parse_int(row[1], lineno, "dst")
            t = _parse(row[2], lineno, "timestamp")
            if t < 0:
                raise ParseError(f"line {lineno}: negative timestamp {t}")
            if t < last_t:
                raise OrderingError(f"line {lineno}: timestamp {t} < previous {last_t}")
            last_t = t
            src.append(s)
            dst.append(d)
            ts.append(t)
            labels.append(_parse(row[3], lineno, "state_label"))
            feats.append([_parse(f, lineno, "feature") for f in row[4:]])
    d_e = d_e or 0
    feats = np.asarray(feats, dtype=np.float64).reshape(len(src), d_e)
    return TemporalGraph(src, dst, ts, feats, labels=labels, node_features=node_features,
                         num_nodes=num_nodes, d_v=d_v)


def _fmt(x):
    return repr(float(x))


def write_csv(graph, path):
    """Inverse of :func:`load_csv`; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER + tuple(f"f{k}" for k in range(graph.d_e)))
        for k in range(graph.num_edges):
            w.writerow([int(graph.src[k]), int(graph.dst[k]), _fmt(graph.timestamps[k]),
                        _fmt(graph.labels[k])] + [_fmt(v) for v in graph.edge_features[k]])


def meta_path(csv_path):
    root, _ = os.path.splitext(str(csv_path))
    return root + ".meta.json"


def write_meta(graph, csv_path, split=None, extra=None):
    meta = {
        "version": META_VERSION,
        "num_nodes": graph.num_nodes,
        "d_e": graph.d_e,
        "num_edges": graph.num_edges,
    }
    if split is not None:
        meta["split"] = split.boundaries()
    if extra:
        meta.update(extra)
    path = meta_path(csv_path)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_meta(csv_path):
    with open(meta_path(csv_path)) as fh:
        return json.load(fh)


def nodes_path(csv_path):
    root, _ = os.path.splitext(str(csv_path))
    return root + ".nodes.csv"


def write_node_features(graph, csv_path):
    """Write ``node,v_1..v_{d_v}`` rows next to the edge file; no-op when d_v = 0."""
    if graph.d_v == 0:
        return None
    path = nodes_path(csv_path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("node",) + tuple(f"v{k}" for k in range(graph.d_v)))
        for i, row in enumerate(graph.node_features):
            w.writerow([i] + [_fmt(v) for v in row])
    return path


def read_node_features(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            node = _parse_int(row[0], lineno, "node")
            if node != len(rows):
                raise FormatError(f"{path} line {lineno}: expected node {len(rows)}, got {node}")
            rows.append([_parse(f, lineno, "node feature") for f in row[1:]])
    if len({len(r) for r in rows}) > 1:
        raise FormatError(f"{path}: rows have different feature counts")
    return np.asarray(rows, dtype=np.float64)


def load_dataset(csv_path, schema=None):
    """Edge CSV plus its optional ``.meta.json`` and ``.nodes.csv`` sidecars."""
    node_features, num_nodes = None, None
    if os.path.exists(nodes_path(csv_path)):
        node_features = read_node_features(nodes_path(csv_path))
    if os.path.exists(meta_path(csv_path)):
        num_nodes = read_meta(csv_path).get("num_nodes")
    return load_csv(csv_path, schema, node_features=node_features, num_nodes=num_nodes)


def save_dataset(graph, csv_path, split=None, extra=None):
    """Write edges, node features and metadata; returns the paths written."""
    write_csv(graph, csv_path)
    paths = [str(csv_path), write_meta(graph, csv_path, split, extra)]
    nodes = write_node_features(graph, csv_path)
    if nodes:
        paths.append(nodes)
    return paths
