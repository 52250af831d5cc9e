"""Command-line entry point: ``gen``, ``train``, ``sweep``, ``gradcheck``, ``eval``.

Every subcommand reads one JSON run configuration (``--config``), applies
``--set key=value`` overrides and a few flag shortcuts, and writes its outputs
into a per-run directory ``<root>/<cmd>-<config hash>-<timestamp>`` where
``<root>`` is ``$TNS_OUTPUT_ROOT`` (default ``./runs``).  ``--out`` names the
directory explicitly.

Exit codes: 0 success, 1 validation error (bad config, bad input file),
2 runtime or numeric failure (non-finite loss, failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, DataError, NumericError, TNSError
from .graph_store import TemporalGraph, load_dataset, save_dataset
from .model import ModelConfig, TemporalEmbedder, init_params, load_params, save_params
from .numerics import grad_check
from .sampler import Strategy
from .synthetic import SyntheticConfig, gen_synthetic
from .training import Trainer, TrainConfig, split_chronological

log = logging.getLogger("tns")

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "TNS_OUTPUT_ROOT"


@dataclass
class RunConfig:
    """Flat run configuration; ``synthetic`` is used when ``dataset`` is unset."""

    dataset: str | None = None
    synthetic: dict = field(default_factory=dict)
    task: str = "node"
    mode: str = "transductive"
    strategy: str = "tns"
    S: int = 10
    L: int = 1
    d_t: int = 16
    d_h: int = 100
    d_o: int = 100
    d_h_rate: int | None = None
    alpha: float = 0.1
    sigma_init: float = 1e-5
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 200
    rate_warmup: int = 0
    seed: int = 0
    eval_seed: int = 12345

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self):
        Strategy.parse(self.strategy)
        if not self.dataset:
            self.synthetic_config().validate()
        for key in ("S", "L", "d_t", "d_h", "d_o", "epochs", "batch_size", "seed"):
            if not isinstance(getattr(self, key), int):
                raise ConfigError(f"{key} must be an integer, got {getattr(self, key)!r}")
        self.train_config()
        return self

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def synthetic_config(self):
        try:
            return SyntheticConfig(**self.synthetic)
        except TypeError as e:
            raise ConfigError(f"bad synthetic section: {e}") from None

    def model_config(self, graph):
        return ModelConfig(d_v=graph.d_v, d_e=graph.d_e, d_t=self.d_t, d_h=self.d_h,
                           d_o=self.d_o, d_h_rate=self.d_h_rate, num_layers=self.L,
                           budget=self.S, strategy=self.strategy, sigma_init=self.sigma_init)

    def train_config(self):
        return TrainConfig(task=self.task, epochs=self.epochs, lr=self.lr, alpha=self.alpha,
                           batch_size=self.batch_size, mode=self.mode, seed=self.seed,
                           eval_seed=self.eval_seed, rate_warmup=self.rate_warmup).validate()


# -- configuration plumbing ------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc, assignment):
    """Set ``a.b=value`` in a nested dict; the value is JSON when it parses."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not a section")
    node[parts[-1]] = _parse_value(text)
    return doc


_SHORTCUTS = {"strategy": "strategy", "S": "S", "layers": "L", "alpha": "alpha",
              "sigma": "sigma_init", "lr": "lr", "epochs": "epochs", "seed": "seed",
              "dataset": "dataset", "task": "task"}


def load_config(args):
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    for flag, key in _SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            doc[key] = v
    for assignment in getattr(args, "set", None) or []:
        apply_override(doc, assignment)
    try:
        return RunConfig.from_dict(doc)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def run_dir(cmd, cfg, out=None):
    if out:
        path = out
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join(root, f"{cmd}-{cfg.digest()}-{stamp}")
        k = 1
        while os.path.exists(path):
            path = os.path.join(root, f"{cmd}-{cfg.digest()}-{stamp}-{k}")
            k += 1
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_losses(path, sample_ids, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "loss"])
        for sid, loss in zip(sample_ids, losses):
            w.writerow([int(sid), repr(float(loss))])


def read_losses(path):
    """``{sample_id: loss}`` from a ``sample_id,loss`` CSV."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[int(row["sample_id"])] = float(row["loss"])
    return out


def load_graph(cfg):
    if cfg.dataset:
        return load_dataset(cfg.dataset), None
    data = gen_synthetic(cfg.synthetic_config())
    return data.graph, data


# -- train / eval --------------------------------------------------------------

def train_run(cfg, graph, callback=None):
    """Train one model; returns the fitted :class:`Trainer`."""
    trainer = Trainer(graph, cfg.model_config(graph), cfg.train_config())
    trainer.fit(callback)
    return trainer


def _metrics_doc(cfg, trainer, val, test):
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "val": val.to_dict(),
        "test": test.to_dict(),
        "test_rates": {str(k): v for k, v in test.rates.items()},
        "history": [{"epoch": h.epoch, "loss": h.loss, "val": h.val,
                     "rates": {str(k): v for k, v in h.rates.items()},
                     "index_signs": {str(k): v for k, v in h.signs.items()}}
                    for h in trainer.history],
    }


def _write_rates(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "layer", "min", "mean", "max"])
        for h in history:
            for layer, st in sorted(h.rates.items()):
                w.writerow([h.epoch, layer, repr(st["min"]), repr(st["mean"]), repr(st["max"])])


def cmd_train(cfg, out=None):
    """Train, evaluate, and write ``metrics.json``, ``checkpoint.json``,
    ``losses.csv`` (test per-sample losses) and ``rates.csv``."""
    graph, _ = load_graph(cfg)
    trainer = train_run(cfg, graph)
    val, test = trainer.evaluate("val"), trainer.evaluate("test")
    path = run_dir("train", cfg, out)
    doc = _metrics_doc(cfg, trainer, val, test)
    _write_json(os.path.join(path, "metrics.json"), doc)
    _write_json(os.path.join(path, "config.json"), cfg.to_dict())
    save_params(trainer.params, os.path.join(path, "checkpoint.json"),
                meta={"run_config": cfg.to_dict()})
    _write_losses(os.path.join(path, "losses.csv"), test.sample_ids, test.losses)
    _write_rates(os.path.join(path, "rates.csv"), trainer.history)
    return path, doc


def cmd_eval(checkpoint, split="test", out=None):
    """Re-evaluate a checkpoint written by ``train`` on ``split``."""
    params, meta = load_params(checkpoint)
    if "run_config" not in meta:
        raise ConfigError(f"{checkpoint}: no run_config in checkpoint metadata")
    cfg = RunConfig.from_dict(meta["run_config"])
    graph, _ = load_graph(cfg)
    trainer = Trainer(graph, cfg.model_config(graph), cfg.train_config(), params=params)
    if split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train, val or test, got {split!r}")
    rep = trainer.evaluate(split)
    path = out or os.path.dirname(os.path.abspath(checkpoint))
    os.makedirs(path, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.digest(), "split": split,
           "metrics": rep.to_dict(), "rates": {str(k): v for k, v in rep.rates.items()}}
    _write_json(os.path.join(path, f"eval_{split}.json"), doc)
    _write_losses(os.path.join(path, f"losses_{split}.csv"), rep.sample_ids, rep.losses)
    return path, doc


# -- sweep ---------------------------------------------------------------------

def _rate_label(r):
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def run_sweep(cfg, rates, graph=None, losses_dir=None):
    """One model per fixed expansion rate plus one TNS model.

    Returns rows ``{"rate", "val_accuracy", "accuracy", "ap", "mean_rate"}``;
    ``accuracy``/``ap`` are test metrics and the TNS row has ``rate == "tns"``.
    """
    rates = [float(r) for r in rates]
    if not rates:
        raise ConfigError("sweep needs at least one rate")
    if min(rates) < 1:
        raise ConfigError(f"expansion rates must be >= 1, got {min(rates)}")
    if graph is None:
        graph, _ = load_graph(cfg)
    rows = []
    arms = [(_rate_label(r), f"expanded({r!r})") for r in rates] + [("tns", "tns")]
    for label, strategy in arms:
        arm = RunConfig.from_dict({**cfg.to_dict(), "strategy": strategy})
        trainer = train_run(arm, graph)
        val, test = trainer.evaluate("val"), trainer.evaluate("test")
        mean_rate = test.rates[1]["mean"] if test.rates else float(label if label != "tns" else 1)
        rows.append({"rate": label, "val_accuracy": val.accuracy, "accuracy": test.accuracy,
                     "ap": test.average_precision, "mean_rate": mean_rate})
        log.info("sweep %s: val %.4f test %.4f", label, val.accuracy, test.accuracy)
        if losses_dir:
            _write_losses(os.path.join(losses_dir, f"losses_{label}.csv"),
                          test.sample_ids, test.losses)
    return rows


def cmd_sweep(cfg, rates, out=None):
    graph, _ = load_graph(cfg)
    path = run_dir("sweep", cfg, out)
    rows = run_sweep(cfg, rates, graph, losses_dir=path)
    with open(os.path.join(path, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate", "accuracy", "ap"])
        for r in rows:
            ap = "" if r["ap"] is None else repr(r["ap"])
            w.writerow([r["rate"], repr(r["accuracy"]), ap])
    doc = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.digest(),
           "config": cfg.to_dict(), "rows": rows}
    _write_json(os.path.join(path, "sweep.json"), doc)
    return path, doc


# -- gradcheck -----------------------------------------------------------------

KINK_MARGIN = 0.05


def _gradcheck_graph(rng, num_nodes=12, num_edges=400, d_e=3, d_v=4):
    src = rng.integers(0, num_nodes, size=num_edges)
    dst = (src + rng.integers(1, num_nodes, size=num_edges)) % num_nodes
    ts = np.sort(rng.uniform(0, 100, size=num_edges))
    return TemporalGraph(src, dst, ts, rng.standard_normal((num_edges, d_e)),
                         labels=rng.integers(0, 2, size=num_edges),
                         node_features=rng.standard_normal((num_nodes, d_v)))


def _clear_of_kinks(tape):
    for t in tape.layers():
        if t.rate is None:
            continue
        # the first index is always 1 and does not depend on the rate
        d = np.abs(t.idx - np.round(t.idx))[:, 1:][t.valid[:, 1:]]
        upper = (t.counts - 1) / max(t.idx.shape[1] - 1, 1)
        if not t.rate_active.all() or np.any(d < KINK_MARGIN):
            return False
        if np.any(t.rate_raw < 1 + KINK_MARGIN) or np.any(t.rate_raw > upper - KINK_MARGIN):
            return False
    return True


def gradcheck_case(num_layers, seed=0, S=5, at_integral=False, corrupt=False,
                   batch=6, max_coords=None):
    """Finite-difference check of every parameter of a small TNS model.

    The rate module is shifted to produce fractional rates around 1.5-3 and
    requests are kept only when every sampled index sits at least
    ``KINK_MARGIN`` from an integer and every rate strictly inside its
    truncation range, so the objective is smooth under perturbation.
    ``at_integral`` instead pins every rate to exactly 2; indices are then
    integral, the index gradient sits on the interpolation kink, and the
    rate-module coordinates are reported as skipped.  ``corrupt`` flips the
    sign of the largest rate-module gradient coordinate (harness self-test).
    """
    rng = np.random.default_rng(seed)
    graph = _gradcheck_graph(rng)
    cfg = ModelConfig(d_v=graph.d_v, d_e=graph.d_e, d_t=4, d_h=6, d_o=5, d_h_rate=4,
                      num_layers=num_layers, budget=S, strategy="tns", sigma_init=0.3)
    params = init_params(cfg, rng)
    params["time.omega"] = rng.uniform(0.01, 0.2, size=cfg.d_t)
    params["time.beta"] = rng.uniform(-1, 1, size=cfg.d_t)
    for l in range(1, num_layers + 1):
        params[f"l{l}.b1"] = rng.normal(0, 0.1, size=cfg.d_h)
        params[f"l{l}.b2"] = rng.normal(0, 0.1, size=cfg.d_o)
        params[f"l{l}.rate.b1"] = rng.normal(0, 0.1, size=cfg.d_h_rate)
        if at_integral:
            params[f"l{l}.rate.W2"][:] = 0.0
            params[f"l{l}.rate.b2"][:] = 2.0
        else:
            params[f"l{l}.rate.W2"] *= 0.2
            params[f"l{l}.rate.b2"][:] = 2.2
    emb = TemporalEmbedder(graph, cfg)

    nodes, times = [], []
    late = np.arange(graph.num_edges // 2, graph.num_edges)
    for k in rng.permutation(late):
        i = int(graph.src[k])
        t = float(graph.timestamps[k])
        _, tape = emb.forward(params, [i], [t])
        if at_integral or _clear_of_kinks(tape):
            nodes.append(i)
            times.append(t)
        if len(nodes) == batch:
            break
    if len(nodes) < batch:
        raise NumericError("could not find enough kink-free requests for the gradient check")
    nodes, times = np.array(nodes), np.array(times)
    C = rng.standard_normal((batch, cfg.d_o))

    def objective():
        h, _ = emb.forward(params, nodes, times)
        return float(np.sum(h * C))

    _, tape = emb.forward(params, nodes, times)
    grads = emb.backward(params, tape, C)
    if corrupt:
        g = grads["l1.rate.W2"]
        k = np.unravel_index(np.argmax(np.abs(g)), g.shape)
        g[k] = -g[k]
    skip = {}
    if at_integral:
        reason = "sampled indices are integral: interpolation kernel kink, index gradient undefined"
        skip = {k: reason for k in params if ".rate." in k}
    report = grad_check(objective, params, grads, eps=1e-6, tol=1e-3, atol=1e-6,
                        max_coords=max_coords, rng=rng, skip=skip)
    return report


def cmd_gradcheck(layers=(1, 2), seed=0, S=5, at_integral=False, corrupt=False, out=None):
    """Run :func:`gradcheck_case` for each depth and merge the reports."""
    cases = {}
    worst, failures, skipped = 0.0, [], []
    for L in layers:
        rep = gradcheck_case(L, seed=seed, S=S, at_integral=at_integral, corrupt=corrupt)
        cases[f"L{L}"] = rep.to_dict()
        worst = max(worst, rep.max_rel_err)
        failures += [{**f, "case": f"L{L}"} for f in rep.failures]
        skipped += [{**s, "case": f"L{L}"} for s in rep.skipped]
    passed = all(c["pass"] for c in cases.values())
    doc = {"schema_version": SCHEMA_VERSION, "max_rel_err": worst, "failures": failures,
           "skipped": skipped, "pass": passed,
           "status": ("PASS" if passed else "FAIL") + (" (SKIPPED index coordinates)"
                                                       if skipped else ""),
           "cases": cases}
    if out:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "gradcheck.json"), doc)
    return doc


# -- gen -----------------------------------------------------------------------

def cmd_gen(cfg, csv_path):
    """Generate the synthetic dataset described by ``cfg.synthetic``."""
    data = gen_synthetic(cfg.synthetic_config())
    split = split_chronological(data.graph)
    d = os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(d, exist_ok=True)
    extra = {"synthetic": data.config.to_dict(),
             "period_summary": {str(k): v for k, v in data.period_summary().items()}}
    paths = save_dataset(data.graph, csv_path, split=split, extra=extra)
    return paths, data


# -- argument parsing ------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (dotted for sections, JSON values)")
    p.add_argument("--strategy", help="recent | uniform | expanded(r) | tns")
    p.add_argument("-S", type=int, help="sampling budget")
    p.add_argument("--layers", type=int, help="number of layers (1 or 2)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma", type=float, help="sigma_init of the rate output layer")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", help="edge CSV (sidecars .meta.json/.nodes.csv optional)")
    p.add_argument("--task", choices=("node", "edge"))


def build_parser():
    ap = argparse.ArgumentParser(prog="tns", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="write a planted-period synthetic dataset")
    _common(p)
    p.add_argument("output", help="CSV path to write")

    p = sub.add_parser("train", help="train and evaluate one model")
    _common(p)
    p.add_argument("--out", help="run directory (default: $TNS_OUTPUT_ROOT/train-<hash>-<time>)")

    p = sub.add_parser("sweep", help="fixed expansion rates vs TNS")
    _common(p)
    p.add_argument("--rates", default="1,2,4,8", help="comma-separated rates >= 1")
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--layers", default="1,2", help="depths to check")
    p.add_argument("-S", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="flip one gradient sign (must FAIL)")
    p.add_argument("--at-integral", action="store_true",
                   help="put every sampled index on an integer")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    return ap


def _parse_list(text, conv, what):
    try:
        return [conv(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad {what} list {text!r}") from None


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "gen":
            cfg = load_config(args)
            paths, data = cmd_gen(cfg, args.output)
            print(json.dumps({"files": paths, "num_edges": data.graph.num_edges,
                              "period_summary": data.period_summary()}, sort_keys=True))
        elif args.cmd == "train":
            path, doc = cmd_train(load_config(args), args.out)
            print(json.dumps({"run_dir": path, "val": doc["val"], "test": doc["test"]},
                             sort_keys=True))
        elif args.cmd == "sweep":
            rates = _parse_list(args.rates, float, "rate")
            path, doc = cmd_sweep(load_config(args), rates, args.out)
            print(f"run_dir {path}")
            print("rate,accuracy,ap")
            for r in doc["rows"]:
                print(f"{r['rate']},{r['accuracy']:.4f},{r['ap'] if r['ap'] is None else round(r['ap'], 4)}")
        elif args.cmd == "gradcheck":
            layers = _parse_list(args.layers, int, "layer")
            doc = cmd_gradcheck(layers, args.seed, args.S, args.at_integral, args.corrupt,
                                args.out)
            summary = {k: doc[k] for k in ("max_rel_err", "failures", "pass", "status")}
            if doc["skipped"]:
                summary["skipped"] = doc["skipped"]
            print(json.dumps(summary, indent=2, sort_keys=True))
            if not doc["pass"]:
                return 2
        elif args.cmd == "eval":
            path, doc = cmd_eval(args.checkpoint, args.split, args.out)
            print(json.dumps(doc["metrics"], sort_keys=True))
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericError, TNSError, ArithmeticError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
