"""Parameter-grouped Adam and a central-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError


@dataclass
class ParamGroup:
    name: str
    params: list
    lr_scale: float = 1.0


def default_groups(params, alpha=0.1):
    """Backbone at full rate, expansion-learning modules at ``alpha``."""
    rate = sorted(k for k in params if ".rate." in k)
    rest = sorted(k for k in params if ".rate." not in k)
    groups = [ParamGroup("backbone", rest, 1.0)]
    if rate:
        groups.append(ParamGroup("expansion", rate, alpha))
    return groups


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with a per-group learning-rate multiplier.

    Every parameter must belong to exactly one group.
    """

    def __init__(self, params, groups, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        seen = {}
        for g in groups:
            for name in g.params:
                if name in seen:
                    raise ContractError(f"{name} is in groups {seen[name]!r} and {g.name!r}")
                seen[name] = g.name
        missing = set(params) - set(seen)
        if missing:
            raise ContractError(f"parameters without a group: {sorted(missing)}")
        self.params = params
        self.groups = groups
        self.state = OptimizerState(lr, beta1, beta2, eps)
        for name in seen:
            self.state.m[name] = np.zeros_like(params[name])
            self.state.v[name] = np.zeros_like(params[name])

    def step(self, grads):
        """Update ``self.params`` in place from ``grads``."""
        st = self.state
        for g in self.groups:
            for name in g.params:
                gr = grads[name]
                if gr.shape != self.params[name].shape:
                    raise ContractError(f"gradient for {name} has shape {gr.shape}, "
                                        f"expected {self.params[name].shape}")
                if not np.all(np.isfinite(gr)):
                    raise NumericError(f"non-finite gradient for parameter {name}")
        st.step_count += 1
        t = st.step_count
        c1 = 1.0 - st.beta1 ** t
        c2 = 1.0 - st.beta2 ** t
        for g in self.groups:
            lr = st.lr * g.lr_scale
            for name in g.params:
                gr = grads[name]
                m = st.m[name]
                v = st.v[name]
                m *= st.beta1
                m += (1.0 - st.beta1) * gr
                v *= st.beta2
                v += (1.0 - st.beta2) * gr * gr
                if lr:
                    self.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


@dataclass
class GradCheckReport:
    max_rel_err: float
    failures: list
    checked: int
    skipped: list
    tol: float

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_err <= self.tol

    def to_dict(self):
        return {"max_rel_err": self.max_rel_err, "failures": self.failures,
                "checked": self.checked, "skipped": self.skipped, "tol": self.tol,
                "pass": self.passed}


def grad_check(f, params, analytic, eps=1e-6, tol=1e-3, atol=1e-6, max_coords=None,
               rng=None, skip=None):
    """Compare ``analytic`` gradients with central differences of ``f``.

    ``f()`` reads ``params`` (mutated in place and restored).  The error per
    coordinate is ``|a - n| / max(|a|, |n|, atol / tol)``, so a coordinate
    passes when it is within ``tol`` relatively or ``atol`` absolutely.
    ``max_coords`` subsamples large arrays; ``skip`` maps parameter names to a
    reason for leaving them out.
    """
    rng = rng or np.random.default_rng(0)
    skip = skip or {}
    floor = atol / tol
    worst = 0.0
    failures, skipped = [], []
    checked = 0
    for name in sorted(params):
        if name in skip:
            skipped.append({"param": name, "reason": skip[name]})
            continue
        p = params[name]
        a = np.asarray(analytic[name])
        if a.shape != p.shape:
            raise ContractError(f"analytic gradient for {name} has shape {a.shape}")
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for k in coords:
            old = flat[k]
            flat[k] = old + eps
            fp = f()
            flat[k] = old - eps
            fm = f()
            flat[k] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{k}]")
            num = (fp - fm) / (2 * eps)
            ana = float(a.reshape(-1)[k])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            worst = max(worst, err)
            if err > tol:
                failures.append({"param": name, "index": int(k), "analytic": ana,
                                 "numeric": num, "rel_err": err})
    return GradCheckReport(worst, failures, checked, skipped, tol)
