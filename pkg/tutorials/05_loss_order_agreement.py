"""
Do two samplers find the same samples hard?
===========================================

Per-sample test losses from two runs can be compared by rank: Kendall's tau
between the two loss vectors is 1 when both models order the samples the
same way.  ``tns train`` writes these losses to ``losses.csv``; here the
runs happen in-process.

Runtime: a few seconds.
"""

import numpy as np

from tns.metrics import kendall_tau, loss_order_agreement
from tns.model import ModelConfig
from tns.synthetic import SyntheticConfig, gen_synthetic
from tns.training import TrainConfig, Trainer

g = gen_synthetic(SyntheticConfig(num_events=10_000, p_max=4, seed=1)).graph


def test_losses(strategy, seed):
    model = ModelConfig(d_v=g.d_v, d_e=g.d_e, d_t=8, d_h=16, d_o=16, budget=5,
                        strategy=strategy)
    tr = Trainer(g, model, TrainConfig(task="node", epochs=8, lr=3e-3, seed=seed))
    tr.fit()
    rep = tr.evaluate("test")
    return dict(zip(rep.sample_ids, rep.losses))


recent_a = test_losses("recent", 0)
recent_b = test_losses("recent", 1)
expanded = test_losses("expanded(4)", 0)

# Same sampler, different seeds: orders agree strongly.
print("recent vs recent (seed)  tau = %.3f" % loss_order_agreement(recent_a, recent_b))
# Different receptive fields disagree on which samples are hard.
print("recent vs expanded(4)    tau = %.3f" % loss_order_agreement(recent_a, expanded))

# kendall_tau works on plain arrays too.
print("tau of a sequence with itself:", kendall_tau(np.arange(5.0), np.arange(5.0)))
