"""
Fixed expansion rates against a learned one
===========================================

A sweep trains one model per fixed expansion rate and one TNS model on the
same data.  On the planted-period stream a fixed rate above 1 helps, but no
single rate suits every user; TNS picks one per node.  The CLI equivalent is

    tns sweep --rates 1,2,4,8 --set synthetic.num_events=20000 ...

Runtime: about twenty seconds.
"""

from tns.cli import RunConfig, run_sweep

cfg = RunConfig.from_dict({
    "synthetic": {"num_events": 20_000, "p_max": 8, "seed": 0},
    "task": "node", "S": 5, "d_t": 8, "d_h": 32, "d_o": 32,
    "lr": 3e-3, "epochs": 20, "sigma_init": 1e-3, "rate_warmup": 5,
})
rows = run_sweep(cfg, rates=[1, 2, 4, 8])

print("rate   val    test   mean rate")
for r in rows:
    print(f"{r['rate']:5s}  {r['val_accuracy']:.3f}  {r['accuracy']:.3f}  {r['mean_rate']:.2f}")
