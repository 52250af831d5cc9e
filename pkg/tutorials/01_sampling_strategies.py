"""
Sampling a temporal neighborhood
================================

A node's temporal neighborhood at time t is every interaction strictly
before t, most recent first.  A sampling strategy picks S positions out of
that list.  This script walks through the four strategies on a toy stream.
"""

import numpy as np

from tns.graph_store import TemporalGraph
from tns.sampler import (expanded_indices, recent_indices, truncate_rate, tns_indices,
                         uniform_indices)

# Node 0 talks to nodes 1..5 twenty times, one event per time unit.
E = 20
graph = TemporalGraph(src=np.zeros(E, dtype=int), dst=1 + np.arange(E) % 5,
                      timestamps=np.arange(1.0, E + 1), edge_features=np.zeros((E, 1)))

# Position 1 is the latest event before t.  At t=20.5 node 0 has 20 neighbors.
nbrs = graph.neighbors_before(0, 20.5)
print("N =", len(nbrs), "| latest:", nbrs[0].timestamp, "| oldest:", nbrs[-1].timestamp)

# An event at exactly t is not part of the neighborhood at t.
print("N at t=20:", graph.neighbor_count(0, 20.0))

S = 4
print("recent      ", recent_indices(20, S).indices)
print("uniform     ", uniform_indices(20, S, np.random.default_rng(0)).indices)

# Expanded sampling keeps positions 1 + (s-1) r that still exist.  A rate of
# 4 reaches back four times further with the same budget.
print("expanded r=4", expanded_indices(20, S, 4).indices)
print("expanded r=8", expanded_indices(20, S, 8).indices, "(positions past N dropped)")

# Fractional rates give fractional positions; the model reads those by
# interpolating the two neighboring messages.
print("expanded r=2.5", expanded_indices(20, S, 2.5).indices)

# TNS learns the rate per node and time.  The raw output is clamped so the
# last position stays inside the neighborhood.
for raw in (0.3, 2.5, 9.0):
    r = truncate_rate(raw, N=20, S=S)
    print(f"raw {raw:4} -> rate {r.value:.3f} (upper {r.upper:.3f}, gradient passes: {r.active})",
          tns_indices(r, 20, S).indices)

# With fewer neighbors than the budget there is nothing to expand into.
print("N=3, S=4 ->", truncate_rate(5.0, N=3, S=4).value)
