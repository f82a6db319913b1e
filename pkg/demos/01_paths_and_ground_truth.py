"""Ground truth for the four path metrics and the paths the model attends over."""

import numpy as np

from deepnt.paths import k_best_loopless_paths
from deepnt.ppm import all_pairs_ground_truth, assign_edge_metrics, generate_graph, optimal_ppm

# a small connected ER graph
G = generate_graph("er", 12, seed=3, p=0.3)
print("nodes", G.n, "edges", G.num_edges())

# each metric kind has its own edge values and its own notion of "best path"
for kind in ("additive", "multiplicative", "minmax", "boolean"):
    m = assign_edge_metrics(G, kind, seed=3)
    gt = all_pairs_ground_truth(G, m, kind)
    print(f"{kind:15s} y(0, 11) = {optimal_ppm(G, m, kind, 0, 11):.4f}"
          f"   mean over pairs = {np.nanmean(gt.y[~np.eye(G.n, dtype=bool)]):.4f}")

# the model only sees the N fewest-hop loopless paths on the current adjacency
ps = k_best_loopless_paths(G.w, 0, 11, N=3, L=8)
for p, h in zip(ps.paths, ps.hops):
    print("path", p, "hops", h)

# raising the threshold tau hides light edges from the sampler
weak = G.w * np.where(np.random.default_rng(0).random(G.w.shape) < 0.3, 0.05, 1.0)
weak = np.minimum(weak, weak.T)
print("with weak edges hidden:", k_best_loopless_paths(weak, 0, 11, N=3, L=8, tau=0.1).paths)
