"""What the structure learner does to a corrupted adjacency."""

import numpy as np

from deepnt import evaluate as ev
from deepnt.graph import min_eigenvalue_sym, z_matrix
from deepnt.ppm import corrupt_topology, generate_graph
from deepnt.structure import connectivity_projection, reachability_surrogate, soft_threshold

G = generate_graph("er", 30, seed=1, p=0.12)
topo = corrupt_topology(G, 0.2, seed=1)
print("removed", len(topo.removed), "added", len(topo.added))
print("observed edge F1 vs truth: %.3f" % ev.topology_f1(G, topo.A_obs)[2])

# the L1 proximal step shrinks every weight and deletes the light ones
A = topo.A_obs.w * np.random.default_rng(0).uniform(0.5, 1.5, G.w.shape)
A = np.minimum(A, A.T)
print("edges before / after soft-threshold(0.7):",
      np.count_nonzero(np.triu(A, 1)), np.count_nonzero(np.triu(soft_threshold(A, 0.7), 1)))

# cutting a node off makes Z singular; the projection restores a connected graph
cut = A.copy()
cut[0, :] = cut[:, 0] = 0
print("lambda_min(Z) cut: %.2e" % min_eigenvalue_sym(z_matrix(cut)))
fixed = connectivity_projection(cut, eps=1e-3)
print("lambda_min(Z) projected: %.2e" % min_eigenvalue_sym(z_matrix(fixed)))

# the smooth reachability surrogate saturates toward 1 within the walk cap
R = reachability_surrogate(fixed)
print("surrogate reachability, min off-diagonal: %.3f" % R[~np.eye(30, dtype=bool)].min())

# block-pooled heatmaps of true, observed-minus-true and learned-minus-true
ev.export_heatmaps("demo_maps", G, topo.A_obs, fixed, block=10)
print("heatmaps written to demo_maps/")
