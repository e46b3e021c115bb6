"""What happens when the controller is trained on one system and deployed on a
slightly different one.

We perturb every system matrix by a distance eps and compare the simulated
trajectory deviation with its analytic bound, and the change in the stability
constant with its bound.
"""

import numpy as np

from gnnlqr.network import CostSpec, perturb_system, random_system, system_distance
from gnnlqr.numerics import RngStream
from gnnlqr.stability import deviation_bound, stability_change_bound, stability_constant
from gnnlqr.training import TrainConfig, train

rng = RngStream(11)
d = random_system(20, 5, a_norm=0.9, b_norm=1.0, rng=rng.child("system"))
cfg = TrainConfig(train_size=100, valid_size=50, epochs=20, horizon=30, learning_rate=0.01,
                  penalty="size", seed=3)
gnn, _ = train("gnn", (8, 3), d, CostSpec.identity(), cfg)
print(f"size-penalized GNN, xi = {stability_constant(d, gnn).xi:.3f}")

x0 = rng.child("x0").normal((d.n, 1))
for eps in (1e-4, 1e-3, 1e-2):
    d_hat = perturb_system(d, eps, rng.child("perturb", eps))
    lhs, rhs, ok = stability_change_bound(d, d_hat, gnn)
    rep = deviation_bound(d, d_hat, gnn, x0, 50)
    worst = np.max(rep.empirical_deviation[1:] / rep.bound[1:])
    print(f"eps = {system_distance(d, d_hat):.0e}: |xi - xi_hat| = {lhs:.2e} <= {rhs:.2e} ({ok}); "
          f"deviation reaches {worst:.1%} of its bound")
