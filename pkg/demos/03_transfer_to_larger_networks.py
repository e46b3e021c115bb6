"""Graph filters do not depend on the number of nodes, so a GNN trained on a
20-node network can be run unchanged on larger ones.
"""

from gnnlqr.controllers import FiniteHorizonController
from gnnlqr.network import CostSpec, random_system
from gnnlqr.numerics import RngStream
from gnnlqr.training import TrainConfig, evaluate, sample_initial_states, train

rng = RngStream(5)
cost = CostSpec.identity()
horizon = 30
d20 = random_system(20, 5, 0.995, 1.0, rng.child("system", 20))
cfg = TrainConfig(train_size=100, valid_size=50, epochs=20, horizon=horizon, learning_rate=0.01, seed=2)
gnn, _ = train("gnn", (16, 4), d20, cost, cfg)

for n in (20, 30, 40):
    d = d20 if n == 20 else random_system(n, 5, 0.995, 1.0, rng.child("system", n))
    test = sample_initial_states(50, n, 1, rng.child("test", n))
    s = evaluate(gnn, d, cost, test, horizon, optimal=FiniteHorizonController(d, cost, horizon))
    print(f"N = {n}: stable {s.stable_ratio:.0%}, median normalized cost {s.median:.3f}")
