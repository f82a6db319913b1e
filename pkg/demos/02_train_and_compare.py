"""Train the path-centric model on a small instance and compare with baselines."""

import logging

from deepnt import evaluate as ev
from deepnt import learner

logging.basicConfig(level=logging.INFO, format="%(message)s")

optim = learner.OptimConfig(eta=1e-2, optimizer="adam", omega=1.0, max_epochs=150, patience=20,
                            N=3, hidden=32)
base = dict(n=40, p=0.12, kind="additive", delta=0.3, Delta=0.2, seeds=(0,))

# one seed end to end: simulate, corrupt, sample, train, score
inst = ev.build_instance(ev.ExperimentConfig(**base), seed=0)
print("train/val/test pairs:", len(inst.obs.train), len(inst.obs.validation), len(inst.obs.test))

res = learner.train(inst.obs, inst.topo.A_obs, "additive", optim, seed=0, log_every=25)
print("best epoch", res.best_epoch, "of", len(res.history) - 1)

pairs = [(u, v) for u, v, _ in inst.obs.test]
truth = [y for *_, y in inst.obs.test]
print("deepnt test MAPE", round(ev.mape(res.predict(pairs), truth), 4))

# the same instance through the baselines
for method in ("nmf", "mlp", "mean"):
    rec = ev.run_experiment(ev.ExperimentConfig(**base, method=method, optim=optim))
    print(f"{method:5s} test MAPE", round(rec.aggregate["mape"], 4))
