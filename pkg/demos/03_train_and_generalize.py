"""
Training on monotonic data, testing on unloading
=================================================

A PRNN with two fictitious points is trained on the 18 proportional
monotonic curves only. Because unloading is handled by the embedded
plasticity model, it should predict curves with unloading about as well as
monotonic ones. Labelling takes about a minute; training length is set by
``EPOCHS`` (the acceptance suite uses 20000).
"""

# %%
import numpy as np

from prnn.experiments import evaluate, label_curves, secant_unloading_error
from prnn.microfe import build_rve
from prnn.network import PrnnConfig
from prnn.pathgen import make_dataset
from prnn.train import TrainSpec, train

EPOCHS = 2000

mesh, pbc = build_rve()
train_set, _ = label_curves(mesh, pbc, make_dataset({"I": "all"}, seed=0))
tests, _ = label_curves(mesh, pbc, make_dataset({"II": 5, "III": 5}, seed=0, split=2))

# %%
spec = TrainSpec(epochs=EPOCHS, batch_size=9, seed=0, config=PrnnConfig(2), log_every=500)
res = train(spec, train_set)
for e in range(0, EPOCHS, 500):
    print(f"epoch {e:5d}  loss {res.loss_history[e]:.4e}")

# %%
# Errors are RMSEs in MPa, averaged over curves.
by_type = {t: [c for c in tests if c.curve_type == t] for t in ("II", "III")}
report = evaluate(res.params, spec.config, by_type)
for name, s in report.sets.items():
    print(f"Type {name}: mean RMSE {s.rmse:.3f} MPa (worst {s.worst:.3f})")
secant = [secant_unloading_error(res.params, spec.config, c, 30, 45) for c in by_type["III"]]
print(f"unloading secant stiffness error: mean {np.mean(secant):.1%}, max {np.max(secant):.1%}")
