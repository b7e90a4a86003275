"""Surrogate objectives and their gradients on a small random batch.

Run: python3 demos/01_gradients.py
"""

# %% A behaviour policy, a slightly drifted current policy, two groups of four
import numpy as np

from lengthbias.diagnostics import finite_difference_gradient, random_batch, relative_error
from lengthbias.objectives import ObjectiveConfig, evaluate_objective, objective_at, objective_gradient
from lengthbias.policy import PolicyParams

rng = np.random.default_rng(0)
params, groups, _ = random_batch(rng, "gspo", drift=0.02)
lengths = [t.length for g in groups for t in g.trajectories]
print("response lengths:", lengths)

# %% The same batch scored by all three objectives
for alg in ("grpo", "gspo", "luspo"):
    rep = evaluate_objective(groups, ObjectiveConfig(alg))
    print(f"{alg:5s} value {rep.value:+.4f}  clipped +{rep.clipped_pos} / -{rep.clipped_neg}")

# %% Analytic gradient against central differences
for alg in ("grpo", "gspo", "luspo"):
    cfg = ObjectiveConfig(alg)
    analytic = objective_gradient(groups, cfg, params)
    numeric = finite_difference_gradient(
        lambda x: objective_at(PolicyParams(x, params.vocab_size, 1, params.n_classes), groups, cfg), params.logits
    )
    print(f"{alg:5s} relative error {relative_error(analytic, numeric):.2e}")

# %% Per-token weights: GSPO divides by length, LUSPO does not
from lengthbias.objectives import per_token_coefficients

t = max((t for g in groups for t in g.trajectories), key=lambda t: t.length)
for alg in ("gspo", "luspo"):
    c = per_token_coefficients(t, ObjectiveConfig(alg, clipping=False))
    print(f"{alg:5s} |y|={t.length} per-token weight {c[0]:+.4f}")
