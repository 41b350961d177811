# %% [markdown]
# # Metrics and training losses
#
# Utterance- and system-level correlation metrics, then the pairwise hinge
# loss and the clipped squared error that the strong learner optimizes.

# %%
import numpy as np

from utmos.losses import LossConfig, clipped_mse, combined_loss, contrastive_batch, frame_combined_loss
from utmos.metrics import all_metrics, system_aggregate

rng = np.random.default_rng(0)

# %% [markdown]
# Fake predictions for 40 utterances from 5 systems. Ratings are on the 1-5 scale.

# %%
ids = [f"u{i:02d}" for i in range(40)]
system_of = {u: f"sys{i % 5}" for i, u in enumerate(ids)}
quality = {f"sys{k}": q for k, q in enumerate([1.5, 2.2, 3.0, 3.8, 4.5])}
true = {u: float(np.clip(quality[system_of[u]] + rng.normal(0, 0.4), 1, 5)) for u in ids}
pred = {u: float(np.clip(true[u] + rng.normal(0, 0.5), 1, 5)) for u in ids}

print("utterance level:", all_metrics([pred[u] for u in ids], [true[u] for u in ids]))
ps, ts = system_aggregate(pred, true, system_of)
print("system level:   ", all_metrics([ps[s] for s in ts], [ts[s] for s in ts]))

# %% [markdown]
# Averaging per system removes most of the utterance noise, so the system
# correlations come out much higher.

# %%
s = np.array([0.5, -0.2, 0.9])   # normalized targets
p = np.array([0.3, -0.1, 0.2])   # predictions
print("pairwise hinge:", contrastive_batch(s, p, alpha=0.5))
print("clipped squared error:", clipped_mse(s, p, tau=0.25))
print("combined:", combined_loss(s, p, LossConfig()))

# %% [markdown]
# With every frame predicting the same value, the frame-level loss is the
# utterance-level loss.

# %%
frames = [np.full(n, v) for n, v in zip((30, 51, 7), p)]
print(frame_combined_loss(s, frames, LossConfig()) == combined_loss(s, p, LossConfig()))
