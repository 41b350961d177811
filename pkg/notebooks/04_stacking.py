# %% [markdown]
# # Weak learners and stacking
#
# Mean-pooled embeddings from three toy backends feed the six regression
# methods. The stack combines their out-of-fold predictions in two more stages.

# %%
import tempfile
import warnings

import numpy as np

from utmos.backends import get_backend
from utmos.dataset import load_splits, load_waveforms, mean_listener_targets
from utmos.metrics import mse, srcc
from utmos.stacking import StackingPlan, WeakStackLearner, fit_stack, stack_predict
from utmos.synthetic import make_toy_corpus
from utmos.weak import METHODS, build_learner_bank, extract_embeddings

warnings.filterwarnings("ignore", category=UserWarning)

corpus = make_toy_corpus(tempfile.mkdtemp(), n_test=200, ratings_per_utt=8, seed=1)
ds = load_splits(corpus.ratings, corpus.audio_dir)
backends = [get_backend(b) for b in ("toy:dim=64,seed=0", "toy:dim=48,seed=1", "toy:dim=32,seed=2")]
emb = extract_embeddings(load_waveforms(ds), backends)
specs = build_learner_bank([b.backend_id for b in backends], METHODS)
print(len(specs), "weak learners")

# %%
plan = StackingPlan([WeakStackLearner(s, emb[s.backend_id], seed=1) for s in specs], n_folds=5, seed=1)
targets = mean_listener_targets(ds)
fitted = fit_stack(plan, ds.ids("train"), targets)

test = ds.ids("test")
y = np.array([targets[u] for u in test])
single = fitted.stage1_predict(test)
final = stack_predict(fitted, test)
p = np.array([final[u] for u in test])

rows = sorted(((mse(single.matrix[:, j], y), srcc(single.matrix[:, j], y), name)
               for j, name in enumerate(single.columns)))
for m, s, name in rows[:5]:
    print(f"{name:40s} MSE {m:.3f} SRCC {s:.3f}")
print(f"{'stacked':40s} MSE {mse(p, y):.3f} SRCC {srcc(p, y):.3f}")
