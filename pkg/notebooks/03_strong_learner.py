# %% [markdown]
# # Training the strong learner on a synthetic corpus
#
# The toy corpus is harmonic tones in noise. The true MOS rises linearly
# with SNR, and listeners add their own bias. The toy backend stands in for
# a pretrained speech model.

# %%
import logging
import tempfile

import numpy as np

from utmos.dataset import load_splits, load_waveforms, mean_listener_targets
from utmos.metrics import metric_report
from utmos.strong import StrongCheckpoint, toy_strong_config, train_strong
from utmos.synthetic import make_toy_corpus
from utmos.textproc import PhonemeProvider, extract_references

logging.basicConfig(level=logging.INFO, format="%(message)s")
root = tempfile.mkdtemp()
corpus = make_toy_corpus(root, n_train=200, n_dev=50, n_test=50, seed=0)
ds = load_splits(corpus.ratings, corpus.audio_dir)
print(len(ds), "utterances,", len(ds.listeners), "listeners")

# %%
provider = PhonemeProvider.from_file(corpus.transcripts)
refs = extract_references(provider.records())
cfg = toy_strong_config()
ckpt = train_strong(ds, cfg, None, refs, phonemes=provider, seed=0)
print("kept step", ckpt.step, "dev system SRCC %.3f" % ckpt.dev_system_srcc)

# %% [markdown]
# Test-split scores use the mean-listener embedding.

# %%
ckpt.save(f"{root}/strong.json")
scorer = StrongCheckpoint.load(f"{root}/strong.json").to_scorer()
test = ds.ids("test")
waves = load_waveforms(ds, test)
ref_of = {r.utterance_id: r.reference for r in refs}
pred = scorer.predict_waves([waves[u] for u in test], ["main"] * len(test),
                            [provider(u) for u in test], [ref_of[u] for u in test])
report = metric_report(dict(zip(test, pred)), mean_listener_targets(ds, test), ds.system_of())
print(report.as_table())
print("mean |prediction - noiseless MOS|: %.3f" % np.mean([abs(p - corpus.true_mos[u]) for u, p in zip(test, pred)]))
