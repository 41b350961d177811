# %% [markdown]
# # Reference transcripts and audio augmentation
#
# Noisy phoneme transcripts of the same sentence are clustered with DBSCAN
# under normalized edit distance. Each cluster's medoid becomes the reference
# that the phoneme encoder compares against.

# %%
import numpy as np

from utmos.augment import AugmentConfig, augment, change_speed, sample_augmentation, shift_pitch
from utmos.synthetic import BASE_TEXTS, make_transcript_groups
from utmos.textproc import extract_references, levenshtein

# %%
records, origin = make_transcript_groups(20, BASE_TEXTS, max_edits=2, seed=0)
for r in records[:4]:
    print(r.utterance_id, " ".join(r.phonemes))

refs = extract_references(records, eps=0.3, min_pts=2)
print("clusters:", sorted({r.cluster_id for r in refs}))
for cid in sorted({r.cluster_id for r in refs}):
    ref = next(r.reference for r in refs if r.cluster_id == cid)
    base = BASE_TEXTS[origin[[r.cluster_id for r in refs].index(cid)]]
    print(cid, " ".join(ref), "| distance to source text:", levenshtein(ref, base))

# %% [markdown]
# ## Speed and pitch
#
# Speed changes keep pitch and scale the length by 1/f_t. Pitch shifts keep
# the length. Both go through the same phase vocoder.

# %%
sr = 16000
t = np.arange(sr) / sr
tone = 0.5 * np.sin(2 * np.pi * 440 * t)

for f_t in (0.9, 1.0, 1.1):
    print(f"f_t={f_t}: {tone.size} -> {change_speed(tone, f_t).size} samples (expected {tone.size / f_t:.0f})")

shifted = shift_pitch(tone, 300.0)
spec = np.abs(np.fft.rfft(shifted * np.hanning(shifted.size), 1 << 18))
print("peak after +300 cents: %.1f Hz" % (np.argmax(spec) * sr / (1 << 18)))

# %%
cfg = AugmentConfig(f_t=0.1, f_p=300.0)
rng = np.random.default_rng(4)
for _ in range(3):
    state = rng.bit_generator.state
    f_t, f_p = sample_augmentation(cfg, rng)
    rng.bit_generator.state = state
    out = augment(tone, cfg, rng)
    print(f"f_t={f_t:.3f} f_p={f_p:+.0f} cents -> {out.size} samples")
