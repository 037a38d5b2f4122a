"""
Translating synthetic handwriting to machine print
==================================================

A small paired corpus is rendered, the three-player game runs for a few
hundred generator steps, and the held-out reconstruction error is tracked.
The final figure shows input, translation and target side by side.
Expect a few minutes on one CPU core; raise ``STEPS`` for sharper output.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from hw2mp.config import RunConfig
from hw2mp.data import CorpusStats, make_synthetic_corpus, split_dataset, to_tensors
from hw2mp.training import PairedData, build_train_state, generate, heldout_l1, train_gan

STEPS = 300
torch.set_num_threads(1)
cfg = RunConfig()
samples = make_synthetic_corpus(list(cfg.vocab), cfg.n_samples, seed=0)
train, test = split_dataset(samples, cfg.split_ratio, seed=0)
stats = CorpusStats.fit([s.hw_image for s in train] + [s.mp_image for s in train])
hw_tr, mp_tr, labels, boxes = to_tensors(train, stats)
hw_te, mp_te, labels_te, _ = to_tensors(test, stats)

state = build_train_state(cfg.hp, cfg, seed=0)
data = PairedData(hw_tr, mp_tr, labels, boxes, seed=0)
curve = [(0, heldout_l1(state.generator, hw_te, mp_te))]


def track(st):
    if st.step % 50 == 0:
        curve.append((st.step, heldout_l1(st.generator, hw_te, mp_te)))
        print(f"step {st.step:4d}  held-out L1 {curve[-1][1]:.4f}")


train_gan(state, data, STEPS, callback=track)

out = generate(state.generator, hw_te[:4])
fig, axes = plt.subplots(4, 3, figsize=(9, 4))
for i in range(4):
    for j, (img, title) in enumerate([(hw_te[i], "handwritten"), (out[i], "generated"), (mp_te[i], "target")]):
        axes[i, j].imshow(img[0], cmap="gray")
        axes[i, j].set_axis_off()
        if i == 0:
            axes[i, j].set_title(title)
fig.tight_layout()
fig.savefig("translation_samples.png")

fig, ax = plt.subplots(figsize=(4, 3))
ax.plot(*zip(*curve), "o-")
ax.set_xlabel("generator step")
ax.set_ylabel("held-out L1")
fig.tight_layout()
fig.savefig("translation_l1.png")
print("wrote translation_samples.png and translation_l1.png")
