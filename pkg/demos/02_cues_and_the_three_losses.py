# From heat maps to cues to a loss value
#
# Each synthetic sample comes with a simulated class heat map peaked near the
# middle of each shape, and a saliency map.  The cue rules turn these into a
# sparse mask, and the three loss terms score a prediction against it.

import numpy as np

from secseg import SynthConfig, generate, make_cues, UNLABELED
from secseg.densecrf import CrfConfig
from secseg.field import resize_field, softmax
from secseg.losses import constrain_loss, expansion_loss, seeding_loss
from secseg.pooling import DecayParams

sample = generate(SynthConfig(rng_seed=3), 1)[0]
print("labels present:", sorted(sample.labels))
print("ground truth, every 4th row and 2nd column (never shown to the trainer):")
print(sample.gt_mask[::4, ::2])

cues = make_cues(sample.heatmaps, sample.saliency)
for c in np.unique(cues):
    name = "unlabelled" if c == UNLABELED else f"class {c}"
    print(f"{name:>10}: {(cues == c).sum()} pixels")

# The foreground cues cover only the core of each shape.  The background cues
# are the least salient tenth of the image.  Everything else stays unlabelled.

# A prediction that has learnt nothing: uniform over the 4 classes.
f = np.full((32, 32, 4), 0.25)
decay = DecayParams(d_plus=0.7, d_minus=0.0, d_bg=0.8)
print(f"uniform: seed {seeding_loss(f, cues)[0]:.3f}  expand {expansion_loss(f, sample.labels, decay)[0]:.3f}")

# A prediction that copies the ground truth, softened a little.
good = softmax(np.eye(4)[sample.gt_mask] * 4.0)
print(f"near-gt: seed {seeding_loss(good, cues)[0]:.3f}  expand {expansion_loss(good, sample.labels, decay)[0]:.3f}")

# The constrain term compares the prediction with its own CRF-refined version
# on a downscaled image, so a blocky prediction that ignores edges pays more.
small = resize_field(sample.image, 16, 16)
blocky = resize_field(resize_field(good, 4, 4, normalize=True), 16, 16, normalize=True)
sharp = resize_field(good, 16, 16, normalize=True)
crf = CrfConfig(spatial_scale=12.0)
print(f"constrain, sharp prediction  {constrain_loss(small, sharp, crf)[0]:.4f}")
print(f"constrain, blocky prediction {constrain_loss(small, blocky, crf)[0]:.4f}")
