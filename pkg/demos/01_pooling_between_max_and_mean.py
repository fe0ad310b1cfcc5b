# Global weighted rank pooling, by example
#
# A segmentation network outputs a probability per pixel and class.  To train
# it from image labels alone we need one score per class.  Max pooling looks at
# a single pixel; average pooling looks at all of them equally.  Rank pooling
# sorts the pixels and weights the j-th best by d**j, so d slides between the
# two.

import numpy as np

from secseg import gap, gmp, gwrp, solve_decay
from secseg.field import softmax

rng = np.random.default_rng(0)

# A 6x6 field with 3 classes, and a blob of class 1 in one corner.
scores = rng.normal(size=(6, 6, 3))
scores[:3, :3, 1] += 3.0
f = softmax(scores)

print("class 1 probabilities\n", np.round(f[..., 1], 2))
print(f"max pooling     {gmp(f, 1):.4f}")
print(f"average pooling {gap(f, 1):.4f}")
for d in (0.0, 0.5, 0.8, 0.9, 0.95, 1.0):
    print(f"rank pooling d={d:<4} {gwrp(f, 1, d):.4f}")

# d=0 reproduces the max and d=1 the mean, and the score never goes up as d grows.

# Picking d.  The decay is chosen so the top q fraction of pixels carries a share p of the
# total weight.  For a 41x41 mask, 10% of pixels carrying half the weight gives
# the foreground decay, and 30% gives the background one.
n = 41 * 41
print(f"foreground decay {solve_decay(n, 0.1, 0.5):.5f}")
print(f"background decay {solve_decay(n, 0.3, 0.5):.5f}")

# The toy network here predicts 16x16 masks, so its decays come out lower.
print(f"toy foreground decay {solve_decay(256, 0.1, 0.5):.4f}")
