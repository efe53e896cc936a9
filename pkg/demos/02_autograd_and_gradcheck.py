"""
The autograd engine, checked by finite differences
==================================================

Both networks are built from a small numpy autograd library. Every layer's
backward pass is tested against central differences; this is the same check,
run by hand on a miniature embedder.
"""

import numpy as np

from vocalprint.nn import LayerSpec, Network, Tensor
from vocalprint.nn.gradcheck import check_gradients

specs = [
    ("tdnn", LayerSpec("dilated_tdnn_block", {"channels": 4, "kernel": 3, "dilation": 2, "se": True,
                                              "se_bottleneck": 2})),
    ("pool", LayerSpec("attentive_stats_pool", {"channels": 4, "attention": 3})),
    ("embed", LayerSpec("dense", {"in_features": 8, "out_features": 3})),
]
net = Network(specs, seed=0, dtype=np.float64).train()
x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 12)), requires_grad=True)

out = net.forward(x)
print("embeddings:", out.shape)

# %%
# Relative error |analytic - numeric| / (|analytic| + 1e-8), worst element per tensor.
errs = check_gradients(lambda: net.forward(x), {"input": x, **net.parameters()}, eps=1e-5,
                       rng=np.random.default_rng(2))
for name, err in sorted(errs.items(), key=lambda kv: -kv[1]):
    print(f"  {name:<28s} {err:.2e}")
print("worst:", f"{max(errs.values()):.2e}")

# %%
# The max-feature-map activation keeps the larger of each channel pair.
mfm = Network([("mfm", LayerSpec("mfm"))], dtype=np.float64)
print(mfm.forward(np.array([[[1.0, 2.0], [5.0, 0.0]]])).data)
