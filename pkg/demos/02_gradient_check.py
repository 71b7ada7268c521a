"""Compare hand-written backward passes against central finite differences.

    python demos/02_gradient_check.py
"""

import numpy as np

from signcnn.gradcheck import numerical_gradient, relative_error
from signcnn.layers import Conv2D, conv2d_backward, conv2d_forward
from signcnn.model import build_model
from signcnn.train import sparse_ce_from_logits

rng = np.random.default_rng(0)

# --- one convolution layer, every entry checked ---------------------------
layer = Conv2D(2, 3, activation="relu", rng=rng, dtype=np.float64)
x = rng.normal(size=(1, 6, 6, 2))
upstream = rng.normal(size=(1, 4, 4, 3))


def loss():
    # a random linear functional of the output, so every output gets a weight
    return float((conv2d_forward(x, layer) * upstream).sum())


grads = conv2d_backward(x, layer, upstream)
print("conv2d input   ", f"{relative_error(grads.input, numerical_gradient(loss, x)):.2e}")
for name in ("weights", "bias"):
    num = numerical_gradient(loss, layer.params[name])
    print(f"conv2d {name:8s}", f"{relative_error(grads.params[name], num):.2e}")

# --- the whole model, a few sampled parameters ----------------------------
# Float64 copy of the canonical model; dropout uses a fixed generator so the
# mask is identical on every call.
model = build_model(seed=1, dtype=np.float64).train()
images = rng.random((4, 28, 28, 1))
labels = rng.integers(0, 24, 4)


def model_loss():
    model.forward(images, rng=np.random.default_rng(7))
    return sparse_ce_from_logits(model.logits(), labels)[0]


model_loss()
_, logit_grad = sparse_ce_from_logits(model.logits(), labels)
model.backward(logit_grad)
dense_w = model.parameters()[-2]
analytic = model.gradients()[-2].copy()

picks = [tuple(rng.integers(0, s) for s in dense_w.shape) for _ in range(5)]
numeric = numerical_gradient(model_loss, dense_w, indices=picks)
worst = max(relative_error(analytic[i], numeric[i]) for i in picks)
print(f"model, output dense weights (5 samples): {worst:.2e}")
