"""Build the canonical CNN and walk a batch through it layer by layer.

    python demos/01_architecture.py
"""

import numpy as np

from signcnn.model import build_model, count_parameters
from signcnn.train import Adam

model = build_model(seed=0)
print(model.summary())
print()

# Push two random images through and look at every intermediate shape.
# Dropout keeps the shape of its input; in inference mode it does nothing.
batch = np.random.default_rng(0).random((2, 28, 28, 1), dtype=np.float32)
trace = []
probs = model.forward(batch, trace=trace)
for layer, out in zip(model.layers, trace):
    print(f"{layer.kind:10s} -> {list(out.shape)}")

print()
print("rows sum to one:", np.allclose(probs.sum(axis=1), 1.0))
print("trainable parameters:", count_parameters(model))

# Adam keeps two moment tensors per parameter, so the optimizer state is
# twice the parameter count.  Keras reports two more (its iteration counter
# and a second scalar), which is where 1,182,026 comes from.
opt = Adam()
opt.init(model.parameters())
model.optimizer = opt
print("with optimizer state:", count_parameters(model, include_optimizer_state=True))
