"""Train on a synthetic stand-in for Sign Language MNIST, then evaluate,
export the history and plot it.

Each of the 24 classes gets a fixed random pattern; samples are shifted and
noisy copies.  The real CSVs drop straight into the same calls via
``signcnn.data.load_dataset``.

    python demos/03_train_synthetic.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from signcnn.data import Dataset
from signcnn.metrics import evaluate, export_history, write_svg
from signcnn.model import build_model, save
from signcnn.pipeline import LETTERS
from signcnn.train import TrainConfig, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
out.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
patterns = rng.random((24, 28, 28))


def sample(n):
    labels = rng.integers(0, 24, n)
    imgs = np.stack([np.roll(patterns[y], rng.integers(-2, 3, size=2), axis=(0, 1)) for y in labels])
    imgs = np.clip(imgs + rng.normal(scale=0.25, size=imgs.shape), 0, 1)
    return Dataset(imgs[..., None].astype(np.float32), labels)


train_set, test_set = sample(2000), sample(500)

cfg = TrainConfig(max_epochs=8, batch_size=32, patience=3, seed=0)
model, history = train(
    build_model(seed=0),
    train_set,
    cfg,
    on_epoch=lambda r: print(f"epoch {r.epoch}: val_loss {r.val_loss:.4f} val_acc {r.val_accuracy:.4f}"),
)
print(f"best epoch {history.best_epoch}, stopped early: {history.stopped_early}")

report = evaluate(model, test_set)
print(report.format(letters=list(LETTERS)))

save(model, out / "model.sgn")
export_history(history, out / "history.tsv")
write_svg(history, out / "history.svg")
print(f"wrote {out}/model.sgn, history.tsv and history.svg")
