"""Classify a sequence of cropped grayscale frames and speak confident letters.

Frames are arbitrary-size P5 images; they are resized to 28x28 on the way
in.  With an untrained model most frames stay under the 0.8 gate, so the
last layer is nudged to make class 'B' a sure thing.

    python demos/04_stream.py [model.sgn]
"""

import io
import sys

import numpy as np

from signcnn.data import GrayImage, encode_pgm
from signcnn.model import build_model, load
from signcnn.pipeline import SpeakHook, classify_stream, stream_frames

if len(sys.argv) > 1:
    model = load(sys.argv[1])
else:
    model = build_model(seed=0)
    model.layers[-1].params["bias"][1] = 20.0

rng = np.random.default_rng(0)
frames = [encode_pgm(GrayImage.from_array(rng.integers(0, 256, (s, s), dtype=np.uint8))) for s in (28, 64, 96, 150)]
frames.insert(2, b"P6\n1 1\n255\n\x00\x00\x00")  # colour frame: reported and skipped
stream = io.BytesIO(b"".join(frames))

# debounce=1.0 means 'B' is spoken once even though every good frame is 'B'.
# For speech, pass e.g. SpeakHook(mode="command", command="espeak {letter}").
hook = SpeakHook(mode="stdout", debounce=1.0, out=sys.stdout)
for result in classify_stream(model, stream_frames(stream), hook, out=sys.stdout, errors=sys.stdout):
    pass
hook.wait()
