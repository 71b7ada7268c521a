"""Frame-by-frame inference: preprocess, classify, gate on confidence, speak.

Frames arrive already cropped to the hand (no detector runs here), either
as a directory of ``.pgm`` files or as a concatenated P5 stream.
"""

from __future__ import annotations

import logging
import queue
import shlex
import string
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, TextIO, Union

import numpy as np

from .data import GrayImage, ImageFormatError, decode_gray_image, iter_pgm_stream
from .model import SequentialModel

log = logging.getLogger(__name__)

SIZE = 28
CONFIDENCE_THRESHOLD = 0.8
# class i is the (i+1)-th letter; index 9 ('J') never occurs in the training data
LETTERS = string.ascii_uppercase[:24]


def letter_map(class_index: int) -> str:
    if not 0 <= class_index < len(LETTERS):
        raise ValueError(f"class index {class_index} is outside 0..{len(LETTERS) - 1}")
    return LETTERS[class_index]


# ----------------------------------------------------------------------
# resizing


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """``[n_out, n_in]`` resampling matrix: area average when shrinking,
    bilinear (half-pixel centres) when enlarging."""
    w = np.zeros((n_out, n_in))
    if n_in == n_out:
        return np.eye(n_in)
    if n_in > n_out:
        scale = n_in / n_out
        for i in range(n_out):
            a, b = i * scale, (i + 1) * scale
            for j in range(int(np.floor(a)), min(int(np.ceil(b)), n_in)):
                w[i, j] = (min(b, j + 1) - max(a, j)) / scale
        return w
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        j0 = int(np.floor(src))
        j1 = min(j0 + 1, n_in - 1)
        frac = src - j0
        w[i, j0] += 1 - frac
        w[i, j1] += frac
    return w


def resize(a: np.ndarray, height: int = SIZE, width: int = SIZE) -> np.ndarray:
    """Separable resize of a 2-D array; returns float64."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape == (height, width):
        return a.copy()
    return _axis_weights(a.shape[0], height) @ a @ _axis_weights(a.shape[1], width).T


def preprocess(img: GrayImage) -> np.ndarray:
    """Grayscale frame -> ``[1, 28, 28, 1]`` float32 tensor in [0, 1]."""
    if img.width < 1 or img.height < 1:
        raise ValueError(f"degenerate image {img.width}x{img.height}")
    a = img.to_array()
    if a.shape == (SIZE, SIZE):
        x = a.astype(np.float32) / np.float32(255.0)
    else:
        x = (resize(a) / 255.0).astype(np.float32)
    return x.reshape(1, SIZE, SIZE, 1)


# ----------------------------------------------------------------------
# prediction


@dataclass(frozen=True)
class Prediction:
    class_index: int
    letter: str
    confidence: float


def prediction_from_probabilities(probs: np.ndarray) -> Prediction:
    probs = np.asarray(probs).reshape(-1)
    idx = int(np.argmax(probs))  # first maximum wins ties
    return Prediction(idx, letter_map(idx), float(probs[idx]))


def predict(model: SequentialModel, img: GrayImage) -> Prediction:
    model.eval()
    return prediction_from_probabilities(model.forward(preprocess(img))[0])


# ----------------------------------------------------------------------
# speaking


@dataclass
class SpeakHook:
    """Where high-confidence letters go.

    ``mode`` is ``"stdout"`` (a ``SPEAK <letter> <confidence>`` line on
    ``out``), ``"command"`` (run ``command`` with ``{letter}`` substituted)
    or ``"silent"``.  A letter is spoken at most once per ``debounce``
    seconds; ``debounce=0`` speaks on every qualifying frame.  Commands run
    one at a time on a background thread, in the order they were emitted.
    """

    mode: str = "stdout"
    command: Optional[str] = None
    debounce: float = 1.0
    out: Optional[TextIO] = None
    clock: Callable[[], float] = time.monotonic
    _last: dict = field(default_factory=dict, repr=False)
    _queue: queue.Queue = field(default_factory=queue.Queue, repr=False)
    _thread: Optional[threading.Thread] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("stdout", "command", "silent"):
            raise ValueError(f"unknown speak mode {self.mode!r}")
        if self.mode == "command" and not self.command:
            raise ValueError("command mode needs a command template")
        if self.mode == "command" and "{letter}" not in self.command:
            raise ValueError("command template must contain a {letter} placeholder")

    def _worker(self) -> None:
        while True:
            argv = self._queue.get()
            try:
                proc = subprocess.run(
                    argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, check=False
                )
                if proc.returncode != 0:
                    log.warning("speak command %r exited with status %d", argv, proc.returncode)
            except OSError as err:
                log.warning("speak command %r failed: %s", argv, err)
            finally:
                self._queue.task_done()

    def _run(self, letter: str) -> None:
        # substitute after splitting so the letter can never inject arguments
        argv = [tok.replace("{letter}", letter) for tok in shlex.split(self.command)]
        if self._thread is None:
            self._thread = threading.Thread(target=self._worker, daemon=True)
            self._thread.start()
        self._queue.put(argv)

    def wait(self) -> None:
        """Block until every queued speak command has finished."""
        if self._thread is not None:
            self._queue.join()

    def emit(self, pred: Prediction) -> Optional[str]:
        now = self.clock()
        last = self._last.get(pred.letter)
        if last is not None and self.debounce > 0 and now - last < self.debounce:
            return None
        self._last[pred.letter] = now
        event = f"SPEAK {pred.letter} {pred.confidence:.5f}"
        if self.mode == "stdout":
            print(event, file=self.out if self.out is not None else sys.stdout, flush=True)
        elif self.mode == "command":
            self._run(pred.letter)
        return event


def gate_and_speak(pred: Prediction, hook: SpeakHook) -> Optional[str]:
    """Speak ``pred`` only if its confidence strictly exceeds 0.8."""
    if pred.confidence > CONFIDENCE_THRESHOLD:
        return hook.emit(pred)
    return None


# ----------------------------------------------------------------------
# frame sources and the stream loop

Frame = Union[GrayImage, bytes, Exception]


def directory_frames(path) -> Iterator[tuple[str, Frame]]:
    """``.pgm`` files of a directory in lexicographic order, undecoded."""
    for p in sorted(Path(path).glob("*.pgm"), key=lambda p: p.name):
        try:
            yield p.name, p.read_bytes()
        except OSError as err:
            yield p.name, err


def stream_frames(stream) -> Iterator[tuple[str, Frame]]:
    """Frames of a concatenated P5 stream, numbered from 0."""
    for i, item in enumerate(iter_pgm_stream(stream, resync=True)):
        yield f"{i:06d}", item


@dataclass(frozen=True)
class StreamResult:
    frame_id: str
    prediction: Optional[Prediction]
    error: Optional[str] = None
    event: Optional[str] = None


def classify_stream(
    model: SequentialModel,
    frames: Iterable[tuple[str, Frame]],
    hook: Optional[SpeakHook] = None,
    out: Optional[TextIO] = None,
    errors: Optional[TextIO] = None,
) -> Iterator[StreamResult]:
    """Classify each frame, speak confident ones and write one line per frame.

    ``out`` gets ``frame_id<TAB>letter<TAB>confidence`` for every decodable
    frame, so its line count equals the decodable frame count.  Frames that
    cannot be decoded produce ``frame_id<TAB>ERROR<TAB>message`` on
    ``errors`` instead, and the stream carries on.
    """
    model.eval()
    hook = hook if hook is not None else SpeakHook(mode="silent")
    for frame_id, frame in frames:
        try:
            if isinstance(frame, Exception):
                raise frame
            img = decode_gray_image(frame) if isinstance(frame, (bytes, bytearray)) else frame
            pred = predict(model, img)
        except (ImageFormatError, OSError, ValueError) as err:
            if errors is not None:
                print(f"{frame_id}\tERROR\t{err}", file=errors, flush=True)
            yield StreamResult(frame_id, None, str(err))
            continue
        if out is not None:
            print(f"{frame_id}\t{pred.letter}\t{pred.confidence:.5f}", file=out, flush=True)
        event = gate_and_speak(pred, hook)
        yield StreamResult(frame_id, pred, event=event)
