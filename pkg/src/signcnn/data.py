"""Sign Language MNIST CSV ingestion and binary PGM decoding."""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

log = logging.getLogger(__name__)

N_PIXELS = 784
IMAGE_SHAPE = (28, 28, 1)
KEEP_LABELS = range(24)


class DataFormatError(ValueError):
    """Malformed CSV content."""


class ImageFormatError(ValueError):
    """Base class for undecodable images."""


class UnsupportedImageError(ImageFormatError):
    pass


class BadMaxvalError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


@dataclass(frozen=True)
class RawRecord:
    label: int
    pixels: np.ndarray  # 784 uint8 values


@dataclass(frozen=True)
class RawRecords:
    """Parsed CSV rows, column-stacked for speed."""

    labels: np.ndarray  # [N] int64
    pixels: np.ndarray  # [N, 784] uint8

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> RawRecord:
        return RawRecord(int(self.labels[i]), self.pixels[i])

    def __iter__(self) -> Iterator[RawRecord]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_records(cls, records) -> "RawRecords":
        records = list(records)
        labels = np.array([r.label for r in records], dtype=np.int64)
        pixels = np.array([r.pixels for r in records], dtype=np.uint8).reshape(-1, N_PIXELS)
        return cls(labels, pixels)


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, 28, 28, 1] float32 in [0, 1]
    labels: np.ndarray  # [N] int64 in 0..23
    dropped: int = 0

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _check_row(fields: list[str], row: int) -> None:
    if len(fields) != N_PIXELS + 1:
        raise DataFormatError(
            f"row {row}: expected {N_PIXELS + 1} columns, found {len(fields)}"
        )
    for col, cell in enumerate(fields):
        try:
            v = int(cell)
        except ValueError:
            raise DataFormatError(
                f"row {row}, column {col + 1}: non-integer cell {cell.strip()!r}"
            ) from None
        if col > 0 and not 0 <= v <= 255:
            raise DataFormatError(
                f"row {row}, column {col + 1}: pixel value {v} outside 0..255"
            )


def load_csv(path) -> RawRecords:
    """Parse a ``label,pixel1,...,pixel784`` CSV with a header row.

    Rows are numbered from 1, counting data rows only (the header is row 0).
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    body = lines[1:]
    # trailing blank lines are tolerated, interior ones are not
    while body and not body[-1].strip():
        body.pop()
    if not body:
        return RawRecords(np.zeros(0, np.int64), np.zeros((0, N_PIXELS), np.uint8))
    try:
        arr = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.int64, ndmin=2)
        ok = arr.shape[1] == N_PIXELS + 1 and arr.shape[0] == len(body)
        ok = ok and bool(((arr[:, 1:] >= 0) & (arr[:, 1:] <= 255)).all())
    except ValueError:
        ok = False
    if not ok:
        # slow path, only to locate the offending row
        for i, line in enumerate(body, start=1):
            _check_row(line.split(","), i)
        raise DataFormatError(f"{path}: could not parse CSV")
    return RawRecords(arr[:, 0].copy(), arr[:, 1:].astype(np.uint8))


def prepare(records: RawRecords) -> Dataset:
    """Keep labels 0..23, scale pixels to [0, 1] and reshape to 28x28x1."""
    if not isinstance(records, RawRecords):
        records = RawRecords.from_records(records)
    keep = np.isin(records.labels, KEEP_LABELS)
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d record(s) with labels outside 0..23", dropped)
    images = (records.pixels[keep].astype(np.float32) / np.float32(255.0)).reshape(
        -1, *IMAGE_SHAPE
    )
    return Dataset(images, records.labels[keep].astype(np.int64), dropped)


def load_dataset(path) -> Dataset:
    return prepare(load_csv(path))


def stratified_subset(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Draw ``n`` samples with class proportions kept (largest remainder)."""
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)
    n = min(n, len(ds))
    quota = counts * n / len(ds)
    take = np.floor(quota).astype(int)
    for i in np.argsort(-(quota - take), kind="stable")[: n - take.sum()]:
        take[i] += 1
    idx = []
    for c, k in zip(classes, take):
        members = np.flatnonzero(ds.labels == c)
        idx.append(rng.choice(members, size=k, replace=False))
    idx = np.sort(np.concatenate(idx))
    return ds.subset(idx)


# ----------------------------------------------------------------------
# PGM


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: bytes  # row-major, one byte per pixel

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ValueError(
                f"{len(self.pixels)} pixels for a {self.width}x{self.height} image"
            )

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "GrayImage":
        a = np.asarray(a, dtype=np.uint8)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        return cls(a.shape[1], a.shape[0], a.tobytes())


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _parse_pgm(data: bytes, pos: int = 0) -> tuple[GrayImage, int]:
    """Decode one P5 image starting at ``pos``; return it and the end offset."""
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise TruncatedImageError("PGM header is incomplete")
        tokens.append(m.group(1))
        pos = m.end()
        if tokens[0] != b"P5":
            raise UnsupportedImageError(
                f"unsupported image format {tokens[0][:8]!r}; "
                "only binary PGM (P5) is accepted"
            )
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"bad PGM header values {tokens[1:]!r}") from None
    if maxval != 255:
        raise BadMaxvalError(f"PGM maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"degenerate PGM dimensions {width}x{height}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise TruncatedImageError("PGM header is not followed by pixel data")
    pos += 1
    n = width * height
    payload = data[pos : pos + n]
    if len(payload) != n:
        raise TruncatedImageError(
            f"PGM declares {width}x{height} ({n} bytes) but only {len(payload)} follow"
        )
    return GrayImage(width, height, bytes(payload)), pos + n


def decode_gray_image(data: bytes) -> GrayImage:
    img, _ = _parse_pgm(bytes(data))
    return img


def encode_pgm(img: GrayImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.pixels


def read_pgm(path) -> GrayImage:
    return decode_gray_image(Path(path).read_bytes())


def iter_pgm_stream(stream: BinaryIO | bytes, resync: bool = False) -> Iterator:
    """Decode a concatenation of P5 images.

    By default a decoding error is raised.  With ``resync=True`` the error
    object is yielded in place of the frame and decoding resumes at the
    next ``P5`` magic number.
    """
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    data = bytes(data)
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            return
        try:
            img, pos = _parse_pgm(data, pos)
        except ImageFormatError as err:
            if not resync:
                raise
            yield err
            nxt = data.find(b"P5", pos + 1)
            pos = len(data) if nxt < 0 else nxt
            continue
        yield img
