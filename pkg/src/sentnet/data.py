"""Dataset manifest, image codecs, preprocessing, crops, and fold splits.

Images flow through the pipeline as float32 [3,H,W] tensors on the raw
0..255 scale; per-channel means are subtracted when views are assembled.
The only required codec is binary PPM (P6, 8-bit); a raw-tensor sidecar
holds pre-decoded images, and PNG/JPEG decode is available when Pillow is
installed.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

Array = np.ndarray

RAW_TENSOR_SUFFIX = ".rawt"

_LABEL_TOKENS = {"positive": 1, "negative": 0, "1": 1, "0": 0}


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    fold: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Parsed manifest plus the directory its relative paths resolve against."""

    records: tuple[ManifestRecord, ...]
    root: Path

    @property
    def labels(self) -> Array:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def folds(self) -> Array | None:
        if any(r.fold is None for r in self.records):
            return None
        return np.array([r.fold for r in self.records], dtype=np.int64)

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for r in self.records:
            counts[r.label] = counts.get(r.label, 0) + 1
        return dict(sorted(counts.items()))

    def resolve(self, record: ManifestRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def with_folds(self, folds: Sequence[int]) -> "DatasetManifest":
        if len(folds) != len(self.records):
            raise DataError(f"{len(folds)} fold ids for {len(self.records)} records")
        recs = tuple(
            ManifestRecord(r.path, r.label, int(f)) for r, f in zip(self.records, folds)
        )
        return DatasetManifest(records=recs, root=self.root)


def load_manifest(path: str | Path, allow_multiclass: bool = False) -> DatasetManifest:
    """Parse a CSV manifest with header path,label[,fold].

    Labels accept positive/negative/1/0; with allow_multiclass=True any
    nonnegative integer token is accepted (used only for source-task
    pretraining data). Errors carry 1-based line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        header = [h.strip().lower() for h in header]
        if header[:2] != ["path", "label"] or (len(header) > 2 and header[2] != "fold"):
            raise DataError(f"{path}: header must be path,label[,fold], got {header}")
        has_fold = len(header) > 2
        records: list[ManifestRecord] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rec_path = row[0].strip()
            if not rec_path:
                raise DataError(f"{path}:{lineno}: empty image path")
            token = row[1].strip().lower()
            if token in _LABEL_TOKENS:
                label = _LABEL_TOKENS[token]
            elif allow_multiclass and token.isdigit():
                label = int(token)
            else:
                raise DataError(f"{path}:{lineno}: bad label {row[1]!r}")
            fold: int | None = None
            if has_fold and row[2].strip():
                try:
                    fold = int(row[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad fold {row[2]!r}") from None
                if fold < 0:
                    raise DataError(f"{path}:{lineno}: negative fold {fold}")
            records.append(ManifestRecord(rec_path, label, fold))
    if not records:
        raise DataError(f"{path}: manifest has no records")
    manifest = DatasetManifest(records=tuple(records), root=path.parent)
    counts = manifest.class_counts()
    log.info(
        "manifest %s: %d records, per-class counts %s",
        path.name,
        len(records),
        " ".join(f"{k}:{v}" for k, v in counts.items()),
    )
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        has_fold = manifest.folds is not None
        writer.writerow(["path", "label", "fold"] if has_fold else ["path", "label"])
        for r in manifest.records:
            row = [r.path, str(r.label)]
            if has_fold:
                row.append(str(r.fold))
            writer.writerow(row)


# -- image codecs -----------------------------------------------------------


def read_ppm(path: str | Path) -> Array:
    """Binary PPM (P6, maxval 255) to uint8 [H,W,3]."""
    data = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        return data[start:pos]

    if token() != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise DataError(f"{path}: PPM payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, image: Array) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"write_ppm expects [H,W,3], got {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(image.tobytes())


def write_raw_tensor(path: str | Path, tensor: Array) -> None:
    """Sidecar format: rank u8, extents u64 LE, float32 LE payload."""
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_raw_tensor(path: str | Path) -> Array:
    data = Path(path).read_bytes()
    if len(data) < 1:
        raise DataError(f"{path}: empty raw tensor file")
    rank = data[0]
    header = 1 + 8 * rank
    if rank == 0 or len(data) < header:
        raise DataError(f"{path}: malformed raw tensor header")
    extents = struct.unpack(f"<{rank}Q", data[1:header])
    count = int(np.prod(extents))
    if len(data) != header + 4 * count:
        raise DataError(f"{path}: raw tensor payload size mismatch")
    return np.frombuffer(data, dtype="<f4", offset=header).reshape(extents).astype(np.float32)


def load_image(path: str | Path) -> Array:
    """Decode one image file to float32 [3,H,W] on the 0..255 scale."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        hwc = read_ppm(path)
        return np.ascontiguousarray(hwc.transpose(2, 0, 1)).astype(np.float32)
    if suffix == RAW_TENSOR_SUFFIX:
        chw = read_raw_tensor(path)
        if chw.ndim != 3 or chw.shape[0] != 3:
            raise DataError(f"{path}: raw tensor image must be [3,H,W], got {chw.shape}")
        return chw
    if suffix in (".png", ".jpg", ".jpeg"):
        try:
            from PIL import Image
        except ImportError:
            raise DataError(
                f"{path}: decoding {suffix} needs the optional Pillow dependency "
                "(pip install sentnet[images])"
            ) from None
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
        return np.ascontiguousarray(rgb.transpose(2, 0, 1)).astype(np.float32)
    raise DataError(f"{path}: unsupported image format {suffix!r}")


# -- geometry ---------------------------------------------------------------


def resize_bilinear(image: Array, out_h: int, out_w: int) -> Array:
    """Bilinear resample of [3,H,W] with half-pixel-centered sampling."""
    image = np.asarray(image, dtype=np.float32)
    c, h, w = image.shape
    if out_h < 1 or out_w < 1:
        raise DataError(f"resize target {out_h}x{out_w} invalid")
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis_coords(n_in: int, n_out: int) -> tuple[Array, Array, Array]:
        scale = n_in / n_out
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    ylo, yhi, yf = axis_coords(h, out_h)
    xlo, xhi, xf = axis_coords(w, out_w)
    top = image[:, ylo][:, :, xlo] * (1 - xf) + image[:, ylo][:, :, xhi] * xf
    bot = image[:, yhi][:, :, xlo] * (1 - xf) + image[:, yhi][:, :, xhi] * xf
    return (top * (1 - yf[None, :, None]) + bot * yf[None, :, None]).astype(np.float32)


def resize_shorter_side(image: Array, target: int) -> Array:
    c, h, w = image.shape
    if h <= w:
        out_h = target
        out_w = max(1, round(w * target / h))
    else:
        out_w = target
        out_h = max(1, round(h * target / w))
    return resize_bilinear(image, out_h, out_w)


def center_square(image: Array, side: int) -> Array:
    c, h, w = image.shape
    if side > h or side > w:
        raise DataError(f"cannot crop {side} square from {h}x{w} image")
    top = (h - side) // 2
    left = (w - side) // 2
    return image[:, top : top + side, left : left + side]


# -- preprocessing ----------------------------------------------------------


@dataclass(frozen=True)
class PreprocessConfig:
    """Square working size, final crop, and optional fixed channel means."""

    resize_to: int = 256
    crop: int = 227
    channel_means: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.resize_to < 1 or self.crop < 1:
            raise ConfigError(f"invalid sizes resize_to={self.resize_to} crop={self.crop}")
        if self.crop > self.resize_to:
            raise ConfigError(f"crop {self.crop} exceeds resize_to {self.resize_to}")


@dataclass(frozen=True)
class ImageView:
    """One network-ready view and the provenance tag of how it was cut."""

    tensor: Array
    tag: str


def to_square(image: Array, config: PreprocessConfig) -> Array:
    """Resize the shorter side to resize_to, then take the center square."""
    return center_square(resize_shorter_side(image, config.resize_to), config.resize_to)


def _subtract(view: Array, means: Array | None) -> Array:
    out = np.ascontiguousarray(view, dtype=np.float32)
    if means is not None:
        out = out - np.asarray(means, dtype=np.float32).reshape(3, 1, 1)
    return out


def preprocess(
    image: Array,
    config: PreprocessConfig,
    mode: str = "test",
    rng: np.random.Generator | None = None,
    means: Array | None = None,
) -> ImageView:
    """One training or evaluation view of a decoded image.

    Test mode takes the center crop; train mode takes a seeded random crop
    with a seeded horizontal flip. means overrides config.channel_means.
    """
    square = to_square(image, config)
    slack = config.resize_to - config.crop
    if mode == "test":
        top = left = slack // 2
        flip = False
        tag = "center"
    elif mode == "train":
        if rng is None:
            raise ConfigError("train-mode preprocessing needs an rng")
        top = int(rng.integers(0, slack + 1))
        left = int(rng.integers(0, slack + 1))
        flip = bool(rng.integers(0, 2))
        tag = f"crop{top}x{left}" + ("-flip" if flip else "")
    else:
        raise ConfigError(f"unknown preprocess mode {mode!r}")
    view = square[:, top : top + config.crop, left : left + config.crop]
    if flip:
        view = view[:, :, ::-1]
    if means is None and config.channel_means is not None:
        means = np.asarray(config.channel_means, dtype=np.float32)
    return ImageView(tensor=_subtract(view, means), tag=tag)


def ten_crop(square: Array, crop: int, means: Array | None = None) -> list[ImageView]:
    """The four corner crops, the center crop, then their mirror images.

    Order is fixed: tl, tr, bl, br, center, tl-flip, tr-flip, bl-flip,
    br-flip, center-flip. Each mirror is the column-reversal of its source
    crop.
    """
    c, h, w = square.shape
    if crop > h or crop > w:
        raise DataError(f"cannot cut {crop} crops from {h}x{w} image")
    last_r, last_c = h - crop, w - crop
    offsets = [
        ("tl", 0, 0),
        ("tr", 0, last_c),
        ("bl", last_r, 0),
        ("br", last_r, last_c),
        ("center", last_r // 2, last_c // 2),
    ]
    views: list[ImageView] = []
    crops: list[tuple[str, Array]] = []
    for tag, top, left in offsets:
        cut = square[:, top : top + crop, left : left + crop]
        crops.append((tag, cut))
        views.append(ImageView(tensor=_subtract(cut, means), tag=tag))
    for tag, cut in crops:
        views.append(ImageView(tensor=_subtract(cut[:, :, ::-1], means), tag=f"{tag}-flip"))
    return views


# -- channel means ----------------------------------------------------------


def compute_channel_means(squares: Iterable[Array]) -> Array:
    """Per-channel scalar means over a collection of [3,S,S] images."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for img in squares:
        total += img.reshape(3, -1).sum(axis=1, dtype=np.float64)
        count += img.shape[1] * img.shape[2]
    if count == 0:
        raise DataError("cannot compute channel means of an empty image set")
    return (total / count).astype(np.float32)


def write_means(path: str | Path, means: Array) -> None:
    means = np.asarray(means, dtype=np.float32)
    if means.shape != (3,):
        raise DataError(f"means must have shape (3,), got {means.shape}")
    Path(path).write_text("".join(f"{float(m)!r}\n" for m in means), encoding="utf-8")


def read_means(path: str | Path) -> Array:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    if len(lines) != 3:
        raise DataError(f"{path}: means file must hold three values, found {len(lines)}")
    try:
        return np.array([float(l) for l in lines], dtype=np.float32)
    except ValueError:
        raise DataError(f"{path}: malformed means file") from None


# -- folds ------------------------------------------------------------------


def stratified_kfold(labels: Array, k: int, seed: int) -> Array:
    """Deterministic stratified fold assignment; returns fold ids [n].

    Each class is shuffled with the seed and dealt round-robin, so per-class
    fold counts differ by at most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    folds = np.full(len(labels), -1, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise DataError(f"class {cls} has {len(idx)} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        folds[idx] = np.arange(len(idx)) % k
    return folds


# -- train-loop source ------------------------------------------------------


class ViewSource:
    """BatchSource over pre-decoded square images.

    Training batches take seeded random crops and flips; eval batches take
    center crops. Mean subtraction happens at view time.
    """

    def __init__(self, squares: Array, labels: Array, crop: int, means: Array | None = None):
        squares = np.asarray(squares, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        if squares.ndim != 4 or squares.shape[1] != 3:
            raise DataError(f"squares must be [n,3,S,S], got {squares.shape}")
        if len(labels) != len(squares):
            raise DataError(f"{len(labels)} labels for {len(squares)} images")
        side = squares.shape[2]
        if squares.shape[3] != side:
            raise DataError(f"images must be square, got {squares.shape}")
        if crop > side:
            raise DataError(f"crop {crop} exceeds image side {side}")
        self.squares = squares
        self.labels = labels
        self.crop = crop
        self.means = None if means is None else np.asarray(means, dtype=np.float32)

    @property
    def n(self) -> int:
        return len(self.squares)

    def _cut(self, i: int, top: int, left: int, flip: bool) -> Array:
        view = self.squares[i, :, top : top + self.crop, left : left + self.crop]
        if flip:
            view = view[:, :, ::-1]
        return view

    def train_batch(self, indices: Array, rng: np.random.Generator) -> tuple[Array, Array]:
        slack = self.squares.shape[2] - self.crop
        tops = rng.integers(0, slack + 1, size=len(indices))
        lefts = rng.integers(0, slack + 1, size=len(indices))
        flips = rng.integers(0, 2, size=len(indices))
        batch = np.stack(
            [self._cut(int(i), int(t), int(l), bool(f)) for i, t, l, f in zip(indices, tops, lefts, flips)]
        )
        return _subtract_batch(batch, self.means), self.labels[indices]

    def eval_batches(self, batch_size: int = 64):
        slack = self.squares.shape[2] - self.crop
        top = left = slack // 2
        for start in range(0, self.n, batch_size):
            idx = np.arange(start, min(start + batch_size, self.n))
            batch = self.squares[idx, :, top : top + self.crop, left : left + self.crop]
            yield _subtract_batch(batch, self.means), self.labels[idx]

    def square(self, i: int) -> Array:
        return self.squares[i]


def _subtract_batch(batch: Array, means: Array | None) -> Array:
    out = np.ascontiguousarray(batch, dtype=np.float32)
    if means is not None:
        out = out - means.reshape(1, 3, 1, 1)
    return out


def decode_squares(manifest: DatasetManifest, config: PreprocessConfig) -> Array:
    """Decode and square every manifest image: float32 [n,3,S,S]."""
    out = np.empty((len(manifest.records), 3, config.resize_to, config.resize_to), dtype=np.float32)
    for i, rec in enumerate(manifest.records):
        img = load_image(manifest.resolve(rec))
        out[i] = to_square(img, config)
    return out
