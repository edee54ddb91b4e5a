"""Dataset container, binary readers/writers, resizing and synthetic data.

Supported on-disk layouts
-------------------------
idx
    Directory with MNIST-style files ``train-images-idx3-ubyte``,
    ``train-labels-idx1-ubyte``, ``t10k-images-idx3-ubyte`` and
    ``t10k-labels-idx1-ubyte`` (optionally gzipped, ``.gz`` suffix).
cifar_bin
    Directory with ``data_batch_*.bin`` and ``test_batch.bin``; each record is
    one label byte followed by 3072 channel-planar pixel bytes.
dset
    Little-endian ``DSET`` records. A dataset file holds the train record
    followed by the test record.
png_dir
    ``root/<class>/<image>.png``, or ``root/{train,test}/<class>/<image>.png``.
"""

import gzip
import io
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DSET_MAGIC = b"DSET"
DSET_VERSION = 1
_DSET_HEADER = struct.Struct("<4s6I")
FORMATS = ("idx", "cifar_bin", "dset", "png_dir")


@dataclass(frozen=True)
class Dataset:
    """Images are NHWC, uint8 (raw) or float in [0, 1]; labels are ints in [0, num_classes)."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    id: str = "dataset"

    def __post_init__(self):
        for name in ("x_train", "x_test"):
            x = getattr(self, name)
            if x.ndim != 4:
                raise DataError(f"{name} must be (n, h, w, c), got shape {x.shape}")
        if self.x_train.shape[1:] != self.x_test.shape[1:]:
            raise DataError(f"train/test image shapes differ: {self.x_train.shape[1:]} vs {self.x_test.shape[1:]}")
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        for x, y, split in ((self.x_train, self.y_train, "train"), (self.x_test, self.y_test, "test")):
            if len(x) < 1:
                raise DataError(f"{split} split is empty")
            if y.shape != (len(x),):
                raise DataError(f"{split}: {len(x)} images but labels of shape {y.shape}")
            if y.min() < 0 or y.max() >= self.num_classes:
                raise DataError(f"{split} labels must lie in [0, {self.num_classes})")

    @property
    def image_shape(self):
        return self.x_train.shape[1:]

    @property
    def dim(self):
        h, w, c = self.image_shape
        return h * w * c

    @property
    def n_train(self):
        return len(self.x_train)

    @property
    def n_test(self):
        return len(self.x_test)

    def with_images(self, x_train, x_test):
        return replace(self, x_train=x_train, x_test=x_test)


def to_float(images):
    """uint8 -> float64 in [0, 1]; float input is passed through as float64."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images.astype(np.float64) / 255.0
    return images.astype(np.float64, copy=False)


def to_uint8(images):
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------- idx

def _open_maybe_gz(path):
    path = Path(path)
    if path.exists():
        return open(path, "rb")
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gzip.open(gz, "rb")
    raise FileNotFoundError(path)


def read_idx(path, expected_magic=None):
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: missing IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: only unsigned-byte IDX payloads are supported (magic 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims).copy()


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _load_idx(root, num_classes):
    root = Path(root)
    parts = {}
    for split, prefix in (("train", "train"), ("test", "t10k")):
        x = read_idx(root / f"{prefix}-images-idx3-ubyte", IDX_IMAGES_MAGIC)
        y = read_idx(root / f"{prefix}-labels-idx1-ubyte", IDX_LABELS_MAGIC)
        parts[split] = (x[..., None], y.astype(np.int64))
    return _assemble(parts, num_classes, root.name)


# ---------------------------------------------------------------- cifar

_CIFAR_RECORD = 1 + 3 * 32 * 32


def read_cifar_bin(path):
    raw = Path(path).read_bytes()
    if len(raw) % _CIFAR_RECORD:
        raise TruncatedFileError(f"{path}: size {len(raw)} is not a multiple of {_CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).copy()
    return images, rec[:, 0].astype(np.int64)


def write_cifar_bin(path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    planar = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planar], axis=1)
    Path(path).write_bytes(rec.tobytes())


def _load_cifar(root, num_classes):
    root = Path(root)
    train_files = sorted(root.glob("data_batch_*.bin"))
    if not train_files or not (root / "test_batch.bin").exists():
        raise FileNotFoundError(f"{root}: expected data_batch_*.bin and test_batch.bin")
    xs, ys = zip(*(read_cifar_bin(f) for f in train_files))
    parts = {
        "train": (np.concatenate(xs), np.concatenate(ys)),
        "test": read_cifar_bin(root / "test_batch.bin"),
    }
    return _assemble(parts, num_classes or 10, root.name)


# ---------------------------------------------------------------- dset

def write_dset_record(fh, images, labels, num_classes):
    images = to_uint8(images)
    n, h, w, c = images.shape
    fh.write(_DSET_HEADER.pack(DSET_MAGIC, DSET_VERSION, n, h, w, c, num_classes))
    fh.write(np.asarray(labels, dtype="<u4").tobytes())
    fh.write(images.tobytes())


def read_dset_record(fh, name="<dset>"):
    """Read one DSET record; returns ``(images, labels, num_classes)``."""
    head = fh.read(_DSET_HEADER.size)
    if len(head) < 4:
        raise TruncatedFileError(f"{name}: missing DSET header")
    if head[:4] != DSET_MAGIC:
        raise FormatError(f"{name}: bad magic {head[:4]!r}, expected {DSET_MAGIC!r}")
    if len(head) < _DSET_HEADER.size:
        raise TruncatedFileError(f"{name}: truncated DSET header")
    _, version, n, h, w, c, num_classes = _DSET_HEADER.unpack(head)
    if version != DSET_VERSION:
        raise FormatError(f"{name}: unsupported DSET version {version}")
    labels = fh.read(4 * n)
    pixels = fh.read(n * h * w * c)
    if len(labels) < 4 * n or len(pixels) < n * h * w * c:
        raise TruncatedFileError(f"{name}: payload shorter than header announces")
    y = np.frombuffer(labels, dtype="<u4").astype(np.int64)
    if n and y.max() >= num_classes:
        raise DataError(f"{name}: label {y.max()} >= num_classes {num_classes}")
    x = np.frombuffer(pixels, dtype=np.uint8).reshape(n, h, w, c).copy()
    return x, y, num_classes


def save_dset(dataset, path):
    with open(path, "wb") as fh:
        write_dset_record(fh, dataset.x_train, dataset.y_train, dataset.num_classes)
        write_dset_record(fh, dataset.x_test, dataset.y_test, dataset.num_classes)


def dset_bytes(dataset):

    buf = io.BytesIO()
    write_dset_record(buf, dataset.x_train, dataset.y_train, dataset.num_classes)
    write_dset_record(buf, dataset.x_test, dataset.y_test, dataset.num_classes)
    return buf.getvalue()


def _load_dset(path, num_classes):
    path = Path(path)
    with open(path, "rb") as fh:
        x_tr, y_tr, c_tr = read_dset_record(fh, str(path))
        x_te, y_te, c_te = read_dset_record(fh, str(path))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after test record")
    if c_tr != c_te:
        raise FormatError(f"{path}: train/test records disagree on class count ({c_tr} vs {c_te})")
    if num_classes is not None and num_classes != c_tr:
        raise DataError(f"{path}: file declares {c_tr} classes, caller expects {num_classes}")
    return Dataset(x_tr, y_tr, x_te, y_te, c_tr, id=path.stem)


# ---------------------------------------------------------------- png

def _read_png_tree(root):
    from PIL import Image

    classes = sorted(d.name for d in Path(root).iterdir() if d.is_dir())
    images, labels = [], []
    for label, cls in enumerate(classes):
        for f in sorted((Path(root) / cls).glob("*.png")):
            with Image.open(f) as im:
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB")
                images.append(np.asarray(im, dtype=np.uint8))
            labels.append(label)
    return classes, images, labels


def _stack_images(images, where):
    if not images:
        raise DataError(f"{where}: no PNG images found")
    rgb = any(im.ndim == 3 for im in images)
    out = []
    for im in images:
        if im.ndim == 2:
            im = np.repeat(im[..., None], 3, axis=2) if rgb else im[..., None]
        out.append(im)
    if len({im.shape for im in out}) != 1:
        raise DataError(f"{where}: images have differing sizes")
    return np.stack(out)


def _load_png_dir(root, num_classes):
    root = Path(root)
    if (root / "train").is_dir() and (root / "test").is_dir():
        cls_tr, im_tr, y_tr = _read_png_tree(root / "train")
        cls_te, im_te, y_te = _read_png_tree(root / "test")
        if cls_tr != cls_te:
            raise DataError(f"{root}: train and test class directories differ")
        x = _stack_images(im_tr + im_te, root)
        x_tr, x_te = x[:len(im_tr)], x[len(im_tr):]
        classes = cls_tr
    else:
        # no explicit split: per class, the last ceil(20%) files (sorted by name) form the test split
        classes, images, labels = _read_png_tree(root)
        x = _stack_images(images, root)
        y = np.asarray(labels)
        test_mask = np.zeros(len(y), dtype=bool)
        for c in range(len(classes)):
            idx = np.flatnonzero(y == c)
            k = max(1, int(np.ceil(0.2 * len(idx)))) if len(idx) > 1 else 0
            test_mask[idx[len(idx) - k:]] = True
        x_tr, x_te = x[~test_mask], x[test_mask]
        y_tr, y_te = y[~test_mask], y[test_mask]
    parts = {"train": (x_tr, np.asarray(y_tr, dtype=np.int64)), "test": (x_te, np.asarray(y_te, dtype=np.int64))}
    return _assemble(parts, num_classes or len(classes), root.name)


def write_png_dir(dataset, root, class_names=None):
    from PIL import Image

    root = Path(root)
    names = class_names or [f"class_{c:03d}" for c in range(dataset.num_classes)]
    for split, x, y in (("train", dataset.x_train, dataset.y_train), ("test", dataset.x_test, dataset.y_test)):
        for i, (im, label) in enumerate(zip(to_uint8(x), y)):
            d = root / split / names[label]
            d.mkdir(parents=True, exist_ok=True)
            Image.fromarray(im[..., 0] if im.shape[2] == 1 else im).save(d / f"{i:06d}.png")


# ---------------------------------------------------------------- dispatch

def _assemble(parts, num_classes, name):
    (x_tr, y_tr), (x_te, y_te) = parts["train"], parts["test"]
    inferred = int(max(y_tr.max(), y_te.max())) + 1
    if num_classes is None:
        num_classes = max(inferred, 2)
    elif inferred > num_classes:
        raise DataError(f"{name}: label {inferred - 1} >= num_classes {num_classes}")
    return Dataset(x_tr, y_tr, x_te, y_te, int(num_classes), id=name)


def infer_format(path):
    path = Path(path)
    if path.suffix == ".dset":
        return "dset"
    if path.is_dir():
        if any(path.glob("train-images-idx3-ubyte*")):
            return "idx"
        if (path / "test_batch.bin").exists():
            return "cifar_bin"
        return "png_dir"
    raise FormatError(f"cannot infer dataset format for {path}")


def load_dataset(path, format=None, num_classes=None):
    """Load a dataset from ``path`` in one of ``FORMATS`` (inferred when omitted)."""
    fmt = format or infer_format(path)
    loaders = {"idx": _load_idx, "cifar_bin": _load_cifar, "dset": _load_dset, "png_dir": _load_png_dir}
    if fmt not in loaders:
        raise ValueError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return loaders[fmt](path, num_classes)


# ---------------------------------------------------------------- resizing / subsampling

def _bilinear_weights(n_in, n_out):
    # half-pixel centres (align_corners=False), source coordinates clamped at the border
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(images, out_h, out_w):
    """Bilinearly resize NHWC (or a single HWC / HW) images; returns float64."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    x = to_float(images)
    if x.size == 0:
        raise ValueError("cannot resize an empty image array")
    squeeze = x.ndim < 4
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[None]
    _, h, w, _ = x.shape
    if (h, w) == (out_h, out_w):
        out = x.copy()
    else:
        lo, hi, fy = _bilinear_weights(h, out_h)
        fy = fy[None, :, None, None]
        rows = x[:, lo] * (1 - fy) + x[:, hi] * fy
        lo, hi, fx = _bilinear_weights(w, out_w)
        fx = fx[None, None, :, None]
        out = rows[:, :, lo] * (1 - fx) + rows[:, :, hi] * fx
    if squeeze:
        out = out[0]
        if np.asarray(images).ndim == 2:
            out = out[..., 0]
    return out


def resize_dataset(dataset, out_h, out_w):
    if dataset.image_shape[:2] == (out_h, out_w):
        return dataset
    return dataset.with_images(resize_bilinear(dataset.x_train, out_h, out_w),
                               resize_bilinear(dataset.x_test, out_h, out_w))


def subsample_indices(n, n_max, seed):
    """Sorted train indices of a uniform draw without replacement (all indices if ``n <= n_max``)."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if n <= n_max:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=n_max, replace=False))


def subsample(dataset, n_max, seed):
    """Random subset of the train split of at most ``n_max`` samples; test split untouched."""
    idx = subsample_indices(dataset.n_train, n_max, seed)
    if len(idx) == dataset.n_train:
        return dataset
    return replace(dataset, x_train=dataset.x_train[idx], y_train=dataset.y_train[idx])


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic classification problem.

    Each class has ``modes`` prototype images ``0.5 + separation * u`` where
    ``u`` is a smooth random pattern with unit RMS. Samples are a prototype,
    circularly shifted by up to ``shift`` pixels per axis, plus i.i.d.
    Gaussian pixel noise, clamped to [0, 1]. A ``flip_rate`` fraction of
    train labels is moved uniformly to other classes.
    """

    num_classes: int = 4
    samples_per_class: int = 100
    side: int = 16
    separation: float = 0.2
    sigma: float = 0.1
    flip_rate: float = 0.0
    seed: int = 0
    channels: int = 1
    shift: int = 0
    modes: int = 1
    pattern_cells: int = 4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be >= 2 (one train and one test sample)")
        if self.sigma < 0 or self.separation < 0:
            raise ValueError("sigma and separation must be >= 0")
        if not 0.0 <= self.flip_rate < 1.0:
            raise ValueError("flip_rate must lie in [0, 1)")
        if self.modes < 1 or self.shift < 0 or self.side < 1 or self.channels < 1:
            raise ValueError("modes, side, channels must be >= 1 and shift >= 0")


def _smooth_pattern(rng, side, channels, cells):
    cells = max(1, min(cells, side))
    coarse = rng.standard_normal((cells, cells, channels))
    pattern = resize_bilinear(coarse, side, side)
    pattern = pattern - pattern.mean()
    rms = np.sqrt((pattern ** 2).mean())
    return pattern / rms if rms > 0 else pattern


def make_prototypes(spec):
    """Prototype images, shape ``(num_classes, modes, side, side, channels)`` in [0, 1]."""
    rng = np.random.default_rng([spec.seed, 0])
    protos = np.empty((spec.num_classes, spec.modes, spec.side, spec.side, spec.channels))
    for c in range(spec.num_classes):
        for m in range(spec.modes):
            protos[c, m] = 0.5 + spec.separation * _smooth_pattern(rng, spec.side, spec.channels,
                                                                   spec.pattern_cells)
    return np.clip(protos, 0.0, 1.0)


def synth_generate(spec, dataset_id=None):
    """Generate a stratified 80/20 train/test split from ``spec`` (deterministic in ``spec.seed``)."""
    protos = make_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n_test_c = max(1, int(round(0.2 * spec.samples_per_class)))
    n_train_c = spec.samples_per_class - n_test_c
    if n_train_c < 1:
        raise ValueError("samples_per_class too small for an 80/20 split")

    def draw(counts):
        labels = np.repeat(np.arange(spec.num_classes), counts)
        n = len(labels)
        mode = rng.integers(spec.modes, size=n)
        x = protos[labels, mode]
        if spec.shift:
            offsets = rng.integers(-spec.shift, spec.shift + 1, size=(n, 2))
            x = np.stack([np.roll(im, tuple(o), axis=(0, 1)) for im, o in zip(x, offsets)])
        x = x + spec.sigma * rng.standard_normal(x.shape)
        order = rng.permutation(n)
        return to_uint8(x[order]), labels[order]

    x_train, y_train = draw(n_train_c)
    x_test, y_test = draw(n_test_c)
    n_flip = int(round(spec.flip_rate * len(y_train)))
    if n_flip:
        flip = rng.choice(len(y_train), size=n_flip, replace=False)
        offset = rng.integers(1, spec.num_classes, size=n_flip)
        y_train = y_train.copy()
        y_train[flip] = (y_train[flip] + offset) % spec.num_classes
    return Dataset(x_train, y_train, x_test, y_test, spec.num_classes, id=dataset_id or f"synth_{spec.seed}")


# ---------------------------------------------------------------- presets

NOISE_LADDER_SIGMAS = (0.02, 0.05, 0.1, 0.2, 0.4, 0.8)

# members of the mixed-difficulty family: noise alone, then shift, modes and label noise
FAMILY_MEMBERS = (
    {"sigma": 0.15},
    {"sigma": 0.3},
    {"sigma": 0.5},
    {"sigma": 0.8},
    {"sigma": 0.3, "shift": 1},
    {"sigma": 0.3, "modes": 2},
    {"sigma": 0.3, "flip_rate": 0.2},
    {"sigma": 0.5, "shift": 1, "modes": 2},
)


def noise_ladder(seed):
    """Six 4-class 8x8 sets that differ only in pixel noise, easiest first."""
    return [(f"ladder_s{s:g}", SynthSpec(samples_per_class=500, side=8, separation=0.1, sigma=s, seed=seed + i))
            for i, s in enumerate(NOISE_LADDER_SIGMAS)]


def family(seed):
    """Eight 4-class 8x8 sets of mixed difficulty for regression studies."""
    out = []
    for i, kw in enumerate(FAMILY_MEMBERS):
        name = "family_" + "_".join(f"{k}{v:g}" for k, v in kw.items())
        out.append((name, SynthSpec(samples_per_class=2000, side=8, separation=0.1, seed=seed + i, **kw)))
    return out


def noiseless(seed):
    """A single noise-free 4-class set that any probe should learn perfectly."""
    return [("noiseless", SynthSpec(samples_per_class=500, side=8, separation=0.1, sigma=0.0, seed=seed))]


PRESETS = {"noise-ladder": noise_ladder, "family": family, "noiseless": noiseless}
