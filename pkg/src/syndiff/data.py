"""Synthetic two-modality dataset, image file I/O, mean normalization.

Toy images are smooth random blobs labeled into three tissue classes; the
two modalities render the same geometry through different, non-monotone
intensity maps, so translation has to learn structure rather than a global
linear remap. Train pools for the two modalities come from disjoint
geometry seeds (genuinely unpaired); eval pairs share geometry.

Pixel range is [-1, 1] internally. Files are binary PGM (P5, 8- or 16-bit)
or a raw float format: magic "F32I", u32 height, width, reserved
(little-endian), then row-major little-endian f32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS_LEVELS_A = (0.2, 0.5, 0.9)
CLASS_LEVELS_B = (0.8, 0.3, 0.6)
NOISE_SIGMA = 0.02

F32_MAGIC = b"F32I"


class PgmError(ValueError):
    """Malformed PGM file; message carries the byte offset."""


@dataclass
class ImageSample:
    pixels: np.ndarray  # (H, W) float32 in [-1, 1]
    modality: str  # "A" or "B"
    split: str  # "trainA" | "trainB" | "eval"
    pair_id: str | None = None


@dataclass
class TrainingPools:
    """The only view of the data that training code receives: bare arrays."""

    images_a: list[np.ndarray]
    images_b: list[np.ndarray]


@dataclass
class ToyDataset:
    train_a: list[ImageSample]
    train_b: list[ImageSample]
    eval_pairs: list[tuple[ImageSample, ImageSample]]

    def training_pools(self) -> TrainingPools:
        return TrainingPools(
            images_a=[s.pixels for s in self.train_a],
            images_b=[s.pixels for s in self.train_b],
        )


def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gaussian-filtered white noise via the FFT (periodic, but fine for blobs)."""
    noise = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(f, f, indexing="ij")
    keep = np.exp(-((fx**2 + fy**2) * (size / 4.0) ** 2) * 2.0)
    return np.real(np.fft.ifft2(np.fft.fft2(noise) * keep))


def _class_mask(seed_seq, size: int) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    field = _smooth_field(rng, size)
    lo, hi = np.percentile(field, [33.0, 66.0])
    return (field > lo).astype(np.int8) + (field > hi).astype(np.int8)


def _render(mask: np.ndarray, levels, rng: np.random.Generator) -> np.ndarray:
    img = np.choose(mask, levels).astype(np.float64)
    img += rng.normal(0.0, NOISE_SIGMA, mask.shape)
    return np.clip(img * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def generate_toy_dataset(seed: int, n_train_per_modality: int, n_eval_pairs: int, size: int) -> ToyDataset:
    if size < 16 or (size & (size - 1)) != 0:
        raise ValueError(f"size must be a power of two >= 16, got {size}")
    n = n_train_per_modality

    def geometry(idx: int) -> np.ndarray:
        return _class_mask([seed, idx], size)

    def noise_rng(idx: int, channel: int) -> np.random.Generator:
        return np.random.default_rng([seed, idx, channel])

    train_a = [
        ImageSample(_render(geometry(i), CLASS_LEVELS_A, noise_rng(i, 0)), "A", "trainA")
        for i in range(n)
    ]
    train_b = [
        ImageSample(_render(geometry(n + i), CLASS_LEVELS_B, noise_rng(n + i, 1)), "B", "trainB")
        for i in range(n)
    ]
    eval_pairs = []
    for i in range(n_eval_pairs):
        idx = 2 * n + i
        mask = geometry(idx)
        pid = f"pair{i:03d}"
        eval_pairs.append(
            (
                ImageSample(_render(mask, CLASS_LEVELS_A, noise_rng(idx, 0)), "A", "eval", pid),
                ImageSample(_render(mask, CLASS_LEVELS_B, noise_rng(idx, 1)), "B", "eval", pid),
            )
        )
    return ToyDataset(train_a=train_a, train_b=train_b, eval_pairs=eval_pairs)


def class_mask_for(seed: int, split: str, index: int, n_train: int, size: int) -> np.ndarray:
    """Rebuild the class geometry of a generated sample (test/inspection hook)."""
    offset = {"trainA": 0, "trainB": n_train, "eval": 2 * n_train}[split]
    return _class_mask([seed, offset + index], size)


# -- PGM ------------------------------------------------------------------


def save_pgm(path, pixels: np.ndarray, maxval: int = 65535) -> None:
    if not (0 < maxval < 65536):
        raise ValueError(f"maxval must be in [1, 65535], got {maxval}")
    h, w = pixels.shape
    levels = np.rint((pixels.astype(np.float64) + 1.0) / 2.0 * maxval)
    levels = np.clip(levels, 0, maxval)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        if maxval < 256:
            f.write(levels.astype(">u1").tobytes())
        else:
            f.write(levels.astype(">u2").tobytes())


def _pgm_tokens(buf: bytes, count: int):
    """Yield (token, offset) skipping whitespace and # comments."""
    pos = 0
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise PgmError(f"malformed PGM header at byte {start}: expected token")
        out.append((buf[start:pos], start))
    if pos >= len(buf):
        raise PgmError(f"malformed PGM header at byte {pos}: missing payload")
    return out, pos + 1  # single whitespace byte separates header from payload


def load_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, payload_at = _pgm_tokens(buf, 4)
    (magic, at0), (w_tok, at1), (h_tok, at2), (mv_tok, at3) = tokens
    if magic != b"P5":
        raise PgmError(f"malformed PGM header at byte {at0}: magic {magic!r}, want P5")
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(mv_tok)
    except ValueError as e:
        raise PgmError(f"malformed PGM header at byte {at1}: non-numeric field ({e})") from e
    if w <= 0 or h <= 0 or not (0 < maxval < 65536):
        raise PgmError(f"malformed PGM header at byte {at1}: bad dimensions {w}x{h} maxval {maxval}")
    dtype = ">u1" if maxval < 256 else ">u2"
    need = w * h * np.dtype(dtype).itemsize
    payload = buf[payload_at : payload_at + need]
    if len(payload) != need:
        raise PgmError(f"truncated PGM payload at byte {payload_at + len(payload)}: need {need} bytes")
    levels = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return (levels.astype(np.float64) / maxval * 2.0 - 1.0).astype(np.float32)


# -- raw float format --------------------------------------------------------


def save_f32(path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(F32_MAGIC)
        f.write(struct.pack("<III", h, w, 0))
        f.write(np.ascontiguousarray(pixels, dtype="<f4").tobytes())


def load_f32(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != F32_MAGIC:
        raise PgmError(f"{path}: bad magic {buf[:4]!r}, want {F32_MAGIC!r}")
    if len(buf) < 16:
        raise PgmError(f"{path}: truncated header ({len(buf)} bytes)")
    h, w, _ = struct.unpack("<III", buf[4:16])
    need = 16 + 4 * h * w
    if len(buf) != need:
        raise PgmError(f"{path}: payload is {len(buf) - 16} bytes, want {4 * h * w}")
    return np.frombuffer(buf[16:], dtype="<f4").reshape(h, w).copy()


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".f32":
        return load_f32(path)
    return load_pgm(path)


def save_image(path, pixels: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".f32":
        save_f32(path, pixels)
    else:
        save_pgm(path, pixels)


# -- dataset directory layout --------------------------------------------------


def save_dataset(ds: ToyDataset, root) -> None:
    root = Path(root)
    for sub in ("trainA", "trainB", "evalA", "evalB"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(ds.train_a):
        save_pgm(root / "trainA" / f"img{i:04d}.pgm", s.pixels)
    for i, s in enumerate(ds.train_b):
        save_pgm(root / "trainB" / f"img{i:04d}.pgm", s.pixels)
    for a, b in ds.eval_pairs:
        save_pgm(root / "evalA" / f"{a.pair_id}.pgm", a.pixels)
        save_pgm(root / "evalB" / f"{b.pair_id}.pgm", b.pixels)


def load_dataset(root) -> ToyDataset:
    root = Path(root)
    for sub in ("trainA", "trainB", "evalA", "evalB"):
        if not (root / sub).is_dir():
            raise FileNotFoundError(f"dataset directory {root} is missing {sub}/")
    train_a = [
        ImageSample(load_pgm(p), "A", "trainA") for p in sorted((root / "trainA").glob("*.pgm"))
    ]
    train_b = [
        ImageSample(load_pgm(p), "B", "trainB") for p in sorted((root / "trainB").glob("*.pgm"))
    ]
    pairs = []
    for pa in sorted((root / "evalA").glob("*.pgm")):
        pb = root / "evalB" / pa.name
        if not pb.exists():
            raise FileNotFoundError(f"eval pair {pa.name} has no counterpart in evalB/")
        pid = pa.stem
        pairs.append(
            (ImageSample(load_pgm(pa), "A", "eval", pid), ImageSample(load_pgm(pb), "B", "eval", pid))
        )
    return ToyDataset(train_a=train_a, train_b=train_b, eval_pairs=pairs)


# -- normalization -------------------------------------------------------------


def normalize_mean(image: np.ndarray) -> np.ndarray:
    """Scale so the mean is 1 (metrics pathway; expects the [0, 1] shifted range)."""
    m = float(np.mean(image))
    if m == 0.0:
        raise ValueError("cannot mean-normalize a zero-mean image")
    return np.asarray(image, dtype=np.float64) / m


def to_unit_range(image: np.ndarray) -> np.ndarray:
    """Map the internal [-1, 1] range onto [0, 1] for metric computation."""
    return (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
