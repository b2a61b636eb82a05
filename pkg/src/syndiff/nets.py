"""The four network families of the cycle architecture, plus checkpoint I/O.

* GeneratorNet: UNet denoiser conditioned on a source image (2-channel input
  concat) and the diffusion time (sinusoidal encoding through a 2-layer MLP,
  added as a per-channel bias inside every residual subblock).
* DiscriminatorNet: plain conv downsampling stack with a scalar head; the
  diffusive variant takes (candidate, x_t) as a 2-channel pair plus the time
  embedding, the one-shot variant takes a single image and no time.
* ResNetGenerator: one-shot translator with 3 encoding / 6 residual /
  3 decoding blocks.

Desk-scale defaults (32x32, base 32, 3 levels) stand in for the full-size
layout (256x256, six halvings); the structure is identical, only depth and
widths shrink. Channel width doubles every other block, capped at 4x base.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import tensor as T
from .tensor import Tensor

LEAKY_SLOPE = 0.2  # shared discriminator slope
CHANNEL_CAP = 4  # max width multiplier over base


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 32
    base_channels: int = 32
    levels: int = 3
    embed_dim: int = 32
    hidden_dim: int = 128

    def __post_init__(self):
        size = self.image_size
        if size < 16 or (size & (size - 1)) != 0:
            raise ValueError(f"image_size must be a power of two >= 16, got {size}")
        if size >> self.levels < 2:
            raise ValueError(f"image_size {size} too small for {self.levels} halvings")

    def level_channels(self) -> list[int]:
        return [self.base_channels * min(2 ** (i // 2), CHANNEL_CAP) for i in range(self.levels)]


def sinusoidal_encoding(t: float, dim: int) -> np.ndarray:
    """Interleaved sin/cos position encoding at geometric frequencies (base 10000)."""
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = t * freqs
    enc = np.empty(dim, dtype=np.float32)
    enc[0::2] = np.sin(ang)
    enc[1::2] = np.cos(ang)
    return enc.reshape(1, dim)


class _Net:
    """Named-parameter container; construction order fixes checkpoint order."""

    def __init__(self, rng: np.random.Generator):
        self.params: dict[str, Tensor] = {}
        self._rng = rng

    def _conv(self, name: str, out_ch: int, in_ch: int, k: int, scale: float = 1.0, std: float | None = None) -> None:
        if std is None:
            std = scale * math.sqrt(2.0 / (in_ch * k * k))
        self.params[f"{name}.w"] = T.parameter(self._rng.normal(0.0, std, (out_ch, in_ch, k, k)))
        self.params[f"{name}.b"] = T.parameter(np.zeros(out_ch))

    def _tconv(self, name: str, in_ch: int, out_ch: int, k: int = 4) -> None:
        std = math.sqrt(2.0 / (in_ch * k * k))
        self.params[f"{name}.w"] = T.parameter(self._rng.normal(0.0, std, (in_ch, out_ch, k, k)))
        self.params[f"{name}.b"] = T.parameter(np.zeros(out_ch))

    def _linear(self, name: str, in_f: int, out_f: int, std: float | None = None) -> None:
        if std is None:
            std = math.sqrt(1.0 / in_f)
        self.params[f"{name}.w"] = T.parameter(self._rng.normal(0.0, std, (in_f, out_f)))
        self.params[f"{name}.b"] = T.parameter(np.zeros(out_f))

    def _norm(self, name: str, ch: int) -> None:
        self.params[f"{name}.g"] = T.parameter(np.ones(ch))
        self.params[f"{name}.b"] = T.parameter(np.zeros(ch))

    # forward-time helpers

    def conv(self, name: str, x: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
        out = T.conv2d(x, self.params[f"{name}.w"], stride=stride, padding=padding)
        return T.bias_add(out, self.params[f"{name}.b"])

    def tconv(self, name: str, x: Tensor) -> Tensor:
        out = T.conv_transpose2d(x, self.params[f"{name}.w"], stride=2, padding=1)
        return T.bias_add(out, self.params[f"{name}.b"])

    def linear(self, name: str, x: Tensor) -> Tensor:
        return T.bias_add(T.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def norm(self, name: str, x: Tensor) -> Tensor:
        return T.instance_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _res_names(prefix: str, net: _Net, c_in: int, c_out: int, temporal: bool) -> None:
    net._norm(f"{prefix}.norm1", c_in)
    net._conv(f"{prefix}.conv1", c_out, c_in, 3)
    if temporal:
        net._linear(f"{prefix}.temb", net.cfg.hidden_dim, c_out)  # type: ignore[attr-defined]
    net._norm(f"{prefix}.norm2", c_out)
    net._conv(f"{prefix}.conv2", c_out, c_out, 3, scale=0.1)
    if c_in != c_out:
        net._conv(f"{prefix}.skip", c_out, c_in, 1)


def _res_forward(prefix: str, net: _Net, x: Tensor, temb: Tensor | None) -> Tensor:
    h = net.conv(f"{prefix}.conv1", T.swish(net.norm(f"{prefix}.norm1", x)))
    if temb is not None:
        bias = net.linear(f"{prefix}.temb", temb)
        h = T.bias_add(h, T.reshape(bias, (-1,)))
    h = net.conv(f"{prefix}.conv2", T.swish(net.norm(f"{prefix}.norm2", h)))
    skip = net.conv(f"{prefix}.skip", x, padding=0) if f"{prefix}.skip.w" in net.params else x
    return T.add(h, skip)


class GeneratorNet(_Net):
    """UNet estimator G(x_t, y, t); output saturates to [-1, 1] unless the
    net is built to predict unbounded targets (the noise-prediction baseline)."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator, saturate: bool = True):
        super().__init__(rng)
        self.cfg = cfg
        self.saturate = saturate
        ch = cfg.level_channels()
        self._linear("temb.lin1", cfg.embed_dim, cfg.hidden_dim)
        self._linear("temb.lin2", cfg.hidden_dim, cfg.hidden_dim)
        self._conv("stem", ch[0], 2, 3)
        prev = ch[0]
        for i, c in enumerate(ch):
            _res_names(f"down{i}.res0", self, prev, c, temporal=True)
            _res_names(f"down{i}.res1", self, c, c, temporal=True)
            self._conv(f"down{i}.pool", c, c, 3)
            prev = c
        _res_names("mid.res0", self, prev, prev, temporal=True)
        _res_names("mid.res1", self, prev, prev, temporal=True)
        for i in reversed(range(cfg.levels)):
            c = ch[i]
            self._tconv(f"up{i}.grow", prev, c)
            _res_names(f"up{i}.res0", self, 2 * c, c, temporal=True)
            _res_names(f"up{i}.res1", self, c, c, temporal=True)
            prev = c
        self._norm("out.norm", prev)
        self._conv("out.conv", 1, prev, 3, std=0.02)

    def time_embedding(self, t: float) -> Tensor:
        enc = Tensor(sinusoidal_encoding(t, self.cfg.embed_dim))
        h = T.swish(self.linear("temb.lin1", enc))
        return self.linear("temb.lin2", h)

    def __call__(self, x_t: Tensor, y: Tensor, t: float) -> Tensor:
        if x_t.shape != y.shape:
            raise T.ShapeError("generator_forward", f"x_t {x_t.shape} vs y {y.shape}")
        temb = self.time_embedding(t)
        h = self.conv("stem", T.concat([x_t, y], axis=1))
        skips = []
        for i in range(self.cfg.levels):
            h = _res_forward(f"down{i}.res0", self, h, temb)
            h = _res_forward(f"down{i}.res1", self, h, temb)
            skips.append(h)
            h = self.conv(f"down{i}.pool", h, stride=2)
        h = _res_forward("mid.res0", self, h, temb)
        h = _res_forward("mid.res1", self, h, temb)
        for i in reversed(range(self.cfg.levels)):
            h = self.tconv(f"up{i}.grow", h)
            h = T.concat([h, skips[i]], axis=1)
            h = _res_forward(f"up{i}.res0", self, h, temb)
            h = _res_forward(f"up{i}.res1", self, h, temb)
        out = self.conv("out.conv", T.swish(self.norm("out.norm", h)))
        return T.tanh(out) if self.saturate else out


class DiscriminatorNet(_Net):
    """Conv downsampling stack ending in one logit per batch element."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator, in_channels: int = 2, with_time: bool = True):
        super().__init__(rng)
        self.cfg = cfg
        self.in_channels = in_channels
        self.with_time = with_time
        self.blocks = max(2, int(math.log2(cfg.image_size)) - 2)  # down to 4x4
        base = cfg.base_channels
        ch = [base * min(2 ** (i // 2), CHANNEL_CAP) for i in range(self.blocks)]
        if with_time:
            self._linear("temb.lin1", cfg.embed_dim, cfg.hidden_dim)
            self._linear("temb.lin2", cfg.hidden_dim, cfg.hidden_dim)
        prev = in_channels
        for i, c in enumerate(ch):
            self._conv(f"block{i}.conv_a", c, prev, 3)
            if with_time:
                self._linear(f"block{i}.temb", cfg.hidden_dim, c)
            self._conv(f"block{i}.conv_b", c, c, 3)
            prev = c
        tail = cfg.image_size >> self.blocks
        self._linear("head", prev * tail * tail, 1, std=0.02)

    def time_embedding(self, t: float) -> Tensor:
        enc = Tensor(sinusoidal_encoding(t, self.cfg.embed_dim))
        h = T.swish(self.linear("temb.lin1", enc))
        return self.linear("temb.lin2", h)

    def __call__(self, candidate: Tensor, x_t: Tensor | None = None, t: float | None = None) -> Tensor:
        if self.with_time:
            if x_t is None or t is None:
                raise T.ShapeError("discriminator_forward", "this discriminator needs (candidate, x_t, t)")
            if candidate.shape != x_t.shape:
                raise T.ShapeError("discriminator_forward", f"candidate {candidate.shape} vs x_t {x_t.shape}")
            h = T.concat([candidate, x_t], axis=1)
            temb = self.time_embedding(t)
        else:
            h = candidate
            temb = None
        if h.shape[1] != self.in_channels:
            raise T.ShapeError("discriminator_forward", f"expected {self.in_channels} input channels, got {h.shape[1]}")
        for i in range(self.blocks):
            h = T.leaky_relu(self.conv(f"block{i}.conv_a", h), LEAKY_SLOPE)
            if temb is not None:
                bias = self.linear(f"block{i}.temb", temb)
                h = T.bias_add(h, T.reshape(bias, (-1,)))
            h = T.leaky_relu(self.conv(f"block{i}.conv_b", h, stride=2), LEAKY_SLOPE)
        n = h.shape[0]
        logits = self.linear("head", T.reshape(h, (n, -1)))
        return T.reshape(logits, (n,))


class ResNetGenerator(_Net):
    """One-shot translator: 3 encoding, 6 residual, 3 decoding blocks."""

    N_RESIDUAL = 6

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        super().__init__(rng)
        self.cfg = cfg
        b = cfg.base_channels
        self._conv("enc0", b, 1, 3)
        self._norm("enc0.norm", b)
        self._conv("enc1", 2 * b, b, 3)
        self._norm("enc1.norm", 2 * b)
        self._conv("enc2", 2 * b, 2 * b, 3)
        self._norm("enc2.norm", 2 * b)
        for i in range(self.N_RESIDUAL):
            _res_names(f"res{i}", self, 2 * b, 2 * b, temporal=False)
        self._tconv("dec0", 2 * b, 2 * b)
        self._norm("dec0.norm", 2 * b)
        self._tconv("dec1", 2 * b, b)
        self._norm("dec1.norm", b)
        self._conv("dec2", 1, b, 3, std=0.02)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.swish(self.norm("enc0.norm", self.conv("enc0", x)))
        h = T.swish(self.norm("enc1.norm", self.conv("enc1", h, stride=2)))
        h = T.swish(self.norm("enc2.norm", self.conv("enc2", h, stride=2)))
        for i in range(self.N_RESIDUAL):
            h = _res_forward(f"res{i}", self, h, None)
        h = T.swish(self.norm("dec0.norm", self.tconv("dec0", h)))
        h = T.swish(self.norm("dec1.norm", self.tconv("dec1", h)))
        return T.tanh(self.conv("dec2", h))


def generator_forward(g: GeneratorNet, x_t, y, t: float) -> Tensor:
    return g(_t(x_t), _t(y), t)


def discriminator_forward(d: DiscriminatorNet, candidate, x_t=None, t: float | None = None) -> Tensor:
    return d(_t(candidate), _t(x_t) if x_t is not None else None, t)


def resnet_forward(g: ResNetGenerator, x) -> Tensor:
    return g(_t(x))


def temporal_embedding(t: float, embed_dim: int, net: GeneratorNet | DiscriminatorNet) -> Tensor:
    """Embed a grid time through a net's own encoding MLP."""
    if embed_dim != net.cfg.embed_dim:
        raise T.ShapeError("temporal_embedding", f"embed_dim {embed_dim} != net config {net.cfg.embed_dim}")
    return net.time_embedding(t)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- the full cycle bundle ----------------------------------------------------


@dataclass
class CycleNets:
    """All eight networks; *_a nets produce/judge modality-A images."""

    cfg: NetConfig
    gen_diff_a: GeneratorNet
    gen_diff_b: GeneratorNet
    gen_ab: ResNetGenerator  # A image in, B-style estimate out
    gen_ba: ResNetGenerator
    disc_diff_a: DiscriminatorNet
    disc_diff_b: DiscriminatorNet
    disc_a: DiscriminatorNet
    disc_b: DiscriminatorNet

    _GEN_KEYS = ("gen_diff_a", "gen_diff_b", "gen_ab", "gen_ba")
    _DISC_KEYS = ("disc_diff_a", "disc_diff_b", "disc_a", "disc_b")

    def named(self) -> dict[str, _Net]:
        return {k: getattr(self, k) for k in self._GEN_KEYS + self._DISC_KEYS}

    def generator_params(self) -> dict[str, Tensor]:
        return self._collect(self._GEN_KEYS)

    def discriminator_params(self) -> dict[str, Tensor]:
        return self._collect(self._DISC_KEYS)

    def all_params(self) -> dict[str, Tensor]:
        return self._collect(self._GEN_KEYS + self._DISC_KEYS)

    def _collect(self, keys) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key in keys:
            for name, p in getattr(self, key).params.items():
                out[f"{key}.{name}"] = p
        return out


def build_cycle_nets(cfg: NetConfig, rng: np.random.Generator) -> CycleNets:
    return CycleNets(
        cfg=cfg,
        gen_diff_a=GeneratorNet(cfg, rng),
        gen_diff_b=GeneratorNet(cfg, rng),
        gen_ab=ResNetGenerator(cfg, rng),
        gen_ba=ResNetGenerator(cfg, rng),
        disc_diff_a=DiscriminatorNet(cfg, rng, in_channels=2, with_time=True),
        disc_diff_b=DiscriminatorNet(cfg, rng, in_channels=2, with_time=True),
        disc_a=DiscriminatorNet(cfg, rng, in_channels=1, with_time=False),
        disc_b=DiscriminatorNet(cfg, rng, in_channels=1, with_time=False),
    )


# -- checkpoint format --------------------------------------------------------
#
# magic "SYNDIFF1"
# u32 number of config integers, then that many u32 values:
#   image_size, base_channels, levels, embed_dim, hidden_dim,
#   T, k, beta_min (f32 bits), beta_max (f32 bits)
# parameter records until EOF:
#   u32 name length, UTF-8 name, u32 rank, u32 dims x rank, f32 payload
# All integers and floats little-endian; round-trip is bit-exact.

MAGIC = b"SYNDIFF1"


def _f32_bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def _bits_f32(b: int) -> float:
    return struct.unpack("<f", struct.pack("<I", b))[0]


def save_checkpoint(path: str, nets: CycleNets, schedule_params: dict) -> None:
    cfg = nets.cfg
    header = [
        cfg.image_size,
        cfg.base_channels,
        cfg.levels,
        cfg.embed_dim,
        cfg.hidden_dim,
        int(schedule_params["T"]),
        int(schedule_params["k"]),
        _f32_bits(float(schedule_params["beta_min"])),
        _f32_bits(float(schedule_params["beta_max"])),
    ]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(struct.pack(f"<{len(header)}I", *header))
        for name, p in nets.all_params().items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", p.ndim))
            f.write(struct.pack(f"<{p.ndim}I", *p.shape))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def _read_exact(f: IO[bytes], n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str) -> tuple[CycleNets, dict]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (n_cfg,) = struct.unpack("<I", _read_exact(f, 4, "header size"))
        vals = struct.unpack(f"<{n_cfg}I", _read_exact(f, 4 * n_cfg, "header"))
        if n_cfg != 9:
            raise CheckpointError(f"{path}: unsupported header with {n_cfg} fields")
        cfg = NetConfig(
            image_size=vals[0], base_channels=vals[1], levels=vals[2], embed_dim=vals[3], hidden_dim=vals[4]
        )
        sched = {"T": vals[5], "k": vals[6], "beta_min": _bits_f32(vals[7]), "beta_max": _bits_f32(vals[8])}
        records: dict[str, np.ndarray] = {}
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading record header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "record name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"dims of {name}"))
            count = int(np.prod(dims)) if rank else 1
            payload = _read_exact(f, 4 * count, f"payload of {name}")
            records[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    nets = build_cycle_nets(cfg, np.random.default_rng(0))
    expected = nets.all_params()
    if set(records) != set(expected):
        missing = sorted(set(expected) - set(records))[:3]
        extra = sorted(set(records) - set(expected))[:3]
        raise CheckpointError(f"{path}: parameter names do not match architecture (missing {missing}, extra {extra})")
    for name, p in expected.items():
        if records[name].shape != p.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}: {records[name].shape} vs {p.shape}")
        p.data = np.ascontiguousarray(records[name])
    return nets, sched
