"""Reference toy depth network and the frozen-model interface.

The network is a small encoder-decoder with skip connections.  The depth
decoder is built from a :class:`DecoderBlueprint`, the same description that
:mod:`depthood.recon` uses to build the image decoder, so both decoders share
one implementation and differ only in the head.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputError, UsageError

VARIANTS = ("plain", "heteroscedastic", "dropout")

WeightDigest = str


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    skip_level: Optional[int] = None  # 1-based pyramid level
    skip_channels: int = 0
    upsample: int = 2
    kernel_size: int = 3
    activation: str = "relu"
    dropout: float = 0.0


@dataclass(frozen=True)
class HeadSpec:
    in_channels: int
    out_channels: int
    activation: Optional[str]  # "sigmoid" or None
    scale: float = 1.0
    kernel_size: int = 3


@dataclass(frozen=True)
class DecoderBlueprint:
    """Architecture description of a skip-connected decoder.

    ``level_channels`` lists the channel count of every pyramid level the
    decoder may consume; decoding starts from the deepest level.
    """

    level_channels: tuple
    blocks: tuple
    head: HeadSpec

    @property
    def depth(self) -> int:
        return len(self.level_channels)

    @property
    def skip_levels(self) -> tuple:
        return tuple(b.skip_level for b in self.blocks if b.skip_level is not None)

    def validate(self) -> None:
        if not self.blocks:
            raise InputError("blueprint has no blocks")
        # position on the pyramid, expressed as log2 of the downsampling factor
        level = float(self.depth)
        channels = self.level_channels[-1]
        for i, b in enumerate(self.blocks):
            if b.in_channels != channels:
                raise InputError(
                    f"block {i}: expects {b.in_channels} input channels, gets {channels}"
                )
            if b.upsample < 1 or b.kernel_size % 2 == 0:
                raise InputError(f"block {i}: bad upsample/kernel size")
            level -= math.log2(b.upsample)
            if b.skip_level is not None:
                if not 1 <= b.skip_level <= self.depth:
                    raise InputError(f"block {i}: skip level {b.skip_level} does not exist")
                if b.skip_level != level:
                    raise InputError(
                        f"block {i}: skip level {b.skip_level} does not match resolution level {level:g}"
                    )
                if b.skip_channels != self.level_channels[b.skip_level - 1]:
                    raise InputError(f"block {i}: skip channel count mismatch")
            elif b.skip_channels:
                raise InputError(f"block {i}: skip channels given without a skip level")
            channels = b.out_channels
        if level != 0:
            raise InputError("blocks do not restore the input resolution")
        if self.head.in_channels != channels:
            raise InputError("head input channels do not match the last block")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderBlueprint":
        return cls(
            level_channels=tuple(d["level_channels"]),
            blocks=tuple(BlockSpec(**b) for b in d["blocks"]),
            head=HeadSpec(**d["head"]),
        )


def init_uniform_fan_in(module: nn.Module, generator: torch.Generator) -> None:
    """He-uniform weights, zero biases, drawn in definition order."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = math.sqrt(6.0 / fan_in)
                m.weight.copy_(torch.rand(m.weight.shape, generator=generator) * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.zero_()


def _as_channels_last(t):
    return t.contiguous(memory_format=torch.channels_last)


class Encoder(nn.Module):
    """Stack of stride-2 3x3 conv + ReLU blocks; every block output is a level."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64, 128)):
        super().__init__()
        self.channels = tuple(channels)
        ins = (3,) + self.channels[:-1]
        self.convs = nn.ModuleList(
            nn.Conv2d(i, o, 3, stride=2, padding=1) for i, o in zip(ins, self.channels)
        )

    def forward(self, x):
        levels = []
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
            levels.append(h)
        return levels


class Decoder(nn.Module):
    """Decoder realised from a blueprint.

    Dropout is applied only when a generator is passed to ``forward``; a call
    without one is deterministic.
    """

    def __init__(self, bp: DecoderBlueprint):
        super().__init__()
        bp.validate()
        self.bp = bp
        self.convs = nn.ModuleList(
            nn.Conv2d(b.in_channels + b.skip_channels, b.out_channels, b.kernel_size,
                      padding=b.kernel_size // 2)
            for b in bp.blocks
        )
        h = bp.head
        self.head = nn.Conv2d(h.in_channels, h.out_channels, h.kernel_size, padding=h.kernel_size // 2)

    def check_pyramid(self, z) -> None:
        if len(z) != self.bp.depth:
            raise InputError(f"expected {self.bp.depth} pyramid levels, got {len(z)}")
        base = None
        for j, (t, c) in enumerate(zip(z, self.bp.level_channels), start=1):
            if t.dim() != 4 or t.shape[1] != c:
                raise InputError(f"level {j}: expected {c} channels, got shape {tuple(t.shape)}")
            size = (t.shape[2] << j, t.shape[3] << j)
            if base is None:
                base = size
            elif size != base:
                raise InputError(f"level {j}: spatial size inconsistent with level 1")

    def features(self, z, rng: Optional[torch.Generator] = None):
        self.check_pyramid(z)
        h = z[-1]
        for b, conv in zip(self.bp.blocks, self.convs):
            if b.upsample > 1:
                h = F.interpolate(h, scale_factor=b.upsample, mode="nearest")
            if b.skip_level is not None:
                h = torch.cat([h, z[b.skip_level - 1]], dim=1)
            h = conv(h)
            if b.activation == "relu":
                h = F.relu(h)
            if rng is not None and b.dropout > 0:
                keep = torch.rand(h.shape, generator=rng) >= b.dropout
                h = h * keep / (1.0 - b.dropout)
        return h

    def forward(self, z, rng: Optional[torch.Generator] = None):
        out = self.head(self.features(z, rng))
        if self.bp.head.activation == "sigmoid":
            out = torch.sigmoid(out) * self.bp.head.scale
        return out


def reference_blueprint(channels=(16, 32, 64, 128), decoder_channels=(64, 32, 16, 16),
                        skips=True, d_max=10.0, dropout=0.0) -> DecoderBlueprint:
    blocks = []
    prev = channels[-1]
    m = len(channels)
    for i, out in enumerate(decoder_channels):
        level = m - 1 - i
        skip = level if skips and level >= 1 else None
        blocks.append(BlockSpec(
            in_channels=prev,
            out_channels=out,
            skip_level=skip,
            skip_channels=channels[skip - 1] if skip else 0,
            dropout=dropout,
        ))
        prev = out
    head = HeadSpec(in_channels=prev, out_channels=1, activation="sigmoid", scale=float(d_max))
    return DecoderBlueprint(tuple(channels), tuple(blocks), head)


class DepthModel(nn.Module):
    """Toy monocular depth network in one of three variants.

    ``plain`` and ``dropout`` predict depth only; ``heteroscedastic`` adds a
    softplus head predicting a per-pixel Laplace scale.
    """

    def __init__(self, height=64, width=64, d_max=10.0, variant="plain",
                 channels=(16, 32, 64, 128), decoder_channels=(64, 32, 16, 16),
                 skips=True, dropout=0.2, seed=0):
        super().__init__()
        if variant not in VARIANTS:
            raise UsageError(f"unknown model variant {variant!r}")
        m = len(channels)
        if height % (1 << m) or width % (1 << m):
            raise InputError(f"resolution must be divisible by {1 << m}")
        if len(decoder_channels) != m:
            raise InputError("decoder needs one block per encoder level")
        self.height, self.width = int(height), int(width)
        self.d_max = float(d_max)
        self.variant = variant
        self.seed = int(seed)
        self.skips = bool(skips)
        self.dropout = float(dropout) if variant == "dropout" else 0.0
        self.encoder = Encoder(channels)
        self.decoder = Decoder(reference_blueprint(
            channels, decoder_channels, skips, d_max, self.dropout))
        if variant == "heteroscedastic":
            self.scale_head = nn.Conv2d(decoder_channels[-1], 1, 3, padding=1)
        else:
            self.scale_head = None
        init_uniform_fan_in(self, torch.Generator().manual_seed(self.seed))
        self.to(memory_format=torch.channels_last)

    @property
    def resolution(self):
        return self.height, self.width

    def config(self) -> dict:
        return {
            "architecture": "toy-unet",
            "height": self.height,
            "width": self.width,
            "d_max": self.d_max,
            "variant": self.variant,
            "seed": self.seed,
            "channels": ",".join(map(str, self.encoder.channels)),
            "decoder_channels": ",".join(str(b.out_channels) for b in self.decoder.bp.blocks),
            "skips": int(self.skips),
            "dropout": self.dropout,
        }

    def depth_decoder_parameters(self):
        params = list(self.decoder.parameters())
        if self.scale_head is not None:
            params += list(self.scale_head.parameters())
        return params

    def forward(self, x, rng=None):
        return self.decode(self.encoder(x), rng)

    def decode(self, z, rng=None):
        h = self.decoder.features(z, rng)
        depth = torch.sigmoid(self.decoder.head(h)) * self.d_max
        if self.scale_head is None:
            return depth, None
        return depth, F.softplus(self.scale_head(h))


def as_batch(x) -> torch.Tensor:
    """Convert HxWx3 / NxHxWx3 arrays or NCHW tensors to an NCHW float tensor."""
    if isinstance(x, torch.Tensor):
        t = x.float()
        if t.dim() == 3:
            t = t.unsqueeze(0)
    else:
        a = np.asarray(x, dtype=np.float32)
        if a.ndim == 3:
            a = a[None]
        if a.ndim != 4 or a.shape[-1] != 3:
            raise InputError(f"expected HxWx3 image(s), got shape {a.shape}")
        t = torch.from_numpy(np.ascontiguousarray(a)).permute(0, 3, 1, 2)
    if t.dim() != 4 or t.shape[1] != 3:
        raise InputError(f"expected Nx3xHxW tensor, got shape {tuple(t.shape)}")
    return _as_channels_last(t)


def to_hwc(t: torch.Tensor) -> np.ndarray:
    """NCHW tensor -> NxHxWxC float32 array."""
    return t.detach().permute(0, 2, 3, 1).contiguous().numpy().astype(np.float32)


def _check_resolution(model: DepthModel, x: torch.Tensor) -> None:
    if tuple(x.shape[2:]) != model.resolution:
        raise InputError(
            f"input resolution {tuple(x.shape[2:])} differs from training resolution {model.resolution}"
        )


def encode(model: DepthModel, x) -> list:
    """Feature pyramid of ``x`` (NCHW tensor or HWC array(s))."""
    x = as_batch(x)
    _check_resolution(model, x)
    with torch.no_grad():
        return model.encoder(x)


def decode_depth(model: DepthModel, z, with_scale=False, rng=None):
    """Depth map(s) from a pyramid, values in (0, d_max].

    With ``with_scale=True`` (heteroscedastic models only) returns
    ``(depth, scale)``.
    """
    if with_scale and model.variant != "heteroscedastic":
        raise UsageError("only heteroscedastic models predict a scale map")
    with torch.no_grad():
        depth, scale = model.decode(z, rng)
    depth = depth.clamp(min=torch.finfo(depth.dtype).tiny)
    return (depth, scale) if with_scale else depth


def predict_depth(model: DepthModel, x, batch_size=64) -> np.ndarray:
    """Convenience wrapper: images (NxHxWx3) -> NxHxWx1 depth array."""
    x = as_batch(x)
    out = [to_hwc(decode_depth(model, encode(model, x[i:i + batch_size])))
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def blueprint(model) -> DecoderBlueprint:
    """Describe the depth decoder of ``model`` (or any blueprint-built decoder)."""
    if isinstance(model, DepthModel):
        return model.decoder.bp
    if isinstance(model, Decoder):
        return model.bp
    dec = getattr(model, "decoder", None)
    if isinstance(dec, Decoder):
        return dec.bp
    raise UsageError(f"cannot extract a blueprint from {type(model).__name__}")


def _tensors(params) -> Iterable[torch.Tensor]:
    if isinstance(params, nn.Module):
        return params.parameters()
    return params


def snapshot_weights(params) -> WeightDigest:
    """SHA-256 over parameters in definition order as little-endian float32."""
    h = hashlib.sha256()
    for p in _tensors(params):
        h.update(p.detach().cpu().contiguous().numpy().astype("<f4").tobytes())
    return h.hexdigest()


def with_head(bp: DecoderBlueprint, **changes) -> DecoderBlueprint:
    return replace(bp, head=replace(bp.head, **changes))


# -- checkpoints -------------------------------------------------------------

def _meta_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".meta")


def write_meta(path, meta: dict) -> None:
    lines = [f"{k}={v}" for k, v in meta.items()]
    _meta_path(Path(path)).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict:
    mp = _meta_path(Path(path))
    if not mp.exists():
        raise FileNotFoundError(f"missing checkpoint metadata: {mp}")
    meta = {}
    for line in mp.read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    return meta


def save_model(model: DepthModel, path) -> None:
    path = Path(path)
    torch.save(model.state_dict(), path)
    write_meta(path, dict(role="depth_model", **model.config()))


def load_model(path) -> DepthModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    meta = read_meta(path)
    if meta.get("role") != "depth_model":
        raise InputError(f"{path} is not a depth model checkpoint")
    model = DepthModel(
        height=int(meta["height"]),
        width=int(meta["width"]),
        d_max=float(meta["d_max"]),
        variant=meta["variant"],
        channels=tuple(int(c) for c in meta["channels"].split(",")),
        decoder_channels=tuple(int(c) for c in meta["decoder_channels"].split(",")),
        skips=bool(int(meta["skips"])),
        dropout=float(meta["dropout"]),
        seed=int(meta["seed"]),
    )
    model.load_state_dict(torch.load(path, weights_only=True))
    return model


def blueprint_json(bp: DecoderBlueprint) -> str:
    return json.dumps(bp.to_dict(), sort_keys=True)
