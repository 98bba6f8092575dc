"""Image decoder: a copy of the depth decoder architecture that reconstructs
the input image from frozen encoder features."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .errors import InputError
from .model import (
    Decoder,
    DecoderBlueprint,
    as_batch,
    blueprint_json,
    init_uniform_fan_in,
    read_meta,
    with_head,
    write_meta,
)


class ImageDecoder(Decoder):
    """Decoder with a linear 3-channel head (outputs are unbounded)."""

    def __init__(self, bp: DecoderBlueprint, seed: int = 0):
        if bp.head.out_channels != 3 or bp.head.activation is not None:
            raise InputError("image decoder head must have 3 channels and no activation")
        super().__init__(bp)
        self.seed = int(seed)
        init_uniform_fan_in(self, torch.Generator().manual_seed(self.seed))
        self.to(memory_format=torch.channels_last)


def image_blueprint(depth_bp: DecoderBlueprint) -> DecoderBlueprint:
    """Depth-decoder blueprint with the head swapped to 3 linear outputs."""
    return with_head(depth_bp, out_channels=3, activation=None, scale=1.0)


def build_image_decoder(bp: DecoderBlueprint, seed: int = 0) -> ImageDecoder:
    """Fresh image decoder mirroring the depth decoder described by ``bp``.

    The sigmoid is dropped and the last convolution emits 3 channels instead
    of 1; everything else (blocks, skip wiring, dropout slots) is kept.  The
    weights are drawn from ``seed`` and never copied from the depth decoder.
    """
    bp.validate()
    if bp.head.out_channels != 1:
        raise InputError(f"expected a depth-decoder blueprint (1 output channel), got {bp.head.out_channels}")
    return ImageDecoder(image_blueprint(bp), seed)


def reconstruct(dec: ImageDecoder, z) -> torch.Tensor:
    """Nx3xHxW reconstruction of the images that produced pyramid ``z``."""
    with torch.no_grad():
        return dec(z)


def reconstruct_images(model, dec: ImageDecoder, x, batch_size=64) -> torch.Tensor:
    from .model import encode

    x = as_batch(x)
    return torch.cat([reconstruct(dec, encode(model, x[i:i + batch_size]))
                      for i in range(0, len(x), batch_size)])


def save_decoder(dec: ImageDecoder, path, **extra) -> None:
    path = Path(path)
    torch.save(dec.state_dict(), path)
    write_meta(path, dict(role="image_decoder", seed=dec.seed,
                          blueprint=blueprint_json(dec.bp), **extra))


def load_decoder(path) -> ImageDecoder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    meta = read_meta(path)
    if meta.get("role") != "image_decoder":
        raise InputError(f"{path} is not an image decoder checkpoint")
    bp = DecoderBlueprint.from_dict(json.loads(meta["blueprint"]))
    dec = ImageDecoder(bp, int(meta["seed"]))
    dec.load_state_dict(torch.load(path, weights_only=True))
    return dec
