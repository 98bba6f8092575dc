"""Training harnesses.

* :func:`train_depth_model` - supervised toy depth model (plain,
  heteroscedastic or dropout variant)
* :func:`train_image_decoder` - post-hoc image decoder on a frozen depth model
* :func:`train_joint` - image decoder optimised together with the depth model
* :func:`train_autoencoder` - encoder and image decoder from scratch

All runs are seeded: initialisation, shuffling and dropout masks come from
generators derived from ``TrainConfig.seed``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import InputError
from .model import (
    DepthModel,
    Encoder,
    as_batch,
    blueprint,
    init_uniform_fan_in,
    reference_blueprint,
    snapshot_weights,
)
from .recon import ImageDecoder, build_image_decoder, image_blueprint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    loss: str = "l1"
    joint_weight: float = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError("learning rate must be > 0")
        if self.batch_size < 1:
            raise InputError("batch size must be >= 1")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    digests: dict = field(default_factory=dict)

    def write(self, path) -> None:
        """Append one JSON record per epoch, then one with the final digests."""
        with open(path, "a") as f:
            for epoch, loss in enumerate(self.losses, start=1):
                f.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")
            f.write(json.dumps({"digests": self.digests}) + "\n")


class FeatureExtractor(nn.Module):
    """Bare encoder with a fixed input resolution (the AE ablation's encoder)."""

    def __init__(self, height=64, width=64, channels=(16, 32, 64, 128), seed=0):
        super().__init__()
        self.height, self.width = int(height), int(width)
        self.seed = int(seed)
        self.encoder = Encoder(channels)
        init_uniform_fan_in(self, torch.Generator().manual_seed(self.seed))
        self.to(memory_format=torch.channels_last)

    @property
    def resolution(self):
        return self.height, self.width


# -- losses ------------------------------------------------------------------

def reconstruction_loss(x_hat, x):
    """Mean absolute difference over all elements."""
    if x_hat.shape != x.shape:
        raise InputError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return (x_hat - x).abs().mean()


def depth_loss(pred, gt, variant="plain", scale=None, valid=None):
    """L1 loss, or the Laplace negative log-likelihood for the heteroscedastic variant.

    ``valid`` optionally masks pixels without ground truth.
    """
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    err = (pred - gt).abs()
    if variant == "heteroscedastic":
        if scale is None or scale.shape != pred.shape:
            raise InputError("heteroscedastic loss needs a scale map shaped like the prediction")
        if bool((scale <= 0).any()):
            raise InputError("scale must be strictly positive")
        err = err / scale + torch.log(2 * scale)
    if valid is None:
        return err.mean()
    return err[valid].mean()


# -- helpers -------------------------------------------------------------------

def _depth_batch(d) -> torch.Tensor:
    if isinstance(d, torch.Tensor):
        return d.float()
    a = np.asarray(d, dtype=np.float32)
    if a.ndim == 3:
        a = a[..., None]
    return torch.from_numpy(np.ascontiguousarray(a)).permute(0, 3, 1, 2).contiguous()


def _batches(n, batch_size, gen):
    perm = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _check_data(images, depths=None):
    if len(images) == 0:
        raise InputError("empty dataset")
    x = as_batch(images)
    if depths is None:
        return x, None
    d = _depth_batch(depths)
    if d.shape[0] != x.shape[0] or d.shape[2:] != x.shape[2:]:
        raise InputError("images and depth maps do not match")
    return x, d


def _check_resolution(x, resolution):
    if tuple(x.shape[2:]) != tuple(resolution):
        raise InputError(f"data resolution {tuple(x.shape[2:])} != model resolution {tuple(resolution)}")


def _depth_step_loss(model, xb, db, variant, rng):
    depth, scale = model(xb, rng)
    return depth_loss(depth, db, variant, scale, db > 0)


# -- harnesses ---------------------------------------------------------------

def train_depth_model(images, depths, cfg: TrainConfig = TrainConfig(), variant="plain",
                      **model_kwargs):
    """Supervised training of a fresh toy depth model. Returns (model, TrainLog)."""
    x, d = _check_data(images, depths)
    model = DepthModel(x.shape[2], x.shape[3], variant=variant, seed=cfg.seed, **model_kwargs)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    drop_rng = torch.Generator().manual_seed(cfg.seed + 1) if variant == "dropout" else None
    tl = TrainLog()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, shuffle):
            loss = _depth_step_loss(model, x[idx], d[idx], variant, drop_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        tl.losses.append(total / len(x))
        log.info("depth[%s] epoch %d/%d loss %.5f", variant, epoch + 1, cfg.epochs, tl.losses[-1])
    tl.digests = {
        "encoder": snapshot_weights(model.encoder),
        "depth_decoder": snapshot_weights(model.depth_decoder_parameters()),
    }
    return model, tl


def _pyramid_cache(model, x, chunk=256):
    with torch.no_grad():
        parts = [model.encoder(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    return [torch.cat(level) for level in zip(*parts)]


def train_image_decoder(model, images, cfg: TrainConfig = TrainConfig()):
    """Post-hoc image decoder on the frozen ``model``. Returns (ImageDecoder, TrainLog).

    Only the decoder is handed to the optimiser and the encoder runs under
    ``no_grad``; the encoder / depth-decoder digests are checked before and
    after as a guard.
    """
    x, _ = _check_data(images)
    _check_resolution(x, model.resolution)
    before_enc = snapshot_weights(model.encoder)
    before_dec = snapshot_weights(model.depth_decoder_parameters()) if isinstance(model, DepthModel) else None

    dec = build_image_decoder(blueprint(model), seed=cfg.seed)
    opt = torch.optim.Adam(dec.parameters(), lr=cfg.lr)
    # the encoder is frozen and deterministic, so features can be computed once
    z_all = _pyramid_cache(model, x)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    tl = TrainLog()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, shuffle):
            loss = reconstruction_loss(dec([z[idx] for z in z_all]), x[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        tl.losses.append(total / len(x))
        log.info("image decoder epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, tl.losses[-1])

    after_enc = snapshot_weights(model.encoder)
    if after_enc != before_enc:
        raise RuntimeError("encoder weights changed during image-decoder training")
    tl.digests = {"encoder": after_enc, "image_decoder": snapshot_weights(dec)}
    if before_dec is not None:
        after_dec = snapshot_weights(model.depth_decoder_parameters())
        if after_dec != before_dec:
            raise RuntimeError("depth decoder weights changed during image-decoder training")
        tl.digests["depth_decoder"] = after_dec
    return dec, tl


def train_joint(images, depths, cfg: TrainConfig = TrainConfig(), variant="plain", **model_kwargs):
    """Depth model and image decoder optimised together on
    ``depth_loss + joint_weight * reconstruction_loss``.

    Returns (DepthModel, ImageDecoder, TrainLog).
    """
    x, d = _check_data(images, depths)
    model = DepthModel(x.shape[2], x.shape[3], variant=variant, seed=cfg.seed, **model_kwargs)
    dec = build_image_decoder(blueprint(model), seed=cfg.seed + 1)
    opt = torch.optim.Adam(list(model.parameters()) + list(dec.parameters()), lr=cfg.lr)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    drop_rng = torch.Generator().manual_seed(cfg.seed + 1) if variant == "dropout" else None
    tl = TrainLog()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, shuffle):
            xb, db = x[idx], d[idx]
            z = model.encoder(xb)
            depth, scale = model.decode(z, drop_rng)
            loss = depth_loss(depth, db, variant, scale, db > 0)
            loss = loss + cfg.joint_weight * reconstruction_loss(dec(z), xb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        tl.losses.append(total / len(x))
        log.info("joint epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, tl.losses[-1])
    tl.digests = {
        "encoder": snapshot_weights(model.encoder),
        "depth_decoder": snapshot_weights(model.depth_decoder_parameters()),
        "image_decoder": snapshot_weights(dec),
    }
    return model, dec, tl


def train_autoencoder(images, cfg: TrainConfig = TrainConfig(), channels=(16, 32, 64, 128),
                      decoder_channels=(64, 32, 16, 16), skips=True):
    """Encoder + image decoder from scratch on the reconstruction loss alone.

    Returns (FeatureExtractor, ImageDecoder, TrainLog).
    """
    x, _ = _check_data(images)
    enc = FeatureExtractor(x.shape[2], x.shape[3], channels, seed=cfg.seed)
    bp = image_blueprint(reference_blueprint(channels, decoder_channels, skips))
    dec = ImageDecoder(bp, seed=cfg.seed + 1)
    opt = torch.optim.Adam(list(enc.parameters()) + list(dec.parameters()), lr=cfg.lr)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    tl = TrainLog()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, shuffle):
            xb = x[idx]
            loss = reconstruction_loss(dec(enc.encoder(xb)), xb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        tl.losses.append(total / len(x))
        log.info("autoencoder epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, tl.losses[-1])
    tl.digests = {"encoder": snapshot_weights(enc.encoder), "image_decoder": snapshot_weights(dec)}
    return enc, dec, tl


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
