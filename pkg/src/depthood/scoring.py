"""Per-image OOD scores.

Every score is oriented the same way (higher = more likely OOD):

* ``ours``  - mean channel-max reconstruction error of the image decoder
* ``post``  - mean |d(x) - flip(d(flip(x)))| (flip post-processing)
* ``log``   - mean predicted Laplace scale of a heteroscedastic model
* ``drop``  - mean per-pixel variance over stochastic dropout passes
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError, UsageError
from .model import as_batch, decode_depth, encode
from .recon import reconstruct

DEFAULT_DROPOUT_PASSES = 8


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    method: str
    score: float
    label: int = -1  # 1 = in-distribution, 0 = OOD, -1 = unknown


def error_map(x, x_hat) -> np.ndarray:
    """Channel-wise max of |x_hat - x| for HxWx3 (or NxHxWx3) arrays."""
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape or x.shape[-1] != 3:
        raise InputError(f"expected matching ...x3 arrays, got {x.shape} and {x_hat.shape}")
    return np.abs(x_hat.astype(np.float64) - x.astype(np.float64)).max(axis=-1, keepdims=True)


def ood_score(e) -> float:
    """Mean of an error map."""
    return float(np.mean(e, dtype=np.float64))


def classify(s: float, tau: float) -> int:
    """1 (in-distribution) if the mean error is at most ``tau``, else 0."""
    if not np.isfinite(tau):
        raise InputError("threshold must be finite")
    return 1 if s <= tau else 0


def _chunks(x, batch_size):
    for i in range(0, len(x), batch_size):
        yield x[i:i + batch_size]


def _pixel_mean(t: torch.Tensor) -> np.ndarray:
    return t.double().flatten(1).mean(dim=1).numpy()


def recon_scores(model, dec, images, batch_size=64) -> np.ndarray:
    """Reconstruction-error score of every image."""
    x = as_batch(images)
    out = []
    for xb in _chunks(x, batch_size):
        x_hat = reconstruct(dec, encode(model, xb))
        e = (x_hat.double() - xb.double()).abs().amax(dim=1)
        out.append(_pixel_mean(e))
    return np.concatenate(out)


def post_scores(model, images, batch_size=64) -> np.ndarray:
    """Disagreement between the prediction and the un-flipped prediction of the flipped image."""
    x = as_batch(images)
    out = []
    for xb in _chunks(x, batch_size):
        d = decode_depth(model, encode(model, xb))
        d_flip = decode_depth(model, encode(model, torch.flip(xb, dims=[3])))
        out.append(_pixel_mean((d - torch.flip(d_flip, dims=[3])).abs()))
    return np.concatenate(out)


def log_scores(model, images, batch_size=64) -> np.ndarray:
    """Mean predicted scale of a heteroscedastic model."""
    if getattr(model, "variant", None) != "heteroscedastic":
        raise UsageError("log scores need a heteroscedastic model")
    x = as_batch(images)
    out = []
    for xb in _chunks(x, batch_size):
        _, scale = decode_depth(model, encode(model, xb), with_scale=True)
        out.append(_pixel_mean(scale))
    return np.concatenate(out)


def sample_seed(seed: int, sample_id: str) -> int:
    """Seed of the per-sample random stream, derived from (run seed, sample id)."""
    h = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def dropout_passes(model, x, n_passes: int, seed: int) -> torch.Tensor:
    """``n_passes`` stochastic depth predictions of one image, shape N x 1 x H x W."""
    z = encode(model, x)
    zs = [level.expand(n_passes, -1, -1, -1).contiguous(memory_format=torch.channels_last) for level in z]
    rng = torch.Generator().manual_seed(seed)
    return decode_depth(model, zs, rng=rng)


def dropout_scores(model, images, n_passes=DEFAULT_DROPOUT_PASSES, seed=0, ids=None) -> np.ndarray:
    """Mean per-pixel variance (population) across MC-dropout passes."""
    if getattr(model, "variant", None) != "dropout":
        raise UsageError("dropout scores need a dropout-variant model")
    if n_passes < 2:
        raise UsageError("need at least 2 dropout passes")
    x = as_batch(images)
    if ids is None:
        ids = [str(i) for i in range(len(x))]
    if len(ids) != len(x):
        raise InputError("one sample id per image required")
    out = np.empty(len(x))
    for i, sid in enumerate(ids):
        passes = dropout_passes(model, x[i:i + 1], n_passes, sample_seed(seed, sid))
        out[i] = _pixel_mean(passes.double().var(dim=0, unbiased=False)[None])[0]
    return out


def _record(method, scores, sample_id, label):
    return ScoreRecord(str(sample_id), method, float(scores[0]), int(label))


def recon_score(model, dec, x, sample_id="0", label=-1, method="ours") -> ScoreRecord:
    return _record(method, recon_scores(model, dec, x), sample_id, label)


def post_score(model, x, sample_id="0", label=-1) -> ScoreRecord:
    return _record("post", post_scores(model, x), sample_id, label)


def log_score(model, x, sample_id="0", label=-1) -> ScoreRecord:
    return _record("log", log_scores(model, x), sample_id, label)


def dropout_score(model, x, n_passes=DEFAULT_DROPOUT_PASSES, seed=0, sample_id="0", label=-1) -> ScoreRecord:
    return _record("drop", dropout_scores(model, x, n_passes, seed, [str(sample_id)]), sample_id, label)


def records(method, ids, scores, labels) -> list:
    return [ScoreRecord(str(i), method, float(s), int(y)) for i, s, y in zip(ids, scores, labels)]


def write_scores_csv(path, recs) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "method", "score", "label"])
        for r in recs:
            w.writerow([r.id, r.method, repr(r.score), r.label])


def read_scores_csv(path) -> list:
    with open(path, newline="") as f:
        return [ScoreRecord(row["id"], row["method"], float(row["score"]), int(row["label"]))
                for row in csv.DictReader(f)]
