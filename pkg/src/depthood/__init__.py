"""Post-hoc, reconstruction-based OOD detection for encoder-decoder depth models."""

from .errors import ConfigError, InputError, UsageError
from .model import DepthModel, blueprint, decode_depth, encode, snapshot_weights
from .recon import ImageDecoder, build_image_decoder, reconstruct
from .scoring import classify, error_map, ood_score
from .metrics import aupr, auroc, depth_metrics, fpr_at_tpr

__all__ = [
    "ConfigError", "InputError", "UsageError",
    "DepthModel", "blueprint", "decode_depth", "encode", "snapshot_weights",
    "ImageDecoder", "build_image_decoder", "reconstruct",
    "classify", "error_map", "ood_score",
    "aupr", "auroc", "depth_metrics", "fpr_at_tpr",
]
