"""End-to-end experiment: train, score, evaluate, render."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image as PILImage

from . import datasets as ds
from .config import ExperimentConfig
from .errors import ConfigError, InputError
from .metrics import mean_depth_metrics, ood_metrics
from .model import load_model, predict_depth, save_model, to_hwc
from .recon import load_decoder, reconstruct_images, save_decoder
from .scoring import dropout_scores, log_scores, post_scores, recon_scores, records, write_scores_csv
from .training import train_autoencoder, train_depth_model, train_image_decoder, train_joint

log = logging.getLogger(__name__)

ERROR_DISPLAY_MAX = 0.5
METRIC_KEYS = ("auroc", "auprs", "aupre", "fpr95")
DEPTH_KEYS = ("abs_rel", "rmse", "delta1")

_unit = {"type": "number", "minimum": 0, "maximum": 1}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["meta", "depth", "ood"],
    "additionalProperties": False,
    "properties": {
        "meta": {
            "type": "object",
            "required": ["seed", "config_digest"],
            "properties": {
                "seed": {"type": "integer"},
                "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
                "timestamps": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "depth": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": list(DEPTH_KEYS),
                "additionalProperties": False,
                "properties": {
                    "abs_rel": {"type": "number", "minimum": 0},
                    "rmse": {"type": "number", "minimum": 0},
                    "delta1": _unit,
                },
            },
        },
        "ood": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {
                    "type": "object",
                    "required": list(METRIC_KEYS),
                    "additionalProperties": False,
                    "properties": {k: _unit for k in METRIC_KEYS},
                },
            },
        },
    },
}


@dataclass
class Sample:
    set_name: str
    id: str
    image: np.ndarray
    reconstruction: np.ndarray
    error: np.ndarray


@dataclass
class EvaluationReport:
    meta: dict
    depth: dict
    ood: dict
    scores: dict = field(default_factory=dict, repr=False)  # ood_set -> [ScoreRecord]
    samples: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "depth": self.depth, "ood": self.ood}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        d = json.loads(text)
        validate_report(d)
        return cls(d["meta"], d["depth"], d["ood"])


def validate_report(d: dict) -> None:
    jsonschema.validate(d, REPORT_SCHEMA)


# -- data --------------------------------------------------------------------

@dataclass
class Data:
    train_images: np.ndarray
    train_depths: np.ndarray
    test_images: np.ndarray
    test_depths: np.ndarray
    ood: dict  # name -> (images, depths or None)


def _load_dir_set(path, resolution, d_max):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    if (path / "images").is_dir():
        return ds.load_dataset_dir(path, resolution, d_max)
    return np.stack(ds.load_image_dir(path, resolution)), None


def load_data(cfg: ExperimentConfig) -> Data:
    v = cfg.values
    res = (v["dataset.height"], v["dataset.width"])
    if v["dataset.kind"] == "synthetic":
        p = ds.SceneParams(height=res[0], width=res[1], k_min=v["dataset.k_min"],
                           k_max=v["dataset.k_max"], d_max=v["model.d_max"])
        xtr, dtr = ds.id_dataset(v["dataset.n_train"], p, ds.TRAIN_SEED)
        xte, dte = ds.id_dataset(v["dataset.n_test"], p, ds.TEST_SEED)
        ood = {name: ds.ood_dataset(v["dataset.n_ood"], name, p) for name in cfg.ood_sets}
        return Data(xtr, dtr, xte, dte, ood)
    xtr, dtr = _load_dir_set(v["dataset.train_dir"], res, v["model.d_max"])
    xte, dte = _load_dir_set(v["dataset.test_dir"], res, v["model.d_max"])
    ood = {name: _load_dir_set(path, res, v["model.d_max"]) for name, path in cfg.ood_dirs.items()}
    return Data(xtr, dtr, xte, dte, ood)


# -- models --------------------------------------------------------------------

def _need_depth(data: Data, what: str):
    if data.train_depths is None:
        raise ConfigError("dataset.train_dir", f"training the {what} requires <train_dir>/depth")


def _save_log(out, name, tl):
    if out is not None:
        tl.write(out / f"train_{name}.jsonl")


def obtain_models(cfg: ExperimentConfig, data: Data, out: Path | None = None) -> dict:
    """Train (or load) every network the requested methods need."""
    methods = cfg.methods
    mk = cfg.model_kwargs()
    ckpt = out / "checkpoints" if out is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    models = {}

    path = cfg["model.depth_checkpoint"]
    if path:
        models["depth"] = load_model(path)
        if models["depth"].variant != "plain":
            raise ConfigError("model.depth_checkpoint", "expected a plain-variant depth model")
    else:
        _need_depth(data, "depth model")
        models["depth"], tl = train_depth_model(data.train_images, data.train_depths,
                                                cfg.train_config("depth"), "plain", **mk)
        _save_log(out, "depth", tl)
        if ckpt is not None:
            save_model(models["depth"], ckpt / "depth_plain.pt")
    if tuple(models["depth"].resolution) != tuple(data.test_images.shape[1:3]):
        raise InputError("depth checkpoint resolution differs from the dataset resolution")

    if "ours" in methods:
        path = cfg["model.decoder_checkpoint"]
        if path:
            models["decoder"] = load_decoder(path)
        else:
            models["decoder"], tl = train_image_decoder(models["depth"], data.train_images,
                                                        cfg.train_config("decoder"))
            _save_log(out, "decoder", tl)
            if ckpt is not None:
                save_decoder(models["decoder"], ckpt / "image_decoder.pt")
    for method, variant in (("log", "heteroscedastic"), ("drop", "dropout")):
        if method in methods:
            _need_depth(data, f"{method} model")
            models[method], tl = train_depth_model(data.train_images, data.train_depths,
                                                   cfg.train_config(method), variant, **mk)
            _save_log(out, method, tl)
            if ckpt is not None:
                save_model(models[method], ckpt / f"depth_{variant}.pt")
    if "sim" in methods:
        _need_depth(data, "joint model")
        m, dec, tl = train_joint(data.train_images, data.train_depths, cfg.train_config("sim"), **mk)
        models["sim"] = (m, dec)
        _save_log(out, "sim", tl)
        if ckpt is not None:
            save_model(m, ckpt / "sim_depth.pt")
            save_decoder(dec, ckpt / "sim_image_decoder.pt")
    if "ae" in methods:
        enc, dec, tl = train_autoencoder(data.train_images, cfg.train_config("ae"),
                                         mk["channels"], mk["decoder_channels"], mk["skips"])
        models["ae"] = (enc, dec)
        _save_log(out, "ae", tl)
    return models


def score_fn(method: str, models: dict, cfg: ExperimentConfig):
    """images, ids -> scores for one method."""
    if method == "ours":
        return lambda x, ids: recon_scores(models["depth"], models["decoder"], x)
    if method == "post":
        return lambda x, ids: post_scores(models["depth"], x)
    if method == "log":
        return lambda x, ids: log_scores(models["log"], x)
    if method == "drop":
        return lambda x, ids: dropout_scores(models["drop"], x, cfg["eval.dropout_passes"], cfg.seed, ids)
    if method in ("sim", "ae"):
        enc, dec = models[method]
        return lambda x, ids: recon_scores(enc, dec, x)
    raise ConfigError("eval.methods", f"unknown method {method!r}")


# -- orchestration -------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_experiment(cfg: ExperimentConfig, out_dir=None, data: Data | None = None) -> EvaluationReport:
    """Train what is missing, score every eval set with every method, compute metrics.

    ``out_dir`` (optional) receives checkpoints and training logs.
    """
    started = _now()
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    data = data if data is not None else load_data(cfg)
    models = obtain_models(cfg, data, out)

    n_test = len(data.test_images)
    id_ids = [f"id-{i:05d}" for i in range(n_test)]
    eval_sets = {}
    for name, (images, _) in data.ood.items():
        es = ds.make_eval_set(data.test_images, images, cfg["eval.ood_cap"], cfg.seed,
                              ood_prefix=name)
        eval_sets[name] = es

    ood, scores = {}, {name: [] for name in eval_sets}
    for method in cfg.methods:
        fn = score_fn(method, models, cfg)
        id_scores = fn(data.test_images, id_ids)
        ood[method] = {}
        for name, es in eval_sets.items():
            ood_ids = es.ids[n_test:]
            ood_scores = fn(data.ood[name][0][es.ood_index], ood_ids)
            s = np.concatenate([id_scores, ood_scores])
            ood[method][name] = ood_metrics(s, es.labels)
            scores[name] += records(method, es.ids, s, es.labels)
        log.info("scored %s", method)

    depth = {"id": mean_depth_metrics(predict_depth(models["depth"], data.test_images),
                                      data.test_depths).as_dict()} if data.test_depths is not None else {}
    for name, es in eval_sets.items():
        gt = data.ood[name][1]
        if gt is not None:
            pred = predict_depth(models["depth"], data.ood[name][0][es.ood_index])
            depth[name] = mean_depth_metrics(pred, gt[es.ood_index]).as_dict()
    if "sim" in models and data.test_depths is not None:
        depth["sim:id"] = mean_depth_metrics(predict_depth(models["sim"][0], data.test_images),
                                             data.test_depths).as_dict()

    samples = []
    if "decoder" in models and cfg["eval.samples"] > 0:
        k = cfg["eval.samples"]
        sets = [("id", data.test_images[:k], id_ids[:k])]
        sets += [(name, data.ood[name][0][es.ood_index[:k]], es.ids[n_test:n_test + k])
                 for name, es in eval_sets.items()]
        for name, images, ids in sets:
            recon = to_hwc(reconstruct_images(models["depth"], models["decoder"], images))
            for sid, img, rec in zip(ids, images, recon):
                err = np.abs(rec.astype(np.float64) - img).max(axis=-1)
                samples.append(Sample(name, sid, img, rec, err))

    meta = {
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "timestamps": {"started": started, "finished": _now()},
    }
    log.info("experiment finished in %.1fs", time.perf_counter() - t0)
    report = EvaluationReport(meta, depth, ood, scores, samples)
    validate_report(report.to_dict())
    return report


# -- rendering -----------------------------------------------------------------

def _png(path: Path, arr: np.ndarray) -> None:
    PILImage.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)).save(path)


def render_error_map(e: np.ndarray) -> np.ndarray:
    """uint8 greyscale of an error map on the fixed display scale [0, 0.5]."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 3:
        e = e[..., 0]
    return np.round(np.clip(e / ERROR_DISPLAY_MAX, 0, 1) * 255).astype(np.uint8)


def render_report(report: EvaluationReport, out_dir) -> list:
    """Write report.json, report.csv, per-set score CSVs and sample PNGs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    written = []
    validate_report(report.to_dict())
    p = out / "report.json"
    p.write_text(report.to_json())
    written.append(p)

    p = out / "report.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "ood_set", *METRIC_KEYS])
        for method in sorted(report.ood):
            for name in sorted(report.ood[method]):
                row = report.ood[method][name]
                w.writerow([method, name, *(repr(row[k]) for k in METRIC_KEYS)])
    written.append(p)

    for name, recs in sorted(report.scores.items()):
        p = out / f"scores_{name}.csv"
        write_scores_csv(p, recs)
        written.append(p)

    for s in report.samples:
        d = out / "samples" / s.set_name
        d.mkdir(parents=True, exist_ok=True)
        for suffix, arr in (("input", s.image), ("recon", s.reconstruction)):
            p = d / f"{s.id}_{suffix}.png"
            _png(p, arr)
            written.append(p)
        p = d / f"{s.id}_error.png"
        PILImage.fromarray(render_error_map(s.error)).save(p)
        written.append(p)
    return written


def format_table(report: EvaluationReport) -> str:
    """Plain-text result tables in percent (display only)."""
    lines = []
    sets = sorted({name for rows in report.ood.values() for name in rows})
    for name in sets:
        lines.append(f"== {name} ==")
        lines.append(f"{'method':<8}" + "".join(f"{k.upper():>9}" for k in METRIC_KEYS))
        for method in report.ood:
            row = report.ood[method].get(name)
            if row is not None:
                lines.append(f"{method:<8}" + "".join(f"{100 * row[k]:9.2f}" for k in METRIC_KEYS))
    if report.depth:
        lines.append("== depth ==")
        lines.append(f"{'set':<16}{'AbsRel':>9}{'RMSE':>9}{'d1':>9}")
        for name, m in report.depth.items():
            lines.append(f"{name:<16}{m['abs_rel']:9.3f}{m['rmse']:9.3f}{m['delta1']:9.3f}")
    return "\n".join(lines)
