"""Command line driver.

    depthood train-depth   -c exp.cfg [--variant plain|heteroscedastic|dropout]
    depthood train-decoder -c exp.cfg --depth CKPT
    depthood ablate sim|ae -c exp.cfg
    depthood score         -c exp.cfg --method ours --depth CKPT [--decoder CKPT] --images DIR
    depthood evaluate      -c exp.cfg
    depthood report        RUN_DIR/report.json

Outputs go to ``--out`` or, by default, ``$DEPTHOOD_OUTPUT/<config name>``
(``./runs`` if the variable is unset).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, InputError, UsageError

EXIT_CONFIG, EXIT_FILE, EXIT_INPUT = 2, 3, 4


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("DEPTHOOD_OUTPUT", "runs"))
    name = Path(args.config).stem if getattr(args, "config", None) else "run"
    return root / name


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(args.set or [])


def cmd_train_depth(args):
    from .experiment import load_data
    from .model import save_model
    from .training import train_depth_model

    cfg = _config(args)
    data = load_data(cfg)
    if data.train_depths is None:
        raise ConfigError("dataset.train_dir", "training requires <train_dir>/depth")
    harness = {"plain": "depth", "heteroscedastic": "log", "dropout": "drop"}[args.variant]
    model, tl = train_depth_model(data.train_images, data.train_depths, cfg.train_config(harness),
                                  args.variant, **cfg.model_kwargs())
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / f"depth_{args.variant}.pt")
    tl.write(out / f"train_depth_{args.variant}.jsonl")
    print(out / f"depth_{args.variant}.pt")


def cmd_train_decoder(args):
    from .experiment import load_data
    from .model import load_model
    from .recon import save_decoder
    from .training import train_image_decoder

    cfg = _config(args)
    model = load_model(args.depth)
    data = load_data(cfg)
    dec, tl = train_image_decoder(model, data.train_images, cfg.train_config("decoder"))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_decoder(dec, out / "image_decoder.pt", depth_checkpoint=Path(args.depth).name)
    tl.write(out / "train_decoder.jsonl")
    print(out / "image_decoder.pt")


def cmd_ablate(args):
    from .experiment import load_data
    from .model import save_model
    from .recon import save_decoder
    import torch

    from .training import train_autoencoder, train_joint

    cfg = _config(args)
    data = load_data(cfg)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    mk = cfg.model_kwargs()
    if args.kind == "sim":
        model, dec, tl = train_joint(data.train_images, data.train_depths, cfg.train_config("sim"), **mk)
        save_model(model, out / "sim_depth.pt")
    else:
        enc, dec, tl = train_autoencoder(data.train_images, cfg.train_config("ae"),
                                         mk["channels"], mk["decoder_channels"], mk["skips"])
        torch.save(enc.state_dict(), out / "ae_encoder.pt")
    save_decoder(dec, out / f"{args.kind}_image_decoder.pt")
    tl.write(out / f"train_{args.kind}.jsonl")
    print(out)


def cmd_score(args):
    from .datasets import load_image_dir
    from .model import load_model
    from .recon import load_decoder
    from .scoring import dropout_scores, log_scores, post_scores, recon_scores, records, write_scores_csv

    cfg = _config(args)
    model = load_model(args.depth)
    images = np.stack(load_image_dir(args.images, model.resolution))
    ids = sorted(p.name for p in Path(args.images).iterdir()
                 if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"})
    if args.method == "ours":
        if not args.decoder:
            raise UsageError("--decoder is required for method 'ours'")
        s = recon_scores(model, load_decoder(args.decoder), images)
    elif args.method == "post":
        s = post_scores(model, images)
    elif args.method == "log":
        s = log_scores(model, images)
    else:
        s = dropout_scores(model, images, cfg["eval.dropout_passes"], cfg.seed, ids)
    label = {"id": 1, "ood": 0, "unknown": -1}[args.label]
    recs = records(args.method, ids, s, [label] * len(ids))
    out = Path(args.out) if args.out else _out_dir(args) / f"scores_{args.method}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores_csv(out, recs)
    if args.threshold is not None:
        from .scoring import classify

        for r in recs:
            print(f"{r.id},{r.score!r},{classify(r.score, args.threshold)}")
    print(out)


def cmd_evaluate(args):
    from .experiment import format_table, render_report, run_experiment

    cfg = _config(args)
    out = _out_dir(args)
    report = run_experiment(cfg, out)
    render_report(report, out)
    (out / "config.txt").write_text(cfg.to_text())
    print(format_table(report))
    print(f"\nwritten to {out}")


def cmd_report(args):
    from .experiment import EvaluationReport, format_table, render_report

    path = Path(args.report)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    report = EvaluationReport.from_json(path.read_text())
    if args.out:
        render_report(report, args.out)
    print(format_table(report))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthood", description="Reconstruction-based OOD detection for depth models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="experiment config (key=value lines)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        sp.add_argument("-o", "--out", help="output directory")

    sp = sub.add_parser("train-depth", help="train a toy depth model")
    common(sp)
    sp.add_argument("--variant", default="plain", choices=["plain", "heteroscedastic", "dropout"])
    sp.set_defaults(func=cmd_train_depth)

    sp = sub.add_parser("train-decoder", help="train the post-hoc image decoder")
    common(sp)
    sp.add_argument("--depth", required=True, help="depth model checkpoint")
    sp.set_defaults(func=cmd_train_decoder)

    sp = sub.add_parser("ablate", help="joint (sim) or autoencoder (ae) ablation")
    common(sp)
    sp.add_argument("kind", choices=["sim", "ae"])
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("score", help="score a directory of images")
    common(sp)
    sp.add_argument("--method", default="ours", choices=["ours", "post", "log", "drop"])
    sp.add_argument("--depth", required=True)
    sp.add_argument("--decoder")
    sp.add_argument("--images", required=True)
    sp.add_argument("--label", default="unknown", choices=["id", "ood", "unknown"])
    sp.add_argument("--threshold", type=float, help="also print the ID(1)/OOD(0) decision")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("evaluate", help="full pipeline: train, score, evaluate, render")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="print (and optionally re-render) a report.json")
    sp.add_argument("report")
    sp.add_argument("-o", "--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"file error: {e}", file=sys.stderr)
        return EXIT_FILE
    except (InputError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
