"""Command-line entry point.

    sketchebm anchors --config run.yaml
    sketchebm train   --config run.yaml [--set train.lambda_energy=5000]
    sketchebm sample  --checkpoint runs/run/epoch-05.ckpt --n 16 --phi 0.5
    sketchebm stats   --config run.yaml --images eval_set/ --out eval.stats
    sketchebm eval    --checkpoint ... --stats eval.stats [--real-dir eval_set/]
    sketchebm edit    --checkpoint ... (--direction dir.json | --wplus img.wplus)

Exit codes: 0 success, 2 configuration/input error, 3 backend failure,
4 artifact version mismatch, 5 fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import from_dict, load_config, merge_overrides
from .editing import EditDirection, InvertedLatent, apply_latent_edit, edit_real_image
from .errors import ConfigurationError, SketchEBMError
from .evalkit import (EvalReport, FeatureStats, frechet_distance, generated_features, image_features,
                      load_image_folder, precision_recall)
from .stylemix import StyleMixSpec, sample_images, sample_style, write_grid
from .trainer import train

log = logging.getLogger("sketchebm")


def _load_cfg(args, require=()):
    overrides = list(args.set or [])
    if getattr(args, "category", None):
        overrides.append(f"paths.category={args.category}")
    if getattr(args, "sketch", None):
        overrides.append(f"paths.sketch={args.sketch}")
    cfg = load_config(args.config, overrides)
    cfg.require_paths(*require)
    return cfg


def cmd_anchors(args) -> int:
    cfg = _load_cfg(args)
    backends, anchors = pipeline.prepare(cfg)
    out = Path(args.out) if args.out else cfg.run_dir / "anchors"
    out.mkdir(parents=True, exist_ok=True)
    pipeline.save_image(out / "x_o.png", anchors.x_o)
    pipeline.save_image(out / "c_o.png", anchors.c_o)
    record = {"t_o": anchors.t_o, "e_xo": anchors.e_xo[0].tolist(), "e_co": anchors.e_co[0].tolist(),
              "e_to": None if anchors.e_to is None else anchors.e_to.tolist(),
              "config_fingerprint": cfg.fingerprint}
    (out / "anchors.json").write_text(json.dumps(record, indent=2))
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args, require=("sketch",))
    if cfg.train.energy == "nce" and not cfg.paths.category:
        raise ConfigurationError("paths.category is required for the nce energy")
    backends, anchors = pipeline.prepare(cfg)
    g = backends.generator
    sketch = pipeline.load_sketch(cfg.paths.sketch, g.resolution, g.dtype)
    objective = pipeline.make_objective(cfg, backends, anchors, sketch)
    flow = pipeline.make_flow(cfg, g.latent_dim)

    probe = None
    if cfg.paths.eval_stats and cfg.train.probe_samples > 0:
        stats = FeatureStats.load(cfg.paths.eval_stats, backends.fid_extractor.fingerprint)

        def probe(flow, epoch):
            rng = torch.Generator().manual_seed(cfg.seed + 7919 * epoch)
            feats, _ = generated_features(flow, g, backends.fid_extractor, cfg.train.probe_samples, rng,
                                          batch_size=cfg.eval.batch_size,
                                          style_truncation=cfg.eval.style_truncation,
                                          crossover_layer=cfg.stylemix.crossover_layer,
                                          resolution=cfg.eval.resolution)
            return frechet_distance(FeatureStats.from_features(feats), stats)

    result = train(flow, objective, cfg.train, cfg.run_dir, probe=probe, frozen=backends,
                   config=cfg.to_dict(), fingerprint=cfg.fingerprint)
    last = result.history[-1]
    print(f"{cfg.run_dir}: {len(result.history)} steps, final total {last.total:.4f}, "
          f"energy {last.l_energy:.4f}")
    return 0


def cmd_sample(args) -> int:
    ckpt, cfg = pipeline.open_checkpoint(args.checkpoint)
    backends = pipeline.build_backends(cfg)
    g = backends.generator
    pipeline.ensure_w_avg(g, cfg.train.w_avg_samples, cfg.seed)
    phi = cfg.stylemix.style_truncation if args.phi is None else args.phi
    spec = StyleMixSpec(cfg.stylemix.crossover_layer, phi, cfg.stylemix.content_truncation)
    rng = torch.Generator().manual_seed(args.seed)
    images = sample_images(ckpt.flow, g, spec, args.n, rng)
    out = Path(args.out)
    meta = write_grid(out, images, {"seed": args.seed, "phi": phi, "crossover_layer": spec.crossover_layer,
                                    "checkpoint": str(args.checkpoint),
                                    "config_fingerprint": ckpt.config_fingerprint})
    print(f"{out}: {meta['count']} samples")
    return 0


def cmd_stats(args) -> int:
    cfg = _load_cfg(args)
    backends = pipeline.build_backends(cfg)
    images = load_image_folder(args.images, cfg.eval.resolution).to(backends.generator.dtype)
    feats = image_features(images, backends.fid_extractor, cfg.eval.batch_size, cfg.eval.resolution)
    stats = FeatureStats.from_features(feats, backends.fid_extractor.fingerprint)
    stats.save(args.out)
    print(f"{args.out}: {stats.count} images, {stats.dim}-d features")
    return 0


def cmd_eval(args) -> int:
    ckpt, cfg = pipeline.open_checkpoint(args.checkpoint)
    if args.set:
        cfg = from_dict(merge_overrides(cfg.to_dict(), args.set))
    backends = pipeline.build_backends(cfg)
    g = backends.generator
    pipeline.ensure_w_avg(g, cfg.train.w_avg_samples, cfg.seed)
    n = args.n or cfg.eval.n_samples
    sampling = dict(batch_size=cfg.eval.batch_size, style_truncation=cfg.eval.style_truncation,
                    crossover_layer=cfg.stylemix.crossover_layer, resolution=cfg.eval.resolution)
    fid = precision = recall = None
    meta = {}
    if args.metric in ("fid", "all"):
        if not args.stats:
            raise ConfigurationError("--stats is required for FID")
        stats = FeatureStats.load(args.stats, backends.fid_extractor.fingerprint)
        feats, meta = generated_features(ckpt.flow, g, backends.fid_extractor, n,
                                         torch.Generator().manual_seed(args.seed), **sampling)
        fid = frechet_distance(FeatureStats.from_features(feats), stats)
    if args.metric in ("pr", "all"):
        if not args.real_dir:
            raise ConfigurationError("--real-dir is required for precision/recall")
        real = load_image_folder(args.real_dir, cfg.eval.resolution).to(g.dtype)
        real_feats = image_features(real, backends.pr_extractor, cfg.eval.batch_size, cfg.eval.resolution)
        gen_feats, meta = generated_features(ckpt.flow, g, backends.pr_extractor, n,
                                             torch.Generator().manual_seed(args.seed), **sampling)
        precision, recall = precision_recall(gen_feats, real_feats, cfg.eval.k)
    report = EvalReport(fid, precision, recall, n, ckpt.config_fingerprint,
                        {**meta, "checkpoint": str(args.checkpoint), "seed": args.seed, "k": cfg.eval.k})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(report.to_json())
    return 0


def cmd_edit(args) -> int:
    ckpt, cfg = pipeline.open_checkpoint(args.checkpoint)
    backends = pipeline.build_backends(cfg)
    g = backends.generator
    pipeline.ensure_w_avg(g, cfg.train.w_avg_samples, cfg.seed)
    rng = torch.Generator().manual_seed(args.seed)
    out = Path(args.out)
    meta = {"seed": args.seed, "checkpoint": str(args.checkpoint), "config_fingerprint": ckpt.config_fingerprint}
    if args.wplus:
        inv = InvertedLatent.load(args.wplus, g.dtype)
        images = edit_real_image(inv, ckpt.flow, g, rng, crossover_layer=cfg.stylemix.crossover_layer, n=args.n)
        meta.update(wplus=str(args.wplus), crossover_layer=cfg.stylemix.crossover_layer)
        write_grid(out, images, meta)
    else:
        edit = EditDirection.load(args.direction)
        mags = [float(m) for m in args.magnitudes.split(",")]
        spec = cfg.stylemix if args.phi is None else StyleMixSpec(cfg.stylemix.crossover_layer, args.phi,
                                                                  cfg.stylemix.content_truncation)
        with torch.no_grad():
            eps = torch.randn(args.n, ckpt.flow.dim, generator=rng, dtype=g.dtype)
            z, _ = ckpt.flow(eps)
            style_w = sample_style(g, args.n, 1.0, rng)
        rows = [torch.stack([apply_latent_edit(z[i:i + 1], edit, g, spec, style_w[i:i + 1], m)[0] for m in mags])
                for i in range(args.n)]
        meta.update(direction=str(args.direction), space=edit.space, label=edit.label, magnitudes=mags,
                    phi=spec.style_truncation)
        write_grid(out, torch.cat(rows), meta, cols=len(mags))
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchebm", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", "-c", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return p

    p = with_config(sub.add_parser("anchors", help="build and export the anchor pair"))
    p.add_argument("--category", help="category text t_o (e.g. 'cat')")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_anchors)

    p = with_config(sub.add_parser("train", help="train a flow on one sketch"))
    p.add_argument("--sketch", help="reference sketch image")
    p.add_argument("--category", help="category text t_o (e.g. 'cat')")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write a grid of style-mixed samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phi", type=float, help="style truncation (default: from the checkpoint config)")
    p.add_argument("--out", default="samples.png")
    p.set_defaults(func=cmd_sample)

    p = with_config(sub.add_parser("stats", help="reference feature statistics of an image folder"))
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="FID and/or precision-recall of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", help="reference statistics written by 'stats'")
    p.add_argument("--real-dir", help="real image folder for precision/recall")
    p.add_argument("--metric", choices=("fid", "pr", "all"), default="fid")
    p.add_argument("--n", type=int, help="number of generated samples (default eval.n_samples)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("edit", help="latent-direction or real-image editing")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--direction", help="edit direction file (.json or binary)")
    group.add_argument("--wplus", help="inverted W+ latent file")
    p.add_argument("--magnitudes", default="-3,0,3",
                   help="comma-separated steps; write --magnitudes=-2,0,2 when the first is negative")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phi", type=float)
    p.add_argument("--out", default="edit.png")
    p.set_defaults(func=cmd_edit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SketchEBMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
