"""Command-line entry point: ``injection {make-toy,train,sample,evaluate,ablate}``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
Every command first prints its effective arguments (and config, where one is
used) so a run can be reproduced from its own output.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .config import ModelConfig, RandomSource, build_config, config_dict, dump_config, load_config
from .data import IMAGE_SUFFIXES, ToySpec, load_folders, preprocess_eval, to_pil, to_tensor, write_toy_dataset
from .errors import InjectionError
from .trainer import load_checkpoint, sample_variants, train

log = logging.getLogger("injection")

ABLATION_BACKBONES = ("unet", "resnet")
ABLATION_LATENT_WEIGHTS = (0.5, 5.0, 10.0)


class UsageError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get("INJECTION_HOME", "runs"))


def _out_dir(args, verb: str) -> Path:
    return Path(args.out) if args.out else output_root() / verb


def _echo_args(args) -> None:
    for key, value in sorted(vars(args).items()):
        if key != "func":
            print(f"# {key} = {value}")


def _load_triple(args):
    triple = load_config(args.config) if args.config else build_config({})
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "backbone", None) is not None:
        overrides["backbone"] = args.backbone
    if getattr(args, "lambda_latent", None) is not None:
        overrides["lambda_latent"] = args.lambda_latent
    if overrides:
        triple = build_config({**config_dict(*triple), **overrides})
    return triple


def _print_config(triple) -> None:
    print("# effective config")
    for line in dump_config(*triple).splitlines():
        print(f"#   {line}")


# -- make-toy ---------------------------------------------------------------

def cmd_make_toy(args) -> int:
    if args.domains < 2:
        raise UsageError("--domains must be >= 2")
    if args.per_domain < 1 or args.size < 4:
        raise UsageError("--per-domain must be >= 1 and --size >= 4")
    out = _out_dir(args, "toy")
    spec = ToySpec(num_domains=args.domains, per_domain=args.per_domain, image_size=args.size)
    manifest = write_toy_dataset(spec, args.seed, out)
    for name, count in manifest["counts"].items():
        print(f"{name}: {count} images")
    print(f"wrote {sum(manifest['counts'].values())} images to {out}")
    return 0


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    triple = _load_triple(args)
    _print_config(triple)
    model_cfg = triple[0]
    data = Path(args.data)
    if not data.is_dir():
        raise InjectionError(f"data directory not found: {data}")
    ds = load_folders(data, model_cfg)
    if ds.num_domains != model_cfg.num_domains:
        raise InjectionError(f"{data} has {ds.num_domains} domains but num_domains={model_cfg.num_domains}")
    out = _out_dir(args, "train")
    state = train(*triple, ds, out, resume=args.resume)
    print(f"finished: epoch {state.epoch}, step {state.step} "
          f"({state.g_steps} generator / {state.d_steps} discriminator updates)")
    return 0


# -- sample -----------------------------------------------------------------

def _read_inputs(path: Path, cfg: ModelConfig) -> list[torch.Tensor]:
    from PIL import Image

    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    elif path.is_file():
        files = [path]
    else:
        raise UsageError(f"input not found: {path}")
    if not files:
        raise UsageError(f"no images in {path}")
    images = []
    for f in files:
        with Image.open(f) as img:
            images.append(preprocess_eval(to_tensor(img, cfg.in_channels), cfg))
    return images


def cmd_sample(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = state.model_cfg
    if not 0 <= args.target_domain < cfg.num_domains:
        raise UsageError(f"--target-domain must lie in [0, {cfg.num_domains})")
    if args.variants < 1:
        raise UsageError("--variants must be >= 1")
    inputs = torch.stack(_read_inputs(Path(args.input), cfg))
    seed = args.seed if args.seed is not None else 0
    variants = sample_variants(state.G, inputs, args.target_domain, args.variants, RandomSource(seed, "sample"))
    rows = [torch.cat([inp, *row], dim=2) for inp, row in zip(inputs, variants)]
    grid = torch.cat(rows, dim=1)
    out = _out_dir(args, "samples")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"grid_d{args.target_domain}_s{seed}.png"
    to_pil(grid).save(path, format="PNG")
    print(f"wrote {len(inputs)}x{args.variants + 1} grid to {path}")
    return 0


# -- evaluate ---------------------------------------------------------------

@torch.no_grad()
def _translate(G, images, target: int, z, chunk: int = 256) -> torch.Tensor:
    c = torch.full((len(images),), target, dtype=torch.long)
    return torch.cat([G(images[i:i + chunk], c[i:i + chunk], z[i:i + chunk])
                      for i in range(0, len(images), chunk)])


@torch.no_grad()
def evaluate_mappings(state, ds, n: int, pairs: int, seed: int, replace: bool = False,
                      fx=None) -> list[metrics.MetricRecord]:
    """FID and latent diversity for every (source, target) mapping.

    FID compares ``n`` translations of random source images against ``n`` real
    target-domain images. Diversity is averaged over ``pairs`` pairs of outputs,
    each pair being one random source image translated with two independent
    latent codes.
    """
    cfg = state.model_cfg
    fx = fx if fx is not None else metrics.get_extractor(in_channels=cfg.in_channels)
    G = state.G
    records = []
    images = [torch.stack([preprocess_eval(im, cfg) for im in ds.domain_images(k)])
              for k in range(ds.num_domains)]
    for k, imgs in enumerate(images):
        if n > len(imgs) and not replace:
            raise UsageError(f"--n {n} exceeds the {len(imgs)} images of domain {ds.names[k]!r}; "
                             "pass --replacement to sample with replacement")
    real_features = [metrics.extract(fx, imgs) for imgs in images]
    for s in range(ds.num_domains):
        for t in range(ds.num_domains):
            rng = RandomSource(seed, f"evaluate/{s}->{t}")
            src = images[s][torch.from_numpy(metrics.pick_indices(len(images[s]), n, rng, replace))]
            fake = metrics.extract(fx, _translate(G, src, t, rng.normal((n, cfg.latent_dim))))
            fid_value = metrics.fid_from_features(real_features[t], fake, n, rng, replace)
            idx = rng.randint(len(images[s]), (pairs,))
            base = images[s][idx]
            out_a = _translate(G, base, t, rng.normal((pairs, cfg.latent_dim)))
            out_b = _translate(G, base, t, rng.normal((pairs, cfg.latent_dim)))
            feats = metrics.extract(fx, torch.cat([out_a, out_b]))
            pair_idx = np.stack([np.arange(pairs), np.arange(pairs) + pairs], axis=1)
            diversity = float(metrics.pair_distances(feats, pair_idx).mean())
            records.append(metrics.MetricRecord(
                extractor=getattr(fx, "identifier", type(fx).__name__), n=n, num_pairs=pairs,
                seed=seed, fid=fid_value, diversity=diversity,
                source=ds.names[s], target=ds.names[t],
            ))
    return records


def format_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[f"{v:.6f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    if args.n < 2 or args.pairs < 1:
        raise UsageError("--n must be >= 2 and --pairs >= 1")
    state = load_checkpoint(args.ckpt)
    ds = load_folders(args.data, state.model_cfg)
    seed = args.seed if args.seed is not None else 0
    records = evaluate_mappings(state, ds, args.n, args.pairs, seed, replace=args.replacement)
    out = _out_dir(args, "evaluate")
    out.mkdir(parents=True, exist_ok=True)
    metrics.append_report(out / "metrics.csv", records)
    table = format_table(
        ["source", "target", "fid", "diversity", "n", "pairs", "seed", "extractor"],
        [[r.source, r.target, r.fid, r.diversity, r.n, r.num_pairs, r.seed, r.extractor] for r in records],
    )
    with (out / "metrics.txt").open("a") as fh:
        fh.write(table + "\n")
    print(table, end="")
    if not all(metrics.is_finite(r.fid, r.diversity) for r in records):
        print("non-finite metric values", file=sys.stderr)
        return 1
    return 0


# -- ablate -----------------------------------------------------------------

ABLATION_HEADER = ["backbone", "lambda_latent", "fid", "diversity", "status"]


def cmd_ablate(args) -> int:
    base = _load_triple(args)
    _print_config(base)
    ds = load_folders(args.data, base[0])
    out = _out_dir(args, "ablate")
    out.mkdir(parents=True, exist_ok=True)
    seed = base[2].seed
    rows, failed = [], False
    csv_path = out / "ablation.csv"
    csv_path.write_text(",".join(ABLATION_HEADER) + "\n")
    for backbone in ABLATION_BACKBONES:
        for lam in ABLATION_LATENT_WEIGHTS:
            model_cfg = dataclasses.replace(base[0], backbone=backbone)
            weights = dataclasses.replace(base[1], lambda_latent=lam)
            cell = out / f"{backbone}_latent{lam:g}"
            try:
                state = train(model_cfg, weights, base[2], ds, cell)
                recs = evaluate_mappings(state, ds, args.n, args.pairs, seed, replace=True)
                row = [backbone, lam, float(np.mean([r.fid for r in recs])),
                       float(np.mean([r.diversity for r in recs])), "ok"]
            except InjectionError as exc:
                failed = True
                row = [backbone, lam, float("nan"), float("nan"), f"failed: {exc}"]
            rows.append(row)
            with csv_path.open("a") as fh:
                fh.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row) + "\n")
    table = format_table(ABLATION_HEADER, rows)
    div = {(r[0], r[1]): r[3] for r in rows}
    holds = div[("unet", 10.0)] > div[("unet", 0.5)]
    table += f"diversity(unet, 10) > diversity(unet, 0.5): {'yes' if holds else 'no'}\n"
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return 1 if failed else 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="injection", description="Multi-domain image translation with injected latent codes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("make-toy", help="write a synthetic folder-per-domain dataset")
    p.add_argument("--out")
    p.add_argument("--domains", type=int, default=2)
    p.add_argument("--per-domain", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="train on a folder-per-domain dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--backbone", choices=("unet", "resnet"))
    p.add_argument("--lambda-latent", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write a grid of diverse translations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="an image file or a directory of images")
    p.add_argument("--target-domain", type=int, required=True)
    p.add_argument("--variants", type=int, default=7)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="FID and diversity for every domain mapping")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--n", type=int, default=metrics.FID_DEFAULT_N)
    p.add_argument("--pairs", type=int, default=metrics.DIVERSITY_DEFAULT_PAIRS)
    p.add_argument("--seed", type=int)
    p.add_argument("--replacement", action="store_true", help="sample images with replacement")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="backbone x latent-weight grid at toy scale")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--pairs", type=int, default=metrics.DIVERSITY_DEFAULT_PAIRS)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _echo_args(args)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except (InjectionError, OSError) as exc:
        print(f"{parser.prog} {args.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
