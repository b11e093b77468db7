"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 I/O or schema problem, 4 non-finite loss,
5 remote verifier failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
from PIL import Image

from .datamodel import AgeGroup, LandmarkSet, RunConfig, SimilarityTable, bundled_table_path, parse_groups, sample_noise
from .fusion import fuse
from .imgnet import generate_image
from .io import SchemaError, read_csv, read_image, read_landmarks, write_image
from .lmknet import PcaBasis, fit_pca
from .mapper import map_noise
from .metrics import EvalRecord, FaceEntry, age_mae, build_similarity_table, idag_report, pairwise_diversity
from .models import CheckpointError, load_checkpoint
from .oracles import RemoteOracleError, mock_suite, perceptual_distance, remote_verifier

log = logging.getLogger("dlat")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_REMOTE = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# fit-pca ------------------------------------------------------------------

def cmd_fit_pca(args) -> int:
    from .train import load_landmark_dir

    sets = load_landmark_dir(args.landmarks, args.gender)
    if not sets:
        raise SchemaError(f"no {args.gender!r} landmark sets under {args.landmarks}")
    basis = fit_pca(sets, args.dim)
    basis.save(args.out)
    kept = basis.explained_variance.sum()
    print(f"fitted {basis.dim}-component basis on {len(sets)} sets; retained variance {kept:.6g} -> {args.out}")
    return EXIT_OK


# train --------------------------------------------------------------------

def _data_dir(cfg: RunConfig, config_path: Path) -> Path:
    if not cfg.data:
        raise UsageError(f"{config_path} does not set 'data' (dataset directory)")
    d = Path(cfg.data)
    return d if d.is_absolute() else config_path.parent / d


def cmd_train(args) -> int:
    from .train import ImageDataset, ImageTrainer, LandmarkDataset, LandmarkTrainer

    cfg_path = Path(args.config)
    cfg = RunConfig.load(cfg_path)
    if args.seed is not None:
        cfg = RunConfig.from_flat({**cfg.to_flat(), "seed": args.seed})
    data = _data_dir(cfg, cfg_path)
    groups = cfg.trainable_groups
    if args.net == "img":
        if args.pca:
            raise UsageError("--pca only applies to --net lmk")
        ds = ImageDataset.from_dir(data, args.gender, groups, cfg.resolution)
        trainer = ImageTrainer(cfg, ds, mock_suite(cfg.seed, cfg.race_classes, cfg.embed_dim))
    else:
        ds = LandmarkDataset.from_dir(data, args.gender, groups)
        trainer = LandmarkTrainer(cfg, ds, PcaBasis.load(args.pca) if args.pca else None)
    if args.resume:
        trainer.restore(args.resume)
    start = trainer.step
    trainer.run(args.out)
    print(f"trained {args.net} on {len(ds)} samples: steps {start}->{trainer.step}; checkpoint {Path(args.out) / 'final'}")
    return EXIT_OK


# infer --------------------------------------------------------------------

def _fit_resolution(img: np.ndarray, l: LandmarkSet | None, res: int):
    h, w = img.shape[:2]
    if (h, w) == (res, res):
        return img, l
    q = Image.fromarray(np.round((np.clip(img, -1, 1) + 1) * 127.5).astype(np.uint8))
    img = np.asarray(q.resize((res, res), Image.BILINEAR), float) / 127.5 - 1.0
    if l is not None:
        scale = np.array([(res - 1) / (w - 1), (res - 1) / (h - 1)])
        l = LandmarkSet(l.points * scale, l.group)
    return img, l


def cmd_infer(args) -> int:
    targets = parse_groups(args.targets)
    if not targets:
        raise UsageError("--targets needs at least one age group")
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if args.fuse and not (args.ckpt_lmk and args.landmarks):
        raise UsageError("--fuse needs --ckpt-lmk and --landmarks")
    img_nets, _, _ = load_checkpoint(args.ckpt_img, expect="img")
    lmk_nets = load_checkpoint(args.ckpt_lmk, expect="lmk")[0] if args.fuse else None
    for g in targets:
        for nets in filter(None, (img_nets, lmk_nets)):
            if g not in nets.groups:
                raise UsageError(f"target {g} is not a trained group ({', '.join(str(x) for x in nets.groups)})")
    x = read_image(args.input)
    l_x = read_landmarks(args.landmarks) if args.landmarks else None
    x, l_x = _fit_resolution(x, l_x, img_nets.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    written = 0
    for s in range(args.samples):
        noise_seed = args.seed + s
        n = sample_noise(np.random.default_rng(noise_seed))
        for g in targets:
            side = {"input": str(args.input), "group": g.bounds_str, "sample": s, "seed": args.seed,
                    "noise_seed": noise_seed, "noise": n.tolist(), "fused": bool(args.fuse)}
            if args.fuse:
                r = fuse(x, l_x, n, g, img_nets, lmk_nets, args.warp)
                y = r.image
                side.update(warp=r.warp.tolist(), warp_method=args.warp)
            else:
                u = map_noise(n, img_nets.mapper, img_nets.groups)[img_nets.groups.index(g)]
                y = generate_image(x, u, img_nets.generator)
                side["warp"] = None
            name = f"{stem}_{g.bounds_str}_{s:02d}"
            write_image(out / f"{name}.png", y)
            (out / f"{name}.json").write_text(json.dumps(side, indent=2))
            written += 1
    print(f"wrote {written} images to {out}")
    return EXIT_OK


# eval ---------------------------------------------------------------------

def _verifier(kind: str, seed: int):
    if kind == "mock":
        return mock_suite(seed).face_verifier
    try:
        return remote_verifier()
    except ValueError as exc:
        raise RemoteOracleError(str(exc)) from None


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _eval_idag(args, rows, base) -> dict:
    table = SimilarityTable.from_csv(args.table or bundled_table_path())
    has_sim = all(r.get("similarity", "") != "" for r in rows)
    verifier = None if has_sim else _verifier(args.oracle, args.seed)
    records = []
    for i, r in enumerate(rows):
        src_g, tgt_g = AgeGroup.parse(r["source_group"]), AgeGroup.parse(r["target_group"])
        if has_sim:
            s = float(r["similarity"])
        else:
            s = verifier(read_image(_resolve(base, r["source"])), read_image(_resolve(base, r["synthesis"])),
                         pair_id=f"row {i + 1}")
        records.append(EvalRecord.from_table(r["source"], src_g, tgt_g, s, table))
    n = len({r.source_id for r in records})
    m = len({r.target_group for r in records})
    return idag_report(records, n, m)


def _eval_mae(args, rows, base) -> dict:
    if args.oracle != "mock":
        raise UsageError("age estimation has no remote backend; use --oracle mock or an 'age' column")
    est = mock_suite(args.seed).age_estimator
    ages, targets = [], []
    for r in rows:
        ages.append(float(r["age"]) if r.get("age", "") != "" else est(read_image(_resolve(base, r["synthesis"]))))
        targets.append(AgeGroup.parse(r["target_group"]))
    per = defaultdict(list)
    for a, g in zip(ages, targets):
        per[g].append(a)
    return {"mae": age_mae(ages, targets), "N": len(ages),
            "per_target_group": {g.bounds_str: age_mae(v, [g] * len(v)) for g, v in sorted(per.items(), key=lambda kv: kv[0].index)}}


def _eval_diversity(args, rows, base) -> dict:
    if args.oracle != "mock":
        raise UsageError("perceptual distance has no remote backend; use --oracle mock")
    dist = perceptual_distance(mock_suite(args.seed).perceptual_extractor)
    clusters = defaultdict(list)
    for r in rows:
        clusters[AgeGroup.parse(r["target_group"])].append(read_image(_resolve(base, r["synthesis"])))
    per = {g.bounds_str: pairwise_diversity(v, dist) for g, v in sorted(clusters.items(), key=lambda kv: kv[0].index)
           if len(v) >= 2}
    if not per:
        raise SchemaError("no target group has two or more syntheses")
    return {"diversity": float(np.mean(list(per.values()))), "per_target_group": per, "N": len(rows)}


EVAL_COLUMNS = {
    "idag": ("source", "source_group", "target_group", "synthesis"),
    "mae": ("synthesis", "target_group"),
    "diversity": ("synthesis", "target_group"),
}


def cmd_eval(args) -> int:
    manifest = Path(args.manifest)
    rows = read_csv(manifest, EVAL_COLUMNS[args.metric])
    if not rows:
        raise SchemaError(f"{manifest} has no rows")
    fn = {"idag": _eval_idag, "mae": _eval_mae, "diversity": _eval_diversity}[args.metric]
    report = fn(args, rows, manifest.parent)
    Path(args.out).write_text(json.dumps(report, indent=2))
    print(f"{args.metric} = {report[args.metric]:.6f} -> {args.out}")
    return EXIT_OK


# sim-table ----------------------------------------------------------------

def cmd_sim_table(args) -> int:
    d = Path(args.dataset)
    rows = read_csv(d / "manifest.csv", ("path", "subject", "group"))
    faces = [FaceEntry(r["subject"], AgeGroup.parse(r["group"]), _resolve(d, r["path"]), r["path"]) for r in rows]
    table = build_similarity_table(faces, _verifier(args.oracle, args.seed), args.workers)
    table.to_csv(args.out)
    print(f"similarity table from {len(faces)} faces; {int((~table.valid).sum()) // 2} empty cell pairs -> {args.out}")
    return EXIT_OK


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlat", description="Diverse lifespan face aging: training, inference, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit-pca", help="fit the landmark shape basis")
    f.add_argument("--landmarks", required=True, help="directory with manifest.csv (path, group, gender) and landmark CSVs")
    f.add_argument("--gender", required=True, choices=("m", "f"))
    f.add_argument("--out", required=True, help="output .npz path")
    f.add_argument("--dim", type=int, default=32, help="number of components (default 32)")
    f.set_defaults(fn=cmd_fit_pca)

    t = sub.add_parser("train", help="train the image or landmark network")
    t.add_argument("--net", required=True, choices=("img", "lmk"))
    t.add_argument("--gender", required=True, choices=("m", "f"))
    t.add_argument("--config", required=True, help="TOML run configuration; 'data' is resolved relative to it")
    t.add_argument("--out", required=True, help="run directory (log, checkpoints/, final/)")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--pca", help="landmark basis from fit-pca (lmk only; default fits on the training set)")
    t.add_argument("--seed", type=int, help="override the configured seed")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="age-transform one face")
    i.add_argument("--ckpt-img", required=True, help="image checkpoint (run directory or checkpoint directory)")
    i.add_argument("--ckpt-lmk", help="landmark checkpoint (required with --fuse)")
    i.add_argument("--input", required=True, help="source face image")
    i.add_argument("--landmarks", help="81-row x,y CSV for the source face (required with --fuse)")
    i.add_argument("--targets", required=True, help="comma-separated target groups, e.g. 0-2,50-69")
    i.add_argument("--samples", type=int, default=1, help="noise samples per target (default 1)")
    i.add_argument("--fuse", action="store_true", help="warp the synthesis towards the landmark network's output")
    i.add_argument("--warp", choices=("affine", "tps"), default="affine", help="fusion warp model (default affine)")
    i.add_argument("--out", required=True, help="output directory for PNGs and JSON sidecars")
    i.add_argument("--seed", type=int, default=0, help="sample s uses noise seed SEED+s (default 0)")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="evaluate syntheses")
    e.add_argument("metric", choices=("idag", "mae", "diversity"))
    e.add_argument("--manifest", required=True,
                   help="CSV with source, source_group, target_group, synthesis and optional similarity/age columns")
    e.add_argument("--table", help="similarity table CSV for idag (default: bundled table)")
    e.add_argument("--oracle", choices=("mock", "remote"), default="mock")
    e.add_argument("--out", required=True, help="JSON report path")
    e.add_argument("--seed", type=int, default=0, help="mock oracle seed (default 0)")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sim-table", help="similarity-table tools")
    ssub = s.add_subparsers(dest="action", required=True)
    b = ssub.add_parser("build", help="average same-subject verifier scores per age-group pair")
    b.add_argument("--dataset", required=True, help="directory with manifest.csv (path, subject, group)")
    b.add_argument("--oracle", choices=("mock", "remote"), default="mock")
    b.add_argument("--out", required=True, help="output CSV")
    b.add_argument("--workers", type=int, default=4, help="concurrent verifier requests (default 4)")
    b.add_argument("--seed", type=int, default=0, help="mock oracle seed (default 0)")
    b.set_defaults(fn=cmd_sim_table)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"dlat: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RemoteOracleError as exc:
        print(f"dlat: remote verifier failure: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except FloatingPointError as exc:
        print(f"dlat: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, SchemaError, CheckpointError, ValueError, KeyError) as exc:
        print(f"dlat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())
