"""Command-line interface.

Subcommands map one-to-one onto the toolkit's operations: tiling (crop,
stitch), feature curation (encode, cluster, tsne), model work (train,
predict), labeling (rasterize, proposals), scoring (evaluate), the synthetic
corpus generator (synth gen), and the orchestrated workflows (pipeline ...).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np


def _cmd_crop(args):
    from .imageio import load_image, save_image
    from .tiling import compute_grid, crop, save_grid, tile_name
    img = load_image(args.input)
    grid = compute_grid(img.width, img.height, args.window, args.margin, args.mode)
    os.makedirs(args.out, exist_ok=True)
    tiles = crop(img, grid)
    for tid, tile in tiles.items():
        save_image(tile, os.path.join(args.out, f"{tile_name(tid)}.png"))
    save_grid(grid, args.grid_out or os.path.join(args.out, "grid.json"))
    print(f"wrote {len(tiles)} tiles ({grid.cols}x{grid.rows}) to {args.out}")


def _cmd_stitch(args):
    from .imageio import load_image, save_image
    from .tiling import load_grid, parse_tile_name, stitch
    grid = load_grid(args.grid)
    tiles = {}
    for p in Path(args.in_dir).glob("*.png"):
        try:
            tid = parse_tile_name(p.stem)
        except ValueError:
            continue
        tiles[tid] = load_image(p)
    out = stitch(tiles, grid)
    save_image(out, args.out)
    print(f"stitched {len(tiles)} tiles into {out.width}x{out.height} {args.out}")


def _cmd_encode(args):
    from .autoencoder import encode_tiles, save_codes
    from .imageio import load_image
    from .nn import load_params
    net = load_params(args.model)
    tiles = {p.stem: load_image(p) for p in sorted(Path(args.tiles).glob("*.png"))}
    codes = encode_tiles(net, tiles)
    save_codes(np.stack([c.code for c in codes]), args.out)
    names_path = args.out + ".names.txt"
    Path(names_path).write_text("\n".join(c.name for c in codes) + "\n")
    print(f"encoded {len(codes)} tiles -> {args.out} (names: {names_path})")


def _names_for(codes_path, names_arg, count):
    if names_arg:
        return Path(names_arg).read_text().split()
    sidecar = Path(str(codes_path) + ".names.txt")
    if sidecar.exists():
        return sidecar.read_text().split()
    return [str(i) for i in range(count)]


def _cmd_cluster(args):
    from .autoencoder import LatentCode, load_codes
    from .clustering import cluster_report, kmeans
    mat = load_codes(args.codes)
    names = _names_for(args.codes, args.names, len(mat))
    codes = [LatentCode(n, v) for n, v in zip(names, mat)]
    model = kmeans(codes, k=args.k, seed=args.seed)
    rep = cluster_report(model)
    with open(args.out, "w", encoding="utf-8") as f:
        for name in sorted(model.assignments):
            f.write(f"{name} {model.assignments[name]}\n")
    print(f"counts (ascending): {rep.counts}")
    print(f"wrote assignments to {args.out}")


def _cmd_tsne(args):
    from .autoencoder import load_codes
    from .embedding import tsne
    mat = load_codes(args.codes)
    names = _names_for(args.codes, args.names, len(mat))
    clusters = {}
    if args.clusters:
        for line in Path(args.clusters).read_text().splitlines():
            if line.strip():
                name, c = line.split()
                clusters[name] = int(c)
    emb = tsne(mat, perplexity=args.perplexity, seed=args.seed)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["tile_name", "x", "y", "cluster"])
        for name, (x, y) in zip(names, emb.points):
            w.writerow([name, f"{x:.6f}", f"{y:.6f}", clusters.get(name, "")])
    print(f"embedded {len(mat)} points -> {args.out} (final KL {emb.kl_trace[-1]:.4f})")


def _cmd_train(args):
    from .imageio import load_image, load_mask
    from .manifest import manifest_load
    from .nn import save_params
    from .unet import UNetConfig, build_unet, train_unet
    manifest = manifest_load(args.manifest)
    cfg = UNetConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = UNetConfig(**json.load(f))
    pairs = [(load_image(e.image_path), load_mask(e.mask_path))
             for e in manifest.subset("train")]
    val = [(load_image(e.image_path), load_mask(e.mask_path))
           for e in manifest.subset("val")]
    net = build_unet(cfg, seed=args.seed)
    run, _ = train_unet(net, pairs, val, epochs=args.epochs, batch_size=args.batch,
                        seed=args.seed, lr=args.lr)
    save_params(net, args.out)
    print(f"trained {run.epochs} epochs; final loss {run.train_loss[-1]:.5f} -> {args.out}")


def _cmd_predict(args):
    from .imageio import load_image, save_mask
    from .nn import load_params
    from .tiling import compute_grid
    from .unet import predict_full
    net = load_params(args.model)
    img = load_image(args.input)
    grid = compute_grid(img.width, img.height, args.window, args.margin, args.mode)
    mask = predict_full(net, img, grid, args.threshold)
    save_mask(mask, args.out)
    print(f"predicted {mask.width}x{mask.height} mask -> {args.out}")


def _cmd_rasterize(args):
    from .imageio import save_mask
    from .labeling import load_annotation, rasterize
    os.makedirs(args.out, exist_ok=True)
    n = 0
    for p in sorted(Path(args.ann).glob("*.json")):
        mask = rasterize(load_annotation(p), args.label)
        save_mask(mask, os.path.join(args.out, f"{p.stem}.png"))
        n += 1
    print(f"rasterized {n} annotations -> {args.out}")


def _cmd_proposals(args):
    from .imageio import save_mask
    from .labeling import ProposalFilter, filter_proposals, load_proposals, merge_proposals
    flt = ProposalFilter(args.min_area, args.max_area, args.min_stability,
                         args.min_predicted_iou)
    os.makedirs(args.out, exist_ok=True)
    n = 0
    for p in sorted(Path(args.in_dir).glob("*.json")):
        props = filter_proposals(load_proposals(p), flt)
        if props:
            h, w = props[0].segmentation.shape
        else:
            h = w = 128
        mask = merge_proposals(props, w, h)
        save_mask(mask, os.path.join(args.out, f"{p.stem}.png"))
        n += 1
    print(f"merged proposals for {n} tiles -> {args.out}")


def _cmd_evaluate(args):
    from .imageio import load_mask
    from .metrics import score_dataset, write_report_csv
    preds = {p.stem: load_mask(p) for p in Path(args.pred).glob("*.png")}
    truths = {p.stem: load_mask(p) for p in Path(args.truth).glob("*.png")}
    report = score_dataset(preds, truths)
    write_report_csv(report, args.out)
    print(f"miou={report.miou:.4f} f1={report.f1:.4f} ({report.variant}) -> {args.out}")


def _cmd_synth_gen(args):
    from .synth import write_corpus
    write_corpus(args.out, args.tiles, args.seed)
    print(f"synthetic corpus with {args.tiles} tiles -> {args.out}")


def _cmd_pipeline_run(args):
    from .pipeline import PipelineConfig, run_pipeline
    result = run_pipeline(PipelineConfig.from_json(args.config))
    if result.report:
        print(f"test miou={result.report.miou:.4f} f1={result.report.f1:.4f}")
    print(f"stages run: {result.stages_run or '(all cached)'}")


def _cmd_pipeline_sweep(args):
    from .pipeline import PipelineConfig, experiment_size_sweep
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = experiment_size_sweep(PipelineConfig.from_json(args.config), sizes)
    for row in rows:
        print(f"size {row['size']:>4}: miou={row['miou']:.4f} f1={row['f1']:.4f}")


def _cmd_pipeline_methods(args):
    from .pipeline import PipelineConfig, experiment_methods
    rows = experiment_methods(PipelineConfig.from_json(args.config))
    for row in rows:
        if row["status"] == "ok":
            print(f"{row['method']:>28}: miou={row['miou']:.4f} f1={row['f1']:.4f} "
                  f"(n={row['train_size']})")
        else:
            print(f"{row['method']:>28}: {row['status']}")


def _cmd_pipeline_iterate(args):
    from .pipeline import PipelineConfig, advance_round, enqueue_review
    config = PipelineConfig.from_json(args.config)
    if args.advance:
        state = advance_round(config)
        print(f"advanced to round {state.round}; model {state.model_paths[-1]}")
    else:
        queue = enqueue_review(config, limit=args.limit)
        pending = sum(1 for q in queue)
        print(f"review queue has {pending} items under {config.work_dir}/review")


def _cmd_pipeline_serve(args):
    from .pipeline import IterationState, PipelineConfig, advance_round
    from .review import ReviewService, ReviewStore, serve_forever
    config = PipelineConfig.from_json(args.config)
    store = ReviewStore(config.work_dir)

    def current_round() -> int:
        state = IterationState.load(config.work_dir)
        return state.round if state else 0

    service = ReviewService(
        store,
        round_provider=current_round,
        trainer=lambda: advance_round(config),
        ui_dir=args.ui_dir,
    )
    serve_forever(service, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfosseg",
                                     description="tiled C-fos segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crop", help="cut an image into overlapping window tiles")
    p.add_argument("--input", required=True)
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--margin", type=int, default=4)
    p.add_argument("--mode", choices=["paper", "full"], default="paper")
    p.add_argument("--out", required=True)
    p.add_argument("--grid-out")
    p.set_defaults(func=_cmd_crop)

    p = sub.add_parser("stitch", help="reassemble tile center crops")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stitch)

    p = sub.add_parser("encode", help="encode tiles to latent codes")
    p.add_argument("--model", required=True)
    p.add_argument("--tiles", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("cluster", help="k-means over latent codes")
    p.add_argument("--codes", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("tsne", help="2-D diagnostic embedding of codes")
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--names")
    p.add_argument("--clusters")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_tsne)

    p = sub.add_parser("train", help="train the segmentation model from a manifest")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="tile, predict, and stitch a full image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--margin", type=int, default=4)
    p.add_argument("--mode", choices=["paper", "full"], default="paper")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("rasterize", help="polygon annotation files to masks")
    p.add_argument("--ann", required=True)
    p.add_argument("--label", default="cfos")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rasterize)

    p = sub.add_parser("proposals", help="filter and merge mask proposals")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--min-area", type=int, default=30)
    p.add_argument("--max-area", type=int, default=4000)
    p.add_argument("--min-stability", type=float, default=0.9)
    p.add_argument("--min-predicted-iou", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_proposals)

    p = sub.add_parser("evaluate", help="score predicted masks against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("synth", help="synthetic corpus tools")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    g = synth_sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--tiles", type=int, default=150)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("pipeline", help="orchestrated workflows")
    pipe_sub = p.add_subparsers(dest="pipeline_command", required=True)

    g = pipe_sub.add_parser("run", help="full crop-classify-train-predict run")
    g.add_argument("--config", required=True)
    g.set_defaults(func=_cmd_pipeline_run)

    g = pipe_sub.add_parser("sweep", help="training-set size sweep")
    g.add_argument("--config", required=True)
    g.add_argument("--sizes", default="0,5,30,80,150,250")
    g.set_defaults(func=_cmd_pipeline_sweep)

    g = pipe_sub.add_parser("methods", help="curation method comparison")
    g.add_argument("--config", required=True)
    g.set_defaults(func=_cmd_pipeline_methods)

    g = pipe_sub.add_parser("iterate", help="queue predictions for review / advance a round")
    g.add_argument("--config", required=True)
    g.add_argument("--limit", type=int)
    g.add_argument("--advance", action="store_true",
                   help="fold accepted reviews in and train the next round")
    g.set_defaults(func=_cmd_pipeline_iterate)

    g = pipe_sub.add_parser("serve", help="run the review service")
    g.add_argument("--config", required=True)
    g.add_argument("--port", type=int, default=8080)
    g.add_argument("--ui-dir", help="static directory with the review client")
    g.set_defaults(func=_cmd_pipeline_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
