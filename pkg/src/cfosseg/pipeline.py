"""End-to-end orchestration: crop, curate, train, predict, evaluate, iterate.

Every stage persists its outputs under the work directory together with a
fingerprint derived from the config and upstream stages; rerunning with the
same config resumes after the last completed stage. The iteration loop
enqueues model predictions for human review and folds accepted pairs back
into the training manifest for the next round's model.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderConfig, encode_tiles, save_codes, train_autoencoder
from .clustering import ClusterModel, cluster_report, kmeans, stratified_select
from .imageio import ImageBuffer, MaskBuffer, load_image, load_mask, save_mask
from .labeling import ProposalFilter, filter_proposals, load_annotation, load_proposals, \
    merge_proposals, rasterize
from .manifest import DatasetManifest, ManifestEntry, manifest_load, manifest_save
from .metrics import ScoreReport, score_dataset, write_report_csv
from .nn import load_params, save_params
from .tiling import compute_grid, crop, crop_mask, save_grid, tile_name
from .unet import UNetConfig, build_unet, predict_full, predict_tile, train_unet

STAGE_ORDER = ("crop", "autoencoder", "encode", "cluster", "select", "label",
               "train", "predict", "evaluate")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    work_dir: str
    corpus_dir: str | None = None
    source_image: str | None = None
    source_mask: str | None = None
    window: int = 128
    margin: int = 4
    mode: str = "paper"
    ae_epochs: int = 20
    ae_batch: int = 32
    k: int = 5
    quotas: list[int] | None = None
    train_count: int = 120
    val_count: int = 20
    test_count: int = 30
    label_source: str = "masks"
    annotations_dir: str | None = None
    annotation_label: str = "cfos"
    min_area: int = 30
    max_area: int = 4000
    min_stability: float = 0.9
    min_predicted_iou: float = 0.0
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 1e-3
    threshold: float = 0.5
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

    def proposal_filter(self) -> ProposalFilter:
        return ProposalFilter(self.min_area, self.max_area,
                              self.min_stability, self.min_predicted_iou)


@dataclass
class PipelineResult:
    report: ScoreReport | None
    final_mask: MaskBuffer | None
    manifest: DatasetManifest
    work_dir: str
    stages_run: list[str] = field(default_factory=list)


class _RunState:
    """Stage completion ledger persisted as JSON in the work dir."""

    def __init__(self, work_dir: str):
        self.path = os.path.join(work_dir, "run_state.json")
        self.stages: dict[str, dict] = {}
        if os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as f:
                self.stages = json.load(f)

    def fresh(self, stage: str, fingerprint: str) -> bool:
        rec = self.stages.get(stage)
        if rec is None or rec["fingerprint"] != fingerprint:
            return True
        return not all(os.path.exists(p) for p in rec["outputs"])

    def record(self, stage: str, fingerprint: str, outputs: list[str]) -> None:
        self.stages[stage] = {"fingerprint": fingerprint, "outputs": outputs}
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.stages, f, indent=2, sort_keys=True)
        os.replace(tmp, self.path)


def _fingerprint(config: PipelineConfig, stage: str, parent: str) -> str:
    payload = json.dumps({"config": asdict(config), "stage": stage, "parent": parent},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _load_tiles(dir_path: str) -> dict[str, ImageBuffer]:
    tiles = {}
    for p in sorted(Path(dir_path).glob("*.png")):
        tiles[p.stem] = load_image(p)
    return tiles


class Pipeline:
    """Runs the staged workflow inside one work directory."""

    def __init__(self, config: PipelineConfig):
        if config.corpus_dir is None and config.source_image is None:
            raise ValueError("config needs corpus_dir or source_image")
        self.cfg = config
        self.work = config.work_dir
        os.makedirs(self.work, exist_ok=True)
        self.state = _RunState(self.work)
        self.stages_run: list[str] = []

    # -- paths -----------------------------------------------------------
    def _p(self, *parts) -> str:
        return os.path.join(self.work, *parts)

    @property
    def tiles_dir(self) -> str:
        if self.cfg.corpus_dir:
            return os.path.join(self.cfg.corpus_dir, "tiles")
        return self._p("tiles")

    @property
    def truth_masks_dir(self) -> str:
        if self.cfg.corpus_dir:
            return os.path.join(self.cfg.corpus_dir, "masks")
        return self._p("source_truth")

    @property
    def proposals_dir(self) -> str | None:
        if self.cfg.corpus_dir:
            d = os.path.join(self.cfg.corpus_dir, "proposals")
            return d if os.path.isdir(d) else None
        return None

    # -- stage driver ------------------------------------------------------
    def _run_stage(self, stage: str, parent_fp: str, fn) -> str:
        fp = _fingerprint(self.cfg, stage, parent_fp)
        if self.state.fresh(stage, fp):
            try:
                outputs = fn()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, str(exc)) from exc
            self.state.record(stage, fp, outputs)
            self.stages_run.append(stage)
        return fp

    def run(self) -> PipelineResult:
        fp = ""
        fp = self._run_stage("crop", fp, self._stage_crop)
        fp = self._run_stage("autoencoder", fp, self._stage_autoencoder)
        fp = self._run_stage("encode", fp, self._stage_encode)
        fp = self._run_stage("cluster", fp, self._stage_cluster)
        fp = self._run_stage("select", fp, self._stage_select)
        fp = self._run_stage("label", fp, self._stage_label)
        fp = self._run_stage("train", fp, self._stage_train)
        fp = self._run_stage("predict", fp, self._stage_predict)
        fp = self._run_stage("evaluate", fp, self._stage_evaluate)
        report = None
        report_path = self._p("report.json")
        if os.path.exists(report_path):
            with open(report_path, "r", encoding="utf-8") as f:
                doc = json.load(f)
            report = ScoreReport(per_image=doc["per_image"], miou=doc["miou"],
                                 f1=doc["f1"], variant=doc["variant"])
        final_mask = None
        if os.path.exists(self._p("full_mask.png")):
            final_mask = load_mask(self._p("full_mask.png"))
        return PipelineResult(
            report=report,
            final_mask=final_mask,
            manifest=manifest_load(self._p("manifest.json")),
            work_dir=self.work,
            stages_run=self.stages_run,
        )

    # -- stages ----------------------------------------------------------
    def _stage_crop(self) -> list[str]:
        cfg = self.cfg
        if cfg.window <= 2 * cfg.margin:
            raise StageError("crop", f"window {cfg.window} must exceed twice the margin {cfg.margin}")
        outputs = []
        if cfg.source_image:
            src = load_image(cfg.source_image)
            grid = compute_grid(src.width, src.height, cfg.window, cfg.margin, cfg.mode)
            save_grid(grid, self._p("grid.json"))
            outputs.append(self._p("grid.json"))
            if cfg.corpus_dir is None:
                os.makedirs(self._p("tiles"), exist_ok=True)
                from .imageio import save_image
                for tid, tile in crop(src, grid).items():
                    save_image(tile, self._p("tiles", f"{tile_name(tid)}.png"))
                outputs.append(self._p("tiles"))
            if cfg.source_mask:
                truth = load_mask(cfg.source_mask)
                os.makedirs(self._p("source_truth"), exist_ok=True)
                for tid, m in crop_mask(truth, grid).items():
                    save_mask(m, self._p("source_truth", f"{tile_name(tid)}.png"))
                outputs.append(self._p("source_truth"))
        if not os.path.isdir(self.tiles_dir) or not any(Path(self.tiles_dir).glob("*.png")):
            raise StageError("crop", f"no tiles available under {self.tiles_dir}")
        return outputs

    def _stage_autoencoder(self) -> list[str]:
        tiles = _load_tiles(self.tiles_dir)
        names = sorted(tiles)
        cfg = AutoencoderConfig(epochs=self.cfg.ae_epochs, batch_size=self.cfg.ae_batch)
        net, history = train_autoencoder([tiles[n] for n in names], cfg, seed=self.cfg.seed)
        save_params(net, self._p("autoencoder.cfosnn"))
        with open(self._p("autoencoder_history.json"), "w", encoding="utf-8") as f:
            json.dump(history, f)
        return [self._p("autoencoder.cfosnn"), self._p("autoencoder_history.json")]

    def _stage_encode(self) -> list[str]:
        net = load_params(self._p("autoencoder.cfosnn"))
        tiles = _load_tiles(self.tiles_dir)
        codes = encode_tiles(net, tiles)
        save_codes(np.stack([c.code for c in codes]), self._p("codes.bin"))
        with open(self._p("codes.names.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(c.name for c in codes) + "\n")
        return [self._p("codes.bin"), self._p("codes.names.txt")]

    def _load_codes(self):
        from .autoencoder import LatentCode, load_codes
        mat = load_codes(self._p("codes.bin"))
        names = Path(self._p("codes.names.txt")).read_text().split()
        return [LatentCode(n, v) for n, v in zip(names, mat)]

    def _stage_cluster(self) -> list[str]:
        codes = self._load_codes()
        model = kmeans(codes, k=self.cfg.k, seed=self.cfg.seed)
        rep = cluster_report(model)
        np.save(self._p("centroids.npy"), model.centroids)
        with open(self._p("clusters.json"), "w", encoding="utf-8") as f:
            json.dump({
                "k": model.k,
                "seed": model.seed,
                "assignments": model.assignments,
                "objective_history": model.objective_history,
                "counts_ascending": rep.counts,
            }, f, indent=2, sort_keys=True)
        return [self._p("clusters.json"), self._p("centroids.npy")]

    def _cluster_model(self) -> ClusterModel:
        with open(self._p("clusters.json"), "r", encoding="utf-8") as f:
            doc = json.load(f)
        return ClusterModel(
            k=doc["k"], centroids=np.load(self._p("centroids.npy")),
            assignments=doc["assignments"], seed=doc["seed"],
            objective_history=doc["objective_history"],
        )

    def _pool_manifest(self) -> DatasetManifest:
        """All pool tiles as manifest entries (mask paths filled in later)."""
        entries = []
        for p in sorted(Path(self.tiles_dir).glob("*.png")):
            entries.append(ManifestEntry(str(p), str(p), "train", "manual"))
        return DatasetManifest(seed=self.cfg.seed, entries=entries)

    @staticmethod
    def _waterfill(populations: list[int], target: int) -> list[int]:
        """Per-cluster quotas as balanced as the populations allow."""
        k = len(populations)
        quotas = [0] * k
        remaining = min(target, sum(populations))
        while remaining > 0:
            open_clusters = [c for c in range(k) if quotas[c] < populations[c]]
            share = max(1, remaining // len(open_clusters))
            for c in open_clusters:
                take = min(share, populations[c] - quotas[c], remaining)
                quotas[c] += take
                remaining -= take
                if remaining == 0:
                    break
        return quotas

    def _stage_select(self) -> list[str]:
        cfg = self.cfg
        model = self._cluster_model()
        pool = self._pool_manifest()
        populations = [0] * cfg.k
        for e in pool.entries:
            c = model.assignments.get(Path(e.image_path).stem)
            if c is not None:
                populations[c] += 1
        quotas = cfg.quotas if cfg.quotas is not None else self._waterfill(populations, cfg.train_count)
        train_sel = stratified_select(pool, model, quotas, seed=cfg.seed, split="train")
        chosen = {Path(e.image_path).stem for e in train_sel.entries}
        rest = sorted(set(model.assignments) - chosen)
        rng = np.random.default_rng(cfg.seed + 1)
        need = cfg.val_count + cfg.test_count
        if len(rest) < need:
            raise StageError("select", f"pool leaves {len(rest)} tiles for val+test, need {need}")
        picked = rng.choice(len(rest), size=need, replace=False)
        val_names = sorted(rest[i] for i in picked[:cfg.val_count])
        test_names = sorted(rest[i] for i in picked[cfg.val_count:])
        doc = {
            "quotas": list(quotas),
            "train": sorted(Path(e.image_path).stem for e in train_sel.entries),
            "val": val_names,
            "test": test_names,
            "cluster_index": {Path(e.image_path).stem: e.cluster_index
                              for e in train_sel.entries},
        }
        with open(self._p("selection.json"), "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
        return [self._p("selection.json")]

    def _selection(self) -> dict:
        with open(self._p("selection.json"), "r", encoding="utf-8") as f:
            return json.load(f)

    def _make_label(self, name: str, labels_dir: str) -> tuple[str, str]:
        """Produce the mask for one tile; returns (mask_path, provenance)."""
        cfg = self.cfg
        out = os.path.join(labels_dir, f"{name}.png")
        if cfg.label_source == "masks":
            src = os.path.join(self.truth_masks_dir, f"{name}.png")
            if not os.path.exists(src):
                raise FileNotFoundError(f"no ground-truth mask for tile {name} at {src}")
            shutil.copyfile(src, out)
            return out, "manual"
        if cfg.label_source == "annotations":
            if not cfg.annotations_dir:
                raise ValueError("label_source=annotations needs annotations_dir")
            ann_path = os.path.join(cfg.annotations_dir, f"{name}.json")
            if not os.path.exists(ann_path):
                raise FileNotFoundError(f"no annotation for tile {name} at {ann_path}")
            mask = rasterize(load_annotation(ann_path), cfg.annotation_label)
            save_mask(mask, out)
            return out, "manual"
        if cfg.label_source == "proposals":
            pdir = self.proposals_dir
            if pdir is None:
                raise ValueError("label_source=proposals but corpus has no proposals dir")
            ppath = os.path.join(pdir, f"{name}.json")
            if not os.path.exists(ppath):
                raise FileNotFoundError(f"no proposals for tile {name} at {ppath}")
            props = filter_proposals(load_proposals(ppath), cfg.proposal_filter())
            tile = load_image(os.path.join(self.tiles_dir, f"{name}.png"))
            mask = merge_proposals(props, tile.width, tile.height)
            save_mask(mask, out)
            return out, "proposal"
        raise ValueError(f"unknown label_source {cfg.label_source!r}")

    def _stage_label(self) -> list[str]:
        sel = self._selection()
        labels_dir = self._p("labels")
        os.makedirs(labels_dir, exist_ok=True)
        entries = []
        cluster_index = sel.get("cluster_index", {})
        for split in ("train", "val", "test"):
            for name in sel[split]:
                mask_path, provenance = self._make_label(name, labels_dir)
                entries.append(ManifestEntry(
                    image_path=os.path.join(self.tiles_dir, f"{name}.png"),
                    mask_path=mask_path,
                    split=split,
                    provenance=provenance,
                    cluster_index=cluster_index.get(name),
                ))
        manifest = DatasetManifest(seed=self.cfg.seed, entries=entries)
        manifest_save(manifest, self._p("manifest.json"))
        return [self._p("manifest.json"), labels_dir]

    def _load_pairs(self, entries) -> list[tuple[ImageBuffer, MaskBuffer]]:
        return [(load_image(e.image_path), load_mask(e.mask_path)) for e in entries]

    def _stage_train(self) -> list[str]:
        cfg = self.cfg
        manifest = manifest_load(self._p("manifest.json"))
        train_pairs = self._load_pairs(manifest.subset("train"))
        val_pairs = self._load_pairs(manifest.subset("val"))
        net = build_unet(UNetConfig(input_size=cfg.window), seed=cfg.seed)
        run, _ = train_unet(net, train_pairs, val_pairs, epochs=cfg.epochs,
                            batch_size=cfg.batch_size, seed=cfg.seed,
                            lr=cfg.learning_rate, threshold=cfg.threshold)
        save_params(net, self._p("unet.cfosnn"))
        with open(self._p("train_run.json"), "w", encoding="utf-8") as f:
            json.dump({"epochs": run.epochs, "batch_size": run.batch_size,
                       "seed": run.seed, "threshold": run.threshold,
                       "train_loss": run.train_loss, "val_loss": run.val_loss}, f, indent=2)
        return [self._p("unet.cfosnn"), self._p("train_run.json")]

    def _stage_predict(self) -> list[str]:
        cfg = self.cfg
        net = load_params(self._p("unet.cfosnn"))
        outputs = []
        manifest = manifest_load(self._p("manifest.json"))
        pred_dir = self._p("pred")
        os.makedirs(pred_dir, exist_ok=True)
        for e in manifest.subset("test"):
            name = Path(e.image_path).stem
            _, mask = predict_tile(net, load_image(e.image_path), cfg.threshold)
            save_mask(mask, os.path.join(pred_dir, f"{name}.png"))
        outputs.append(pred_dir)
        if cfg.source_image:
            from .tiling import load_grid
            grid = load_grid(self._p("grid.json"))
            full = predict_full(net, load_image(cfg.source_image), grid, cfg.threshold)
            save_mask(full, self._p("full_mask.png"))
            outputs.append(self._p("full_mask.png"))
        return outputs

    def _stage_evaluate(self) -> list[str]:
        manifest = manifest_load(self._p("manifest.json"))
        preds, truths = {}, {}
        for e in manifest.subset("test"):
            name = Path(e.image_path).stem
            preds[name] = load_mask(self._p("pred", f"{name}.png"))
            truths[name] = load_mask(e.mask_path)
        report = score_dataset(preds, truths)
        with open(self._p("report.json"), "w", encoding="utf-8") as f:
            json.dump({"per_image": report.per_image, "miou": report.miou,
                       "f1": report.f1, "variant": report.variant}, f, indent=2, sort_keys=True)
        write_report_csv(report, self._p("report.csv"))
        return [self._p("report.json"), self._p("report.csv")]


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    return Pipeline(config).run()


# -- experiment harness ----------------------------------------------------

def _evaluate_model(net, test_entries, threshold: float) -> ScoreReport:
    preds, truths = {}, {}
    for e in test_entries:
        name = Path(e.image_path).stem
        _, mask = predict_tile(net, load_image(e.image_path), threshold)
        preds[name] = mask
        truths[name] = load_mask(e.mask_path)
    return score_dataset(preds, truths)


def _train_fresh(config: PipelineConfig, entries, val_entries=()) -> object:
    net = build_unet(UNetConfig(input_size=config.window), seed=config.seed)
    if entries:
        pipeline = Pipeline(config)
        pairs = pipeline._load_pairs(entries)
        val_pairs = pipeline._load_pairs(val_entries) if val_entries else ()
        train_unet(net, pairs, val_pairs, epochs=config.epochs,
                   batch_size=config.batch_size, seed=config.seed,
                   lr=config.learning_rate, threshold=config.threshold)
    return net


def experiment_size_sweep(config: PipelineConfig, sizes: list[int]) -> list[dict]:
    """Training-set size versus score, on a fixed seeded test split.

    Size 0 evaluates the untrained (randomly initialized) model.
    """
    pipe = Pipeline(config)
    result = pipe.run()
    manifest = result.manifest
    train_entries = sorted(manifest.subset("train"), key=lambda e: e.image_path)
    test_entries = manifest.subset("test")
    pool = len(train_entries)
    rows = []
    for size in sizes:
        if size > pool:
            raise ValueError(f"sweep size {size} exceeds labeled pool {pool}")
        rng = np.random.default_rng([config.seed, size])
        subset = ([train_entries[i] for i in sorted(rng.choice(pool, size=size, replace=False))]
                  if size else [])
        net = _train_fresh(config, subset)
        report = _evaluate_model(net, test_entries, config.threshold)
        rows.append({"size": size, "miou": report.miou, "f1": report.f1})
    path = os.path.join(config.work_dir, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["size", "miou", "f1"])
        w.writeheader()
        w.writerows(rows)
    return rows


def _proposal_entries(pipe: Pipeline, names: list[str], out_dir: str) -> list[ManifestEntry]:
    """Proposal-derived labels for the named tiles, written under out_dir."""
    cfg = pipe.cfg
    pdir = pipe.proposals_dir
    if pdir is None:
        raise FileNotFoundError("corpus has no proposals directory")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for name in names:
        ppath = os.path.join(pdir, f"{name}.json")
        if not os.path.exists(ppath):
            raise FileNotFoundError(f"no proposals for tile {name}")
        props = filter_proposals(load_proposals(ppath), cfg.proposal_filter())
        tile_path = os.path.join(pipe.tiles_dir, f"{name}.png")
        tile = load_image(tile_path)
        mask = merge_proposals(props, tile.width, tile.height)
        mask_path = os.path.join(out_dir, f"{name}.png")
        save_mask(mask, mask_path)
        entries.append(ManifestEntry(tile_path, mask_path, "train", "proposal"))
    return entries


def experiment_methods(config: PipelineConfig) -> list[dict]:
    """Score table over curation methods, all sharing one test split and seed.

    Arms with missing inputs (no proposal files, no review state) are marked
    skipped rather than given fabricated numbers.
    """
    pipe = Pipeline(config)
    result = pipe.run()
    manifest = result.manifest
    model = pipe._cluster_model()
    test_entries = manifest.subset("test")
    reserved = {Path(e.image_path).stem
                for e in manifest.subset("test") + manifest.subset("val")}
    pool = pipe._pool_manifest()
    pool_names = sorted(n for n in (Path(e.image_path).stem for e in pool.entries)
                        if n not in reserved)
    n_train = len(manifest.subset("train"))
    rng = np.random.default_rng([config.seed, 7])

    rows = []

    def add_row(method, entries=None, status="ok"):
        if status != "ok":
            rows.append({"method": method, "miou": None, "f1": None,
                         "status": status, "train_size": 0})
            return
        net = _train_fresh(config, entries or [])
        report = _evaluate_model(net, test_entries, config.threshold)
        rows.append({"method": method, "miou": report.miou, "f1": report.f1,
                     "status": "ok", "train_size": len(entries or [])})

    # untrained baseline
    add_row("untrained", [])

    # random manual sample (needs ground-truth masks for arbitrary tiles)
    random_names = [pool_names[i] for i in
                    sorted(rng.choice(len(pool_names), size=min(n_train, len(pool_names)),
                                      replace=False))]
    manual_ok = all(os.path.exists(os.path.join(pipe.truth_masks_dir, f"{n}.png"))
                    for n in random_names)
    if manual_ok:
        random_entries = [
            ManifestEntry(os.path.join(pipe.tiles_dir, f"{n}.png"),
                          os.path.join(pipe.truth_masks_dir, f"{n}.png"),
                          "train", "manual")
            for n in random_names
        ]
        add_row("random_sample", random_entries)
    else:
        add_row("random_sample", status="skipped: ground-truth masks unavailable")

    # cluster-stratified manual selection (the pipeline's own training set)
    add_row("cluster_stratified", manifest.subset("train"))

    have_proposals = pipe.proposals_dir is not None
    if not have_proposals:
        add_row("proposal", status="skipped: no proposal files")
        add_row("proposal_cluster", status="skipped: no proposal files")
        add_row("proposal_cluster_iteration", status="skipped: no proposal files")
        _write_methods_csv(config, rows)
        return rows

    prop_random = _proposal_entries(pipe, random_names,
                                    os.path.join(config.work_dir, "labels_proposal_random"))
    add_row("proposal", prop_random)

    strat_names = sorted(Path(e.image_path).stem for e in manifest.subset("train"))
    prop_strat = _proposal_entries(pipe, strat_names,
                                   os.path.join(config.work_dir, "labels_proposal_strat"))
    add_row("proposal_cluster", prop_strat)

    accepted = accepted_review_entries(config)
    if accepted is None:
        add_row("proposal_cluster_iteration", status="skipped: no review state")
    else:
        add_row("proposal_cluster_iteration", prop_strat + accepted)
    _write_methods_csv(config, rows)
    return rows


def _write_methods_csv(config: PipelineConfig, rows: list[dict]) -> None:
    path = os.path.join(config.work_dir, "methods.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["method", "miou", "f1", "status", "train_size"])
        w.writeheader()
        w.writerows(rows)


# -- iteration loop ---------------------------------------------------------

@dataclass
class IterationState:
    round: int
    model_paths: list[str]
    manifest_path: str

    @classmethod
    def load(cls, work_dir: str) -> "IterationState | None":
        path = os.path.join(work_dir, "iteration.json")
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        return cls(**doc)

    def save(self, work_dir: str) -> None:
        with open(os.path.join(work_dir, "iteration.json"), "w", encoding="utf-8") as f:
            json.dump({"round": self.round, "model_paths": self.model_paths,
                       "manifest_path": self.manifest_path}, f, indent=2)


def init_iteration(config: PipelineConfig) -> IterationState:
    """Round 0: the model and manifest produced by the base pipeline run."""
    existing = IterationState.load(config.work_dir)
    if existing is not None:
        return existing
    Pipeline(config).run()
    state = IterationState(
        round=0,
        model_paths=[os.path.join(config.work_dir, "unet.cfosnn")],
        manifest_path=os.path.join(config.work_dir, "manifest.json"),
    )
    state.save(config.work_dir)
    return state


def enqueue_review(config: PipelineConfig, limit: int | None = None) -> list[dict]:
    """Predict masks for tiles outside the manifest and queue them for review."""
    state = init_iteration(config)
    pipe = Pipeline(config)
    manifest = manifest_load(state.manifest_path)
    used = {Path(e.image_path).stem for e in manifest.entries}
    review_dir = os.path.join(config.work_dir, "review")
    os.makedirs(os.path.join(review_dir, "masks"), exist_ok=True)
    queue_path = os.path.join(review_dir, "queue.json")
    queue = []
    if os.path.exists(queue_path):
        with open(queue_path, "r", encoding="utf-8") as f:
            queue = json.load(f)
    queued = {item["id"] for item in queue}
    net = load_params(state.model_paths[-1])
    candidates = [n for n in sorted(_load_tiles_names(pipe.tiles_dir))
                  if n not in used and n not in queued]
    if limit is not None:
        candidates = candidates[:limit]
    for name in candidates:
        tile_path = os.path.join(pipe.tiles_dir, f"{name}.png")
        _, mask = predict_tile(net, load_image(tile_path), config.threshold)
        mask_path = os.path.join(review_dir, "masks", f"{name}.png")
        save_mask(mask, mask_path)
        queue.append({"id": name, "image": tile_path, "mask": mask_path,
                      "round": state.round})
    with open(queue_path, "w", encoding="utf-8") as f:
        json.dump(queue, f, indent=2)
    return queue


def _load_tiles_names(dir_path: str) -> list[str]:
    return [p.stem for p in Path(dir_path).glob("*.png")]


def accepted_review_entries(config: PipelineConfig) -> list[ManifestEntry] | None:
    """Accepted (tile, predicted-mask) pairs from the review log; None if no review ran."""
    review_dir = os.path.join(config.work_dir, "review")
    queue_path = os.path.join(review_dir, "queue.json")
    log_path = os.path.join(review_dir, "decisions.log")
    if not os.path.exists(queue_path):
        return None
    with open(queue_path, "r", encoding="utf-8") as f:
        queue = {item["id"]: item for item in json.load(f)}
    decisions: dict[str, str] = {}
    if os.path.exists(log_path):
        with open(log_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                decisions.setdefault(rec["id"], rec["decision"])
    entries = []
    for item_id, decision in decisions.items():
        if decision == "accept" and item_id in queue:
            item = queue[item_id]
            entries.append(ManifestEntry(item["image"], item["mask"], "train", "iteration"))
    return entries


def advance_round(config: PipelineConfig) -> IterationState:
    """Fold accepted reviews into the manifest and train the next round's model.

    Each round trains from scratch on base plus everything accepted so far,
    so the training set can only grow between rounds.
    """
    state = init_iteration(config)
    accepted = accepted_review_entries(config) or []
    manifest = manifest_load(state.manifest_path)
    existing = {e.image_path for e in manifest.entries}
    for e in accepted:
        if e.image_path not in existing:
            manifest.entries.append(e)
            existing.add(e.image_path)
    new_round = state.round + 1
    manifest_path = os.path.join(config.work_dir, f"manifest_round{new_round}.json")
    manifest_save(manifest, manifest_path)
    net = build_unet(UNetConfig(input_size=config.window), seed=config.seed)
    pipe = Pipeline(config)
    train_unet(net, pipe._load_pairs(manifest.subset("train")),
               pipe._load_pairs(manifest.subset("val")), epochs=config.epochs,
               batch_size=config.batch_size, seed=config.seed,
               lr=config.learning_rate, threshold=config.threshold)
    model_path = os.path.join(config.work_dir, f"unet_round{new_round}.cfosnn")
    save_params(net, model_path)
    state = IterationState(round=new_round,
                           model_paths=state.model_paths + [model_path],
                           manifest_path=manifest_path)
    state.save(config.work_dir)
    return state
