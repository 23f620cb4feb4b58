"""One-off calibration probe for the heavy acceptance criteria (not shipped)."""
import json
import shutil
import time
from pathlib import Path

import numpy as np

from cfosseg.pipeline import PipelineConfig, Pipeline, run_pipeline, experiment_size_sweep, _evaluate_model
from cfosseg.synth import write_corpus, generate_tiles
from cfosseg.unet import UNetConfig, build_unet, train_unet

root = Path("/tmp/calib")
if root.exists():
    shutil.rmtree(root)
root.mkdir()

# 1. overfit probe
t0 = time.time()
rng = np.random.default_rng(0)
tiles = generate_tiles(4, seed=123)
pairs = [(t.image, t.mask) for t in tiles]
net = build_unet(UNetConfig(), seed=0)
run, _ = train_unet(net, pairs, epochs=500, batch_size=4, seed=0, lr=2e-3, stop_below=0.01)
print(f"OVERFIT: steps={run.epochs} final={run.train_loss[-1]:.5f} "
      f"time={time.time()-t0:.0f}s", flush=True)

# 2. end-to-end at acceptance scale
t0 = time.time()
corpus = root / "corpus"
write_corpus(corpus, n_tiles=170, seed=0, source_size=(1024, 768))
print(f"corpus gen: {time.time()-t0:.0f}s", flush=True)

cfg = PipelineConfig(
    work_dir=str(root / "work"),
    corpus_dir=str(corpus),
    source_image=str(corpus / "source.png"),
    source_mask=str(corpus / "source_mask.png"),
    train_count=118, val_count=16, test_count=16,
    epochs=15, batch_size=8, seed=0,
)
t0 = time.time()
result = run_pipeline(cfg)
print(f"E2E: trained miou={result.report.miou:.4f} f1={result.report.f1:.4f} "
      f"time={time.time()-t0:.0f}s", flush=True)

untrained = build_unet(UNetConfig(), seed=0)
rep0 = _evaluate_model(untrained, result.manifest.subset("test"), 0.5)
print(f"E2E: untrained miou={rep0.miou:.4f}", flush=True)

# 3. size sweep
t0 = time.time()
rows = experiment_size_sweep(cfg, [0, 5, 30, 80])
print(f"SWEEP: {json.dumps(rows)} time={time.time()-t0:.0f}s", flush=True)
mious = [r["miou"] for r in rows]
print(f"SWEEP monotone: {mious[3] > mious[2] > mious[1] > mious[0]}", flush=True)
