"""Calibration B: z-scored, batch 204, long training (not shipped)."""
import sys
import time

import numpy as np

from inflow.cli import RunConfig, build_pipeline, prepare_windows, resolve_mode
from inflow.data import split_windows
from inflow.evaluation import evaluate
from inflow.training import TrainConfig, train

zscore = sys.argv[1] == "z" if len(sys.argv) > 1 else True
batch = int(sys.argv[2]) if len(sys.argv) > 2 else 204
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 30
seeds = [int(s) for s in sys.argv[4:]] or [0, 1]

cfg = RunConfig.from_dict({
    "dataset": {"preset": "synthetic-1", "seed": 0, "zscore": zscore},
    "model": {"variant": "inflow", "num_blocks": 2, "flow_hidden": 16,
              "backbone": "mlp", "lookback": 48, "horizon": 48,
              "hidden_width": 128, "depth": 2},
    "train": {"batch_size": batch, "max_epochs": epochs, "patience": 5},
    "seeds": seeds,
})
ds, windows, stats = prepare_windows(cfg)
groups = split_windows(windows)
print(f"zscore={zscore} batch={batch} epochs={epochs} seeds={seeds}", flush=True)
for variant in ("inflow", "revin", "none", "realnvp", "realnvp_c"):
    for seed in seeds:
        t0 = time.time()
        cfg.model.variant = variant
        pipe = build_pipeline(cfg.model, ds.num_variates, seed)
        tc = TrainConfig(batch_size=batch, max_epochs=epochs, patience=5, seed=seed,
                         mode=resolve_mode(variant, "auto"))
        pipe, report = train(pipe, windows, tc, zscore_stats=stats)
        test = evaluate(pipe, groups["test"], stats)
        print(f"{variant} seed {seed}: mse={test.mse:.1f} "
              f"epochs={len(report.loss_history)} best={report.best_epoch} "
              f"val_best={report.best_val_loss:.1f} ({time.time()-t0:.0f}s)",
              flush=True)
