"""Calibration run for the synthetic directional experiment (not shipped)."""
import json
import time

import numpy as np

from inflow.cli import RunConfig, build_pipeline, prepare_windows, resolve_mode
from inflow.data import split_windows
from inflow.evaluation import evaluate
from inflow.training import TrainConfig, train


def experiment_config(variant):
    return RunConfig.from_dict({
        "dataset": {"preset": "synthetic-1", "seed": 0},
        "model": {"variant": variant, "num_blocks": 2, "flow_hidden": 16,
                  "backbone": "mlp", "lookback": 48, "horizon": 48,
                  "hidden_width": 128, "depth": 2},
        "train": {"batch_size": 1024, "max_epochs": 10, "patience": 3},
        "seeds": [0, 1, 2, 3],
    })


def main():
    results = {}
    cfg0 = experiment_config("inflow")
    ds, windows, stats = prepare_windows(cfg0)
    groups = split_windows(windows)
    for variant in ["inflow", "revin", "none", "realnvp", "realnvp_c"]:
        cfg = experiment_config(variant)
        per_seed = []
        for seed in cfg.seeds:
            t0 = time.time()
            pipe = build_pipeline(cfg.model, ds.num_variates, seed)
            tc = TrainConfig(batch_size=1024, max_epochs=10, patience=3, seed=seed,
                             mode=resolve_mode(variant, "auto"))
            pipe, report = train(pipe, windows, tc, zscore_stats=stats)
            test = evaluate(pipe, groups["test"], stats)
            per_seed.append((seed, test.mse, test.mae))
            print(f"{variant} seed {seed}: mse={test.mse:.1f} mae={test.mae:.2f} "
                  f"epochs={len(report.loss_history)} best={report.best_epoch} "
                  f"({time.time()-t0:.0f}s)", flush=True)
        results[variant] = per_seed
    print(json.dumps(results, indent=1))
    inflow_mse = {s: m for s, m, _ in results["inflow"]}
    for other in ("none", "revin"):
        wins = sum(inflow_mse[s] <= m for s, m, _ in results[other])
        print(f"inflow <= {other}: {wins}/4 seeds")
    rv = np.mean([m for _, m, _ in results["realnvp"]])
    rvc = np.mean([m for _, m, _ in results["realnvp_c"]])
    print(f"realnvp mean {rv:.1f} >= realnvp_c mean {rvc:.1f}: {rv >= rvc}")


if __name__ == "__main__":
    main()
