#!/usr/bin/env python3
"""Patrol-suite experiment: train both loss modes, compare with baselines,
and probe how predictions respond to counterfactual machine paths.

Writes the suite, checkpoints, an evaluation report, and a sensitivity
summary under --out.  This is the full-size version of what the acceptance
tests run at reduced scale.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from trajresponse.configs import ModelConfig, TrainConfig
from trajresponse.evalkit import (
    away_fraction,
    ctrv_predictor,
    render_table,
    response_predictor,
    rollout_divergence,
    run_experiment,
    save_report,
    whatif_candidates,
)
from trajresponse.formats import save_model
from trajresponse.neural.losses import LossConfig
from trajresponse.responsernn import simulate_whatif, train
from trajresponse.synthgen import ForceParams, make_suite
from trajresponse.trajdata import invert_standardizer, load_dataset


def interaction_windows(windows, stats, n_wanted, reach_m=2.2):
    """Windows where the machine starts close enough to reach the crowd."""
    picked = []
    for w in windows:
        start = invert_standardizer(w.robot_xy[0, w.n_obs - 1], stats)
        seen = w.presence[:, w.n_obs - 1]
        if not np.any(seen):
            continue
        centroid = invert_standardizer(
            w.positions[seen, w.n_obs - 1], stats).mean(axis=0)
        if np.linalg.norm(centroid - start) <= reach_m:
            picked.append(w)
        if len(picked) == n_wanted:
            break
    return picked


def sensitivity_probe(windows, params, config, stats):
    """Paired divergence and away-projection statistics over windows."""
    paired_wins = 0
    n_away = n_close = 0
    for w in windows:
        cands = whatif_candidates(w, stats)
        names = ["near", "stationary", "far_a", "far_b"]
        rollouts = dict(zip(names, simulate_whatif(
            w, params, config, [cands[k] for k in names])))
        d_near = rollout_divergence(rollouts["near"], rollouts["stationary"],
                                    stats)
        d_far = rollout_divergence(rollouts["far_a"], rollouts["far_b"],
                                   stats)
        if d_near > d_far:
            paired_wins += 1
        a, c = away_fraction(rollouts["near"], rollouts["stationary"], stats)
        n_away += a
        n_close += c
    return {
        "n_windows": len(windows),
        "paired_wins": paired_wins,
        "paired_fraction": paired_wins / max(len(windows), 1),
        "n_close_agent_steps": n_close,
        "away_fraction": n_away / max(n_close, 1),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--n-recordings", type=int, default=80)
    ap.add_argument("--n-frames", type=int, default=320)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=0.002)
    ap.add_argument("--lr-decay", type=float, default=0.985)
    ap.add_argument("--teacher-forcing", action="store_true",
                    help="train on ground-truth inputs instead of the "
                         "model's own rollouts (worse at long horizons)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--robot-strength", type=float, default=6.0)
    ap.add_argument("--robot-range", type=float, default=2.0)
    ap.add_argument("--t-obs", type=int, default=12)
    ap.add_argument("--t-pred", type=int, default=12)
    ap.add_argument("--n-probe-windows", type=int, default=50)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fp = ForceParams(noise_std=args.noise, robot_strength=args.robot_strength,
                     robot_range=args.robot_range)
    root = make_suite(out / "data", "approach", n_recordings=args.n_recordings,
                      n_frames=args.n_frames, seed=args.seed, fp=fp)
    ds = load_dataset(root, n_obs=args.t_obs, n_pred=args.t_pred,
                      seed=args.seed)
    print(f"windows: train={len(ds.train_windows)} val={len(ds.val_windows)} "
          f"test={len(ds.test_windows)}", flush=True)

    tc = TrainConfig(epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay,
                     seed=args.seed, teacher_forcing=args.teacher_forcing)
    models = {}
    configs = {}
    for mode, tag in (("velocity", "rrnn_vel"), ("position", "rrnn_pos")):
        config = ModelConfig(type_labels=ds.labels, n_obs=args.t_obs,
                             n_pred=args.t_pred, dt=ds.dt,
                             loss=LossConfig(mode=mode), stats=ds.stats)
        t0 = time.time()
        result = train(ds.train_windows, ds.val_windows, config, tc,
                       on_epoch=lambda e, tag=tag: print(
                           f"[{tag}] epoch {e['epoch']:3d} "
                           f"train {e['train_loss']:.4f} "
                           f"val {e['val_loss']:.4f}", flush=True))
        print(f"[{tag}] trained in {time.time() - t0:.0f}s "
              f"(best epoch {result.best_epoch})", flush=True)
        save_model(out / f"{tag}.ckpt", result.best_params, config)
        models[tag] = response_predictor(result.best_params, config)
        configs[tag] = (result.best_params, config)

    models["ctrv"] = ctrv_predictor(ds.stats)
    report = run_experiment("approach", ds.test_windows, models, ds.stats,
                            meta={"n_train": len(ds.train_windows),
                                  "epochs": args.epochs,
                                  "noise": args.noise,
                                  "robot_strength": args.robot_strength})
    print(render_table(report), flush=True)
    save_report(report, out)

    probe_set = interaction_windows(ds.test_windows, ds.stats,
                                    args.n_probe_windows)
    params, config = configs["rrnn_vel"]
    sens = sensitivity_probe(probe_set, params, config, ds.stats)
    print(json.dumps(sens, indent=2), flush=True)
    (out / "sensitivity.json").write_text(json.dumps(sens, indent=2,
                                                     sort_keys=True) + "\n")

    ok = (report["models"]["rrnn_vel"]["ade_m"]
          < report["models"]["rrnn_pos"]["ade_m"]
          and report["models"]["rrnn_vel"]["ade_m"]
          < report["models"]["ctrv"]["ade_m"])
    print(f"ordering (vel < pos and vel < ctrv): {ok}")
    print(f"paired_fraction={sens['paired_fraction']:.2f} "
          f"away_fraction={sens['away_fraction']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
