"""Command-line entry point.

Thread pinning happens before numpy is imported anywhere in the process so
that runs are reproducible regardless of BLAS build; heavy modules load
lazily inside each subcommand.

Exit codes: 0 success, 1 runtime failure (including a failed gradient
check), 2 usage error, 3 invalid configuration (reported with the offending
field path).
"""

from __future__ import annotations

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import hashlib
import json
import logging
import re
import sys
import time
from pathlib import Path

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "TRAJRESPONSE_DATA_ROOT"
T_OBS_CHOICES = (12, 20, 32)
T_PRED_CHOICES = (8, 12, 20)
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


class ConfigError(Exception):
    """Invalid configuration; message starts with the field path."""


# ---------------------------------------------------------------------------
# config file handling
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {
    "n_obs": int, "n_pred": int, "dt": (int, float),
    "edge_hidden": int, "node_hidden": int, "embed_dim": int,
    "attn_dim": int, "attention_scale": str,
    "loss_mode": str, "alpha_stationary": (int, float),
    "speed_threshold_mps": (int, float),
}
_TRAIN_FIELDS = {
    "lr": (int, float), "epochs": int, "batch_size": int,
    "grad_clip": (int, float), "lr_decay": (int, float), "seed": int,
    "teacher_forcing": bool,
}


def _check_section(cfg: dict, section: str, fields: dict) -> dict:
    sub = cfg.get(section, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"{section}: expected an object")
    for key, value in sub.items():
        if key not in fields:
            raise ConfigError(f"{section}.{key}: unknown field")
        want = fields[key]
        if isinstance(value, bool) and want is not bool:
            raise ConfigError(f"{section}.{key}: expected "
                              f"{getattr(want, '__name__', 'number')}, "
                              f"got bool")
        if not isinstance(value, want):
            name = want.__name__ if isinstance(want, type) else "number"
            raise ConfigError(f"{section}.{key}: expected {name}, "
                              f"got {type(value).__name__}")
    return sub


def load_config_file(path: str | None) -> dict:
    """Parse and validate an optional JSON config file."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object")
    for section in cfg:
        if section not in ("model", "train"):
            raise ConfigError(f"{section}: unknown section")
    _check_section(cfg, "model", _MODEL_FIELDS)
    _check_section(cfg, "train", _TRAIN_FIELDS)
    if "loss_mode" in cfg.get("model", {}) and \
            cfg["model"]["loss_mode"] not in ("position", "velocity"):
        raise ConfigError("model.loss_mode: must be 'position' or 'velocity'")
    return cfg


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(
            f"data: pass --data or set {DATA_ROOT_ENV}")
    p = Path(root)
    if not p.is_dir():
        raise ConfigError(f"data: not a directory: {p}")
    return p


def _seed0(args) -> int:
    return 0 if args.seed is None else args.seed


def _git_blob_sha1(path: Path) -> str:
    """Content hash of one file, identical to ``git hash-object``."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _inputs_digest(paths: list[Path]) -> tuple[str, int]:
    """Order-independent digest over the named input files."""
    lines = sorted(f"{_git_blob_sha1(p)} {Path(p).name}" for p in paths)
    digest = hashlib.sha1("\n".join(lines).encode()).hexdigest()
    return digest, len(paths)


def _dataset_files(root: Path) -> list[Path]:
    from .trajdata import list_recordings

    files = []
    for csv_path in list_recordings(root):
        files.append(csv_path)
        meta = csv_path.with_suffix("").with_suffix(".meta.json")
        if meta.exists():
            files.append(meta)
    for name in ("labels.json", "folds.json"):
        if (root / name).exists():
            files.append(root / name)
    return files


def _write_run_manifest(out_dir: Path, args, command: str, *,
                        seed: int | None = None,
                        resolved: dict | None = None,
                        inputs: list[Path] | None = None,
                        extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    deterministic = bool(getattr(args, "deterministic", False))
    input_hash, n_inputs = _inputs_digest(inputs or [])
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": getattr(args, "config", None),
        "seed": _seed0(args) if seed is None else seed,
        "out_dir": str(out_dir),
        "precision": "float64",
        "deterministic": deterministic,
        "created_unix": None if deterministic else time.time(),
        "resolved_config": resolved or {},
        "input_hash": input_hash,
        "n_inputs": n_inputs,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _loss_mode(flag: str) -> str:
    return {"pos": "position", "vel": "velocity"}[flag]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthgen import SUITES, make_suite

    out = Path(args.out)
    suites = list(SUITES) if args.suite == "all" else [args.suite]
    for suite in suites:
        root = out / suite if len(suites) > 1 else out
        make_suite(root, suite, n_recordings=args.n_recordings,
                   n_frames=args.n_frames, seed=_seed0(args))
        print(f"wrote suite '{suite}' -> {root}")
    _write_run_manifest(out, args, "synth", resolved={
        "suite": args.suite, "n_recordings": args.n_recordings,
        "n_frames": args.n_frames})
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .trajdata import load_dataset

    root = _data_root(args)
    t_obs = 12 if args.t_obs is None else args.t_obs
    t_pred = 12 if args.t_pred is None else args.t_pred
    ds = load_dataset(root, n_obs=t_obs, n_pred=t_pred,
                      stride=args.stride, test_fold=args.test_fold,
                      seed=_seed0(args))
    summary = {
        "dataset": ds.name,
        "labels": ds.labels,
        "n_train": len(ds.train_windows),
        "n_val": len(ds.val_windows),
        "n_test": len(ds.test_windows),
        "n_skipped": ds.n_skipped,
        "stats": ds.stats.to_dict(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dataset_summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
        ds.folds.save(out / "folds.json")
        _write_run_manifest(
            out, args, "prepare",
            resolved={"n_obs": t_obs, "n_pred": t_pred,
                      "stride": args.stride, "test_fold": args.test_fold},
            inputs=_dataset_files(root))
    return EXIT_OK


def cmd_train(args) -> int:
    from .baselines import RedConfig, red_train
    from .configs import ModelConfig, TrainConfig
    from .formats import save_model
    from .neural.losses import LossConfig
    from .responsernn import train
    from .trajdata import load_dataset

    cfg = load_config_file(args.config)
    root = _data_root(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # Precedence: explicit flags override config-file values, which override
    # built-in defaults.
    mc = dict(cfg.get("model", {}))
    t_obs = args.t_obs if args.t_obs is not None else mc.get("n_obs", 12)
    t_pred = args.t_pred if args.t_pred is not None else mc.get("n_pred", 12)
    mc.pop("n_obs", None)
    mc.pop("n_pred", None)
    mc.pop("dt", None)  # always taken from the dataset
    if args.loss is not None:
        loss_mode = _loss_mode(args.loss)
        mc.pop("loss_mode", None)
    else:
        loss_mode = mc.pop("loss_mode", "velocity")
    loss = LossConfig(
        mode=loss_mode,
        alpha_stationary=mc.pop("alpha_stationary", 0.2),
        speed_threshold_mps=mc.pop("speed_threshold_mps", 0.1))
    tc_kwargs = dict(cfg.get("train", {}))
    if args.seed is not None:
        tc_kwargs["seed"] = args.seed
    else:
        tc_kwargs.setdefault("seed", 0)
    if args.epochs is not None:
        tc_kwargs["epochs"] = args.epochs
    tc = TrainConfig(**tc_kwargs)

    ds = load_dataset(root, n_obs=t_obs, n_pred=t_pred,
                      test_fold=args.test_fold, seed=tc.seed)
    if not ds.train_windows:
        raise RuntimeError("dataset produced no training windows")

    t0 = time.perf_counter()
    if args.model == "red":
        red_cfg = RedConfig(n_obs=t_obs, n_pred=t_pred, dt=ds.dt,
                            alpha_stationary=loss.alpha_stationary,
                            speed_threshold_mps=loss.speed_threshold_mps,
                            stats=ds.stats)
        final, best, best_epoch, history = red_train(
            ds.train_windows, ds.val_windows, red_cfg, tc)
        save_model(out / "best.ckpt", best, red_cfg,
                   extra={"best_epoch": best_epoch})
        save_model(out / "final.ckpt", final, red_cfg)
        model_manifest = red_cfg.to_manifest()
    else:
        config = ModelConfig(type_labels=ds.labels, n_obs=t_obs,
                             n_pred=t_pred, dt=ds.dt, loss=loss,
                             stats=ds.stats, **mc)

        def log_epoch(entry: dict) -> None:
            val = entry["val_loss"]
            val_txt = "n/a" if val is None else f"{val:.4f}"
            print(f"epoch {entry['epoch']:3d}  lr {entry['lr']:.5f}  "
                  f"train {entry['train_loss']:.4f}  val {val_txt}",
                  flush=True)

        result = train(ds.train_windows, ds.val_windows, config, tc,
                       on_epoch=log_epoch)
        save_model(out / "best.ckpt", result.best_params, config,
                   extra={"best_epoch": result.best_epoch})
        save_model(out / "final.ckpt", result.params, config)
        history = result.history
        model_manifest = config.to_manifest()
    elapsed = time.perf_counter() - t0

    (out / "history.json").write_text(
        json.dumps(history, indent=2, sort_keys=True) + "\n")
    inputs = _dataset_files(root)
    if args.config:
        inputs.append(Path(args.config))
    _write_run_manifest(
        out, args, "train", seed=tc.seed,
        resolved={"model": model_manifest, "train": tc.to_dict()},
        inputs=inputs,
        extra={
            "model": args.model,
            "n_train": len(ds.train_windows), "n_val": len(ds.val_windows),
            "train_seconds": None if args.deterministic else elapsed,
        })
    print(f"checkpoints written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .baselines import RedConfig
    from .configs import ModelConfig
    from .evalkit import (
        ctrv_predictor,
        red_predictor,
        response_predictor,
        run_experiment,
        render_table,
        save_report,
    )
    from .formats import load_model
    from .trajdata import load_dataset

    root = _data_root(args)
    models = {}
    n_obs = n_pred = None
    stats = None
    for spec_item in args.ckpt or []:
        name, _, path = spec_item.rpartition("=")
        if not name:
            name, path = Path(path).stem, path
        params, config, manifest = load_model(path)
        if isinstance(config, ModelConfig):
            models[name] = response_predictor(params, config)
        else:
            models[name] = red_predictor(params, config)
        if n_obs is None:
            n_obs, n_pred, stats = config.n_obs, config.n_pred, config.stats
        elif (config.n_obs, config.n_pred) != (n_obs, n_pred):
            raise ConfigError("ckpt: checkpoints disagree on horizons")
    if n_obs is None:
        n_obs = 12 if args.t_obs is None else args.t_obs
        n_pred = 12 if args.t_pred is None else args.t_pred

    ds = load_dataset(root, n_obs=n_obs, n_pred=n_pred,
                      test_fold=args.test_fold, seed=_seed0(args))
    if stats is None:
        stats = ds.stats
    if args.with_ctrv or not models:
        models["ctrv"] = ctrv_predictor(ds.stats)

    split = {"train": ds.train_windows, "val": ds.val_windows,
             "test": ds.test_windows}[args.split]
    report = run_experiment(
        args.name, split, models, ds.stats,
        meta={"dataset": ds.name, "split": args.split,
              "n_obs": n_obs, "n_pred": n_pred, "test_fold": args.test_fold},
        deterministic=args.deterministic, workers=args.workers)
    print(render_table(report))
    if args.out:
        out = Path(args.out)
        path = save_report(report, out)
        inputs = _dataset_files(root)
        inputs.extend(Path(item.rpartition("=")[2]) for item in args.ckpt or [])
        _write_run_manifest(
            out, args, "eval",
            resolved={"models": sorted(models), "split": args.split,
                      "n_obs": n_obs, "n_pred": n_pred,
                      "test_fold": args.test_fold, "workers": args.workers},
            inputs=inputs)
        print(f"report written to {path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .configs import ModelConfig
    from .formats import load_model, rollout_to_export, scenario_to_window
    from .responsernn import build_graph, build_plan, forward_window

    params, config, _ = load_model(args.ckpt)
    if not isinstance(config, ModelConfig):
        raise ConfigError("ckpt: predict requires a response-model checkpoint")
    scenario = json.loads(Path(args.scenario).read_text())
    window = scenario_to_window(scenario, config.stats, config.type_labels)
    graph = build_graph(window)
    out = forward_window(window, graph, params, config, mode="infer",
                         plan=build_plan(window, graph))
    export = rollout_to_export(out.rollout, config.stats, config.type_labels)
    text = json.dumps(export, indent=2, sort_keys=True) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "rollout.json").write_text(text)
        _write_run_manifest(
            out_dir, args, "predict",
            resolved={"ckpt": args.ckpt, "scenario": args.scenario},
            inputs=[Path(args.ckpt), Path(args.scenario)])
        print(f"rollout written to {out_dir / 'rollout.json'}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .configs import ModelConfig
    from .formats import (
        load_candidate_paths,
        load_model,
        rollout_to_export,
        scenario_to_window,
    )
    from .responsernn import simulate_whatif
    from .trajdata import apply_standardizer

    params, config, _ = load_model(args.ckpt)
    if not isinstance(config, ModelConfig):
        raise ConfigError("ckpt: simulate requires a response-model checkpoint")
    scenario = json.loads(Path(args.scenario).read_text())
    window = scenario_to_window(scenario, config.stats, config.type_labels)
    candidates = load_candidate_paths(args.candidates, config.n_pred)
    paths = [apply_standardizer(arr, config.stats) for _, arr in candidates]
    rollouts = simulate_whatif(window, params, config, paths,
                               sample=args.sample, seed=_seed0(args))
    exports = [
        rollout_to_export(r, config.stats, config.type_labels,
                          candidate_id=cid)
        for (cid, _), r in zip(candidates, rollouts)
    ]
    result = {
        "schema_version": 1,
        "scenario_id": scenario.get("scenario_id"),
        "candidates": exports,
    }
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for (cid, _), export in zip(candidates, exports):
            fname = re.sub(r"[^A-Za-z0-9._-]", "_", cid) or "candidate"
            (out_dir / f"{fname}.json").write_text(
                json.dumps(export, indent=2, sort_keys=True) + "\n")
        (out_dir / "whatif.json").write_text(text)
        _write_run_manifest(
            out_dir, args, "simulate",
            resolved={"ckpt": args.ckpt, "scenario": args.scenario,
                      "candidates": [cid for cid, _ in candidates],
                      "sample": args.sample},
            inputs=[Path(args.ckpt), Path(args.scenario),
                    Path(args.candidates)])
        print(f"{len(rollouts)} rollouts written to {out_dir}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(Path(args.ckpt), deterministic=args.deterministic)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .responsernn import run_model_gradcheck

    worst = 0.0
    results = {}
    for mode in ("position", "velocity"):
        res = run_model_gradcheck(loss_mode=mode, seed=_seed0(args),
                                  n_coords=args.coords)
        print(f"loss={mode:9s} max_rel_err={res.max_rel_err:.3e} "
              f"({res.n_probes} probes x {res.n_coords} coords)")
        results[mode] = float(res.max_rel_err)
        worst = max(worst, res.max_rel_err)
    passed = bool(worst < args.tolerance)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.json").write_text(json.dumps(
            {"max_rel_err": results, "tolerance": args.tolerance,
             "passed": passed}, indent=2, sort_keys=True) + "\n")
        _write_run_manifest(out_dir, args, "gradcheck",
                            resolved={"coords": args.coords,
                                      "tolerance": args.tolerance})
    if not passed:
        print(f"FAIL: {worst:.3e} >= {args.tolerance:.1e}")
        return EXIT_RUNTIME
    print(f"OK: {worst:.3e} < {args.tolerance:.1e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trajresponse",
        description="Train and query trajectory-response models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, horizons=False, out_required=False):
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default 0, or the config file's)")
        sp.add_argument("--deterministic", action="store_true",
                        help="zero timing fields; outputs are bit-identical")
        if data:
            sp.add_argument("--data", default=None,
                            help=f"dataset root (default ${DATA_ROOT_ENV})")
            sp.add_argument("--test-fold", type=int, default=0)
        if horizons:
            # default None so an explicit flag can be told apart from the
            # built-in (flags override config; config overrides built-ins)
            sp.add_argument("--t-obs", type=int, default=None,
                            choices=T_OBS_CHOICES)
            sp.add_argument("--t-pred", type=int, default=None,
                            choices=T_PRED_CHOICES)
        if out_required:
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--out", default=None)

    sp = sub.add_parser("synth", help="generate synthetic datasets")
    sp.add_argument("--suite", default="all",
                    choices=("straight", "crossing", "approach", "all"))
    sp.add_argument("--n-recordings", type=int, default=20)
    sp.add_argument("--n-frames", type=int, default=320)
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("prepare", help="window and summarize a dataset")
    common(sp, data=True, horizons=True)
    sp.add_argument("--stride", type=int, default=None)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train a model")
    common(sp, data=True, horizons=True, out_required=True)
    sp.add_argument("--model", default="rrnn", choices=("rrnn", "red"))
    sp.add_argument("--loss", default=None, choices=("pos", "vel"),
                    help="loss mode (default vel, or the config file's)")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate checkpoints and baselines")
    common(sp, data=True, horizons=True)
    sp.add_argument("--ckpt", action="append", default=[],
                    metavar="[NAME=]PATH")
    sp.add_argument("--with-ctrv", action="store_true")
    sp.add_argument("--split", default="test",
                    choices=("train", "val", "test"))
    sp.add_argument("--name", default="eval")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="roll out one scenario")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scenario", required=True)
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="what-if rollouts for candidate paths")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--sample", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    common(sp)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    sp.add_argument("--coords", type=int, default=200)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        logger.error("%s", exc, exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
