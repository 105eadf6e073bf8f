#!/usr/bin/env python3
"""Regenerate the committed frontend test fixtures.

Trains a tiny deterministic checkpoint on a small synthetic patrol suite,
exports one scenario, and runs the offline what-if simulator on two
candidate machine paths (the stored plan and a stationary hold). The
resulting scenario.json and whatif.json land in frontend/test/fixtures/
and anchor the UI consistency tests: overlays drawn by the browser client
must reproduce these service-format numbers exactly.

Deterministic end to end, so re-running it never churns the fixtures.
"""

import argparse
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "frontend" / "test" / "fixtures"

TINY_CONFIG = {
    "model": {"edge_hidden": 16, "node_hidden": 8, "embed_dim": 8,
              "attn_dim": 8},
    "train": {"epochs": 2, "lr": 0.002, "batch_size": 4},
}


def run_cli(*args) -> None:
    cmd = [sys.executable, "-m", "trajresponse.cli", *map(str, args)]
    subprocess.run(cmd, check=True, cwd=REPO)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=FIXTURES,
                        help="fixture directory (default: %(default)s)")
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="ui-fixtures-") as tmp:
        base = Path(tmp)
        data = base / "data"
        run_cli("synth", "--suite", "approach", "--n-recordings", 3,
                "--n-frames", 120, "--seed", 5, "--out", data)

        cfg = base / "tiny.json"
        cfg.write_text(json.dumps(TINY_CONFIG))
        run_cli("train", "--data", data, "--config", cfg,
                "--out", base / "model", "--deterministic")

        from trajresponse.formats import window_to_scenario
        from trajresponse.trajdata import load_dataset

        ds = load_dataset(data, n_obs=12, n_pred=12)
        scenario = window_to_scenario(ds.test_windows[0], ds.stats,
                                      ds.labels, "ui-demo-0")
        scenario_path = base / "scenario.json"
        scenario_path.write_text(json.dumps(scenario, indent=2,
                                            sort_keys=True) + "\n")

        plan = scenario["robot"]["planned"]
        candidates = base / "candidates.json"
        candidates.write_text(json.dumps({"candidates": [
            {"id": "realized", "path": plan},
            {"id": "hold", "path": [plan[0]] * len(plan)},
        ]}))
        run_cli("simulate", "--ckpt", base / "model" / "best.ckpt",
                "--scenario", scenario_path, "--candidates", candidates,
                "--out", base / "sim", "--deterministic")

        shutil.copy(scenario_path, args.out / "scenario.json")
        shutil.copy(base / "sim" / "whatif.json", args.out / "whatif.json")

    print(f"fixtures written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
