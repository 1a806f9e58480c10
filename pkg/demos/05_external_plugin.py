"""Swap the in-process oracle for an out-of-process detector.

Any executable that speaks the newline-delimited JSON protocol in
docs/plugin-protocol.md can stand in for the oracle. This demo uses the
bundled loopback plugin; if the TypeScript color-blob plugin is built
(detector-plugin/, `npm install && npm run build`), it runs that too.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from captcha_grid_lab.challenge import difficulty_from_risk, generate_challenge, render_challenge
from captcha_grid_lab.geometry import map_detections_to_grids
from captcha_grid_lab.plugin_host import detection_to_wire, remote_detect, spawn_plugin
from captcha_grid_lab.solver import DetectorConfig, oracle_detect

difficulty = difficulty_from_risk(0.1, "medium")
challenge = generate_challenge(difficulty, seed=55, kind="selection")
image = render_challenge(challenge)
config = DetectorConfig(base_recall=1.0, fp_rate=0.0, loc_jitter=0.0)
oracle = oracle_detect(challenge.scene, challenge.perturbation, config, np.random.default_rng(0))
print(f"target {challenge.target_label!r}, ground truth {sorted(challenge.ground_truth_pgns)}")
print(f"in-process oracle found {len(oracle)} objects")

with tempfile.TemporaryDirectory() as tmp:
    canned = Path(tmp) / "detections.json"
    canned.write_text(json.dumps([detection_to_wire(d) for d in oracle]))
    handle = spawn_plugin([sys.executable, "-m", "captcha_grid_lab.loopback_plugin", str(canned)])
    echoed = remote_detect(handle, image, 0.2)
    handle.close()
print(f"loopback plugin echoed {len(echoed)} detections, field-exact: {echoed == oracle}")

plugin_main = Path(__file__).resolve().parent.parent / "detector-plugin" / "dist" / "src" / "main.js"
rules = plugin_main.parent.parent.parent / "rules" / "default-colors.json"
if plugin_main.exists() and shutil.which("node"):
    handle = spawn_plugin(["node", str(plugin_main), str(rules)])
    detections = remote_detect(handle, image, 0.2)
    handle.close()
    mappings = map_detections_to_grids(detections, challenge.grid, challenge.target_label, 0.2)
    clicked = sorted({p for m in mappings for p in m.pgns})
    print(f"color-blob plugin found {len(detections)} objects -> cells {clicked}")
    print(f"matches ground truth: {set(clicked) == challenge.ground_truth_pgns}")
else:
    print("color-blob plugin not built; run: cd detector-plugin && npm install && npm run build")
