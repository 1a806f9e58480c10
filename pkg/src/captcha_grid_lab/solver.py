"""The attack pipeline: instruction parsing, a calibrated oracle detector,
the selection/click orchestration loops, and the solve-time model.

The detector here is an error model over ground truth, not a network:
each true object is emitted with a recall that decays exponentially in the
injected noise level, boxes get Gaussian localization jitter, and false
positives arrive at a Poisson rate per image.  Real detectors can be
swapped in through the plugin host without touching the solve loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from . import categories as cat
from .challenge import Challenge, click_cell
from .geometry import BoundingBox, Detection, clamp_box, map_detections_to_grids
from .imaging import PerturbationRecord, Scene

CLICK_SENTINEL = "click verify once there are none left"
_ARTICLES = ("a ", "an ", "the ")


class InstructionParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# instruction parsing


def singularize(word: str) -> str:
    """Rule-based singularization with the category exception table.

    Known singular forms pass through unchanged, so the function is
    idempotent on the challenge vocabulary; unknown words fall back to
    plain suffix rules and otherwise pass through.
    """
    w = " ".join(word.strip().lower().split())
    if w in cat.PLURAL_OF:
        return w
    if w in cat.SINGULAR_OF:
        return cat.SINGULAR_OF[w]
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("ses"):
        return w[:-2]
    if w.endswith("s") and not w.endswith(("ss", "us", "is")):
        return w[:-1]
    return w


@dataclass(frozen=True)
class Instruction:
    raw_text: str
    target_label: str
    kind_hint: str


def parse_instruction(text: str) -> Instruction:
    """Extract the target object and challenge kind from widget text.

    The second line names the target; the click sentinel phrase anywhere
    in the text marks a click challenge.
    """
    lines = [line.strip() for line in text.strip().splitlines()]
    if len(lines) < 2:
        raise InstructionParseError(f"instruction needs at least 2 lines, got {len(lines)}")
    phrase = lines[1].lower()
    for article in _ARTICLES:
        if phrase.startswith(article):
            phrase = phrase[len(article):]
            break
    target = singularize(phrase)
    kind = "click" if CLICK_SENTINEL in text.lower() else "selection"
    return Instruction(raw_text=text, target_label=target, kind_hint=kind)


# ---------------------------------------------------------------------------
# oracle detector


@dataclass(frozen=True)
class DetectorConfig:
    """Error model for the ground-truth-aware detector."""

    name: str = "perfect"
    threshold: float = 0.2
    base_recall: float = 1.0
    sigma0: float = 1e12
    fp_rate: float = 0.0
    loc_jitter: float = 0.0
    calibration_sigma: float = 12.0
    recall_by_category: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if not 0.0 <= self.base_recall <= 1.0:
            raise ValueError("base_recall must be in [0, 1]")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.fp_rate < 0 or self.loc_jitter < 0:
            raise ValueError("fp_rate and loc_jitter must be >= 0")

    def recall(self, sigma: float, label: str = "") -> float:
        r0 = self.recall_by_category.get(label, self.base_recall)
        return min(1.0, max(0.0, r0 * math.exp(-sigma / self.sigma0)))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "threshold": self.threshold,
            "base_recall": self.base_recall,
            "sigma0": self.sigma0,
            "fp_rate": self.fp_rate,
            "loc_jitter": self.loc_jitter,
            "calibration_sigma": self.calibration_sigma,
        }
        if self.recall_by_category:
            d["recall_by_category"] = dict(self.recall_by_category)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        return cls(
            name=data.get("name", "custom"),
            threshold=float(data.get("threshold", 0.2)),
            base_recall=float(data.get("base_recall", 1.0)),
            sigma0=float(data.get("sigma0", 1e12)),
            fp_rate=float(data.get("fp_rate", 0.0)),
            loc_jitter=float(data.get("loc_jitter", 0.0)),
            calibration_sigma=float(data.get("calibration_sigma", 12.0)),
            recall_by_category=dict(data.get("recall_by_category", {})),
        )


def load_detector_config(name_or_path: str) -> DetectorConfig:
    """Load a named preset (``perfect``/``base``/``augmented``/``adv``) or a JSON file."""
    preset = resources.files("captcha_grid_lab") / "presets" / "detectors" / f"{name_or_path}.json"
    if preset.is_file():
        data = json.loads(preset.read_text(encoding="utf-8"))
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            data = json.load(fh)
    return DetectorConfig.from_dict(data)


def oracle_detect(
    scene: Scene,
    perturbation: Optional[PerturbationRecord],
    config: DetectorConfig,
    rng: np.random.Generator,
) -> list[Detection]:
    """Simulate detection over ground truth under the error model."""
    sigma = perturbation.total_sigma if perturbation is not None else 0.0
    w, h = float(scene.width_px), float(scene.height_px)
    detections: list[Detection] = []

    for obj in scene.objects:
        if rng.random() >= config.recall(sigma, obj.label):
            continue
        b = obj.box
        coords = np.array([b.x_min, b.y_min, b.x_max, b.y_max], dtype=float)
        if config.loc_jitter > 0:
            coords = coords + rng.normal(0.0, config.loc_jitter, size=4)
        box = clamp_box(coords[0], coords[1], coords[2], coords[3], w, h)
        if box is None:
            continue
        conf = float(rng.uniform(config.threshold, 1.0))
        detections.append(Detection(label=obj.label, confidence=conf, box=box))

    n_fp = int(rng.poisson(config.fp_rate)) if config.fp_rate > 0 else 0
    for _ in range(n_fp):
        label = str(rng.choice(cat.CATEGORIES))
        cx, cy = rng.uniform(0.1 * w, 0.9 * w), rng.uniform(0.1 * h, 0.9 * h)
        bw, bh = rng.uniform(0.05 * w, 0.3 * w), rng.uniform(0.05 * h, 0.3 * h)
        box = clamp_box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2, w, h)
        if box is None:
            continue
        conf = float(rng.uniform(config.threshold, 1.0))
        detections.append(Detection(label=label, confidence=conf, box=box))

    return [d for d in detections if d.confidence >= config.threshold]


class OracleDetector:
    """Detector facade over the error-model oracle."""

    def __init__(self, config: DetectorConfig):
        self.config = config

    def detect(self, challenge: Challenge, rng: np.random.Generator) -> list[Detection]:
        return oracle_detect(challenge.scene, challenge.perturbation, self.config, rng)


# ---------------------------------------------------------------------------
# timing model


@dataclass(frozen=True)
class TimingConfig:
    """Durations of the solve-loop components, in seconds.

    Inference takes a constant 6.5 s per image.  The image load delay is
    uniform over 1..8 s.  The per-click delay default is calibrated so a
    full selection solve averages about 4 s of wall time per selected
    grid; click-challenge regeneration waits land the click solve mean in
    the low forties.
    """

    image_load: tuple[float, float] = (1.0, 8.0)
    inference_seconds: float = 6.5
    click_delay_mean: float = 1.58
    click_delay_jitter: float = 0.75
    regen_wait: tuple[float, float] = (2.2, 4.8)
    submit_seconds: float = 0.2


DEFAULT_TIMING = TimingConfig()


class _Timeline:
    """Samples component durations in a fixed, replayable order."""

    def __init__(self, config: TimingConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.t = 0.0

    def load(self) -> float:
        self.t += float(self.rng.uniform(*self.config.image_load))
        return self.t

    def inference(self) -> float:
        self.t += self.config.inference_seconds
        return self.t

    def click(self) -> float:
        c = self.config
        self.t += max(0.05, c.click_delay_mean + float(self.rng.uniform(-c.click_delay_jitter, c.click_delay_jitter)))
        return self.t

    def regen_wait(self) -> float:
        self.t += float(self.rng.uniform(*self.config.regen_wait))
        return self.t

    def submit(self) -> float:
        self.t += self.config.submit_seconds
        return self.t


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceAction:
    action: str
    t: float
    cell: Optional[int] = None
    round: int = 0


@dataclass
class SolveTrace:
    challenge_id: str
    kind: str
    timing_seed: int
    actions: list[TraceAction] = field(default_factory=list)
    detections: list[list[Detection]] = field(default_factory=list)
    reloads: int = 0
    outcome: Optional[object] = None

    def add(self, action: str, t: float, cell: Optional[int] = None, round: int = 0) -> None:
        if self.actions and t <= self.actions[-1].t:
            raise ValueError("trace timestamps must be strictly increasing")
        self.actions.append(TraceAction(action, t, cell, round))

    @property
    def clicked_cells(self) -> list[int]:
        return [a.cell for a in self.actions if a.action == "click" and a.cell is not None]

    @property
    def duration(self) -> float:
        return self.actions[-1].t if self.actions else 0.0

    def to_jsonl(self) -> str:
        lines = []
        for a in self.actions:
            entry: dict = {"action": a.action, "t": round(a.t, 6), "round": a.round}
            if a.cell is not None:
                entry["cell"] = a.cell
            if a.action == "submit" and self.outcome is not None:
                entry["passed"] = bool(self.outcome.passed)
            lines.append(json.dumps(entry, sort_keys=True))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# solve loops


def solve_selection(
    challenge: Challenge,
    detector,
    det_rng: np.random.Generator,
    timing_seed: int = 0,
    timing: TimingConfig = DEFAULT_TIMING,
    mode: str = "intersection",
    max_reloads: int = 3,
    reload_fn: Optional[Callable[[int], Challenge]] = None,
) -> tuple[SolveTrace, Challenge]:
    """Detect, map, click the union of potential grids, submit.

    When nothing matching the target is detected the solver hits reload
    (a fresh challenge image for the same round) up to ``max_reloads``
    times before submitting an empty selection.
    """
    if challenge.kind != "selection":
        raise ValueError("solve_selection requires a selection challenge")
    trace = SolveTrace(challenge.id, "selection", timing_seed)
    line = _Timeline(timing, np.random.default_rng(timing_seed))
    line.load()

    attempt = 0
    while True:
        line.inference()
        detections = detector.detect(challenge, det_rng)
        trace.detections.append(detections)
        mappings = map_detections_to_grids(
            detections, challenge.grid, challenge.target_label, detector.config.threshold, mode
        )
        pgns = sorted({p for m in mappings for p in m.pgns})
        if pgns or attempt >= max_reloads or reload_fn is None:
            break
        attempt += 1
        challenge = reload_fn(attempt)
        trace.add("reload", line.load())
        trace.reloads = attempt

    for cell in pgns:
        trace.add("click", line.click(), cell=cell)
    trace.add("submit", line.submit())
    return trace, challenge


def solve_click(
    challenge: Challenge,
    detector,
    det_rng: np.random.Generator,
    gen_rng: np.random.Generator,
    timing_seed: int = 0,
    timing: TimingConfig = DEFAULT_TIMING,
    mode: str = "intersection",
    max_rounds: int = 10,
    redetect: str = "full",
) -> tuple[SolveTrace, Challenge]:
    """Click potential grids until none are detected, then submit.

    ``redetect`` chooses whether each loop re-detects over the full image
    (default) or only over the cells regenerated in the previous loop.
    """
    if challenge.kind != "click":
        raise ValueError("solve_click requires a click challenge")
    if redetect not in ("full", "cells"):
        raise ValueError(f"redetect must be 'full' or 'cells', got {redetect!r}")
    trace = SolveTrace(challenge.id, "click", timing_seed)
    line = _Timeline(timing, np.random.default_rng(timing_seed))
    line.load()

    last_regenerated: Optional[set[int]] = None
    for round_no in range(max_rounds + 1):
        line.inference()
        scope = challenge
        if redetect == "cells" and last_regenerated is not None:
            scope = _restrict_to_cells(challenge, last_regenerated)
        detections = detector.detect(scope, det_rng)
        trace.detections.append(detections)
        mappings = map_detections_to_grids(
            detections, challenge.grid, challenge.target_label, detector.config.threshold, mode
        )
        pgns = sorted({p for m in mappings for p in m.pgns})
        if not pgns or round_no == max_rounds:
            break
        for cell in pgns:
            trace.add("click", line.click(), cell=cell, round=round_no)
            challenge = click_cell(challenge, cell, gen_rng)
            line.regen_wait()
        last_regenerated = set(pgns)

    trace.add("submit", line.submit())
    return trace, challenge


def _restrict_to_cells(challenge: Challenge, cells: set[int]) -> Challenge:
    """View of the challenge whose scene keeps only objects in given cells."""
    from .challenge import ground_truth_mapping  # local to avoid cycle at import time

    kept = tuple(
        obj
        for obj in challenge.scene.objects
        if ground_truth_mapping(
            Scene(challenge.scene.width_px, challenge.scene.height_px, (obj,)),
            challenge.grid,
            obj.label,
        )
        & cells
    )
    scene = Scene(challenge.scene.width_px, challenge.scene.height_px, kept)
    from dataclasses import replace

    return replace(challenge, scene=scene)


def simulate_timing(trace: SolveTrace, timing: TimingConfig = DEFAULT_TIMING) -> float:
    """Recompute a trace's duration from its structure and timing seed.

    Components are replayed in the exact order the solve loop drew them,
    so the result matches the trace's recorded timestamps.
    """
    line = _Timeline(timing, np.random.default_rng(trace.timing_seed))
    line.load()
    n_rounds = len(trace.detections)
    clicks_by_round: dict[int, int] = {}
    for a in trace.actions:
        if a.action == "click":
            clicks_by_round[a.round] = clicks_by_round.get(a.round, 0) + 1
    reloads = sum(1 for a in trace.actions if a.action == "reload")

    if trace.kind == "selection":
        line.inference()
        for _ in range(reloads):
            line.load()
            line.inference()
        for _ in range(clicks_by_round.get(0, 0)):
            line.click()
    else:
        for round_no in range(n_rounds):
            line.inference()
            for _ in range(clicks_by_round.get(round_no, 0)):
                line.click()
                line.regen_wait()
    return line.submit()
