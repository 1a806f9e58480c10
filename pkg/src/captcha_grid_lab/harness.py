"""End-to-end evaluation harness: session runs, aggregation, reports,
challenge corpora, and the scripted click-pattern reproduction.

All randomness flows from one master seed through named sub-streams
(generation / detector / verification / timing), keyed by session index,
so any component can be swapped without perturbing the draws of the
others and identical configurations replay byte-identically.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import challenge as ch
from . import solver as sv
from .geometry import GridSpec
from .imaging import PerturbationRecord, write_image_with_record
from .plugin_host import PluginHandle, remote_detect, spawn_plugin

_STREAMS = {"session": 0, "generation": 1, "detector": 2, "verification": 3, "timing": 4}


def substream(master_seed: int, session_index: int, stream: str) -> np.random.Generator:
    """Independent generator for one (session, stream) pair."""
    key = (master_seed, session_index, _STREAMS[stream])
    return np.random.default_rng(np.random.SeedSequence(key))


def substream_seed(master_seed: int, session_index: int, stream: str, extra: int = 0) -> int:
    key = (master_seed, session_index, _STREAMS[stream], extra)
    return int(np.random.SeedSequence(key).generate_state(1)[0])


class StartupError(RuntimeError):
    """Configuration could not be resolved before any session ran."""


# ---------------------------------------------------------------------------
# detectors


class PluginDetector:
    """Detector backed by an out-of-process plugin."""

    def __init__(self, handle: PluginHandle, config: sv.DetectorConfig):
        self.handle = handle
        self.config = config

    def detect(self, challenge: ch.Challenge, rng: np.random.Generator):
        image = ch.render_challenge(challenge)
        return remote_detect(self.handle, image, self.config.threshold)


def resolve_detector(spec: str):
    """Build a detector from ``<preset|path>`` or ``plugin:<command>``."""
    if spec.startswith("plugin:"):
        command = spec[len("plugin:"):]
        if not command.strip():
            raise StartupError("empty plugin command")
        handle = spawn_plugin(command)
        return PluginDetector(handle, sv.DetectorConfig(name=f"plugin({command})"))
    try:
        config = sv.load_detector_config(spec)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise StartupError(f"cannot resolve detector {spec!r}: {exc}") from exc
    return sv.OracleDetector(config)


def resolve_policy(spec: Optional[str], security_pref: str) -> ch.FlexibilityPolicy:
    if spec is None:
        spec = "easiest" if security_pref == "easiest" else "strict"
    try:
        return ch.load_policy(spec)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise StartupError(f"cannot resolve policy {spec!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EvalConfig:
    n_sessions: int = 100
    seed: int = 0
    security_pref: str = "medium"
    detector: str = "base"
    policy: Optional[str] = None
    kind: Optional[str] = None
    webdriver: bool = False
    cookie_age_days: float = 365.0
    ip_class: str = "regular"
    request_rate_per_min: float = 0.1
    out: Optional[str] = None
    jobs: int = 1
    write_traces: bool = True
    target_band: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.kind not in (None, "selection", "click"):
            raise ValueError("kind must be selection, click, or unset")

    def client(self) -> ch.ClientSignals:
        return ch.ClientSignals(
            webdriver_flag=self.webdriver,
            cookie_age_days=self.cookie_age_days,
            ip_class=self.ip_class,
            request_rate_per_min=self.request_rate_per_min,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["target_band"] is not None:
            d["target_band"] = list(d["target_band"])
        return d


def parse_kv_config(text: str) -> dict:
    """Flat ``key = value`` config format mirroring the CLI flags."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_CONFIG_COERCERS = {
    "n_sessions": int,
    "seed": int,
    "jobs": int,
    "cookie_age_days": float,
    "request_rate_per_min": float,
    "webdriver": lambda v: v.lower() in ("1", "true", "yes"),
    "write_traces": lambda v: v.lower() in ("1", "true", "yes"),
}


def eval_config_from_kv(values: dict, **overrides) -> EvalConfig:
    kwargs: dict = {}
    for key, value in values.items():
        if key not in EvalConfig.__dataclass_fields__:
            raise ValueError(f"unknown config key {key!r}")
        coerce = _CONFIG_COERCERS.get(key, str)
        kwargs[key] = coerce(value) if isinstance(value, str) else value
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return EvalConfig(**kwargs)


# ---------------------------------------------------------------------------
# session execution


@dataclass
class SessionResult:
    index: int
    outcome: str
    kind: Optional[str]
    rounds_required: int
    rounds_played: int
    duration: float
    round_records: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def run_session(config: EvalConfig, detector, policy: ch.FlexibilityPolicy, index: int) -> SessionResult:
    """Play one full session: risk gate, rounds of generate/solve/verify."""
    master = config.seed
    rng_session = substream(master, index, "session")
    rng_gen = substream(master, index, "generation")
    rng_det = substream(master, index, "detector")
    rng_ver = substream(master, index, "verification")

    session = ch.new_session(f"s{index:06d}", config.client(), config.security_pref, rng_session)
    if rng_session.random() < session.difficulty.p_no_challenge:
        return SessionResult(index, "no_challenge", None, 0, 0, 0.0)

    kind = config.kind or ("click" if rng_session.random() < session.difficulty.p_click else "selection")
    rounds_required = session.rounds_remaining
    duration = 0.0
    records = []
    traces = []

    round_no = 0
    while session.status == "active":
        round_no += 1
        gen_seed = substream_seed(master, index, "generation", round_no)
        challenge = ch.generate_challenge(session.difficulty, seed=gen_seed, kind=kind)
        instruction = sv.parse_instruction(challenge.instruction_text)
        timing_seed = substream_seed(master, index, "timing", round_no)

        if instruction.kind_hint == "click":
            trace, challenge = sv.solve_click(
                challenge, detector, rng_det, rng_gen, timing_seed=timing_seed
            )
            outcome = ch.verify_click(challenge, policy, rng_ver)
        else:
            reload_fn = lambda attempt: ch.generate_challenge(  # noqa: E731
                session.difficulty,
                seed=substream_seed(master, index, "generation", round_no * 100 + attempt),
                kind=kind,
            )
            trace, challenge = sv.solve_selection(
                challenge, detector, rng_det, timing_seed=timing_seed, reload_fn=reload_fn
            )
            clicked = set(trace.clicked_cells)
            outcome = ch.verify_selection(challenge, clicked, policy, rng_ver)

        trace.outcome = outcome
        duration += trace.duration
        if instruction.kind_hint == "selection":
            pgns = len(challenge.ground_truth_pgns)
        else:
            pgns = len(set(trace.clicked_cells))
        records.append(
            {
                "category": challenge.target_label,
                "kind": instruction.kind_hint,
                "pgns": pgns,
                "passed": outcome.passed,
            }
        )
        if config.write_traces:
            traces.append(trace)
        ch.next_round(session, outcome)

    return SessionResult(
        index=index,
        outcome=session.status,
        kind=kind,
        rounds_required=rounds_required,
        rounds_played=round_no,
        duration=duration,
        round_records=records,
        traces=traces,
    )


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    config: dict
    totals: dict
    success_rate: float
    kinds: dict
    categories: dict
    rounds_histogram: dict
    pgn_histogram: dict
    timing: dict
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "totals": self.totals,
            "success_rate": self.success_rate,
            "kinds": self.kinds,
            "categories": self.categories,
            "rounds_histogram": self.rounds_histogram,
            "pgn_histogram": self.pgn_histogram,
            "timing": self.timing,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**{k: data[k] for k in (
            "config", "totals", "success_rate", "kinds", "categories",
            "rounds_histogram", "pgn_histogram", "timing", "notes",
        )})


def _percentiles(durations: list[float]) -> dict:
    if not durations:
        return {"mean": 0.0, "median": 0.0, "min": 0.0, "max": 0.0,
                "percentiles": {str(p): 0.0 for p in (1, 5, 50, 95, 99)}}
    arr = np.array(durations)
    return {
        "mean": round(float(arr.mean()), 4),
        "median": round(float(np.median(arr)), 4),
        "min": round(float(arr.min()), 4),
        "max": round(float(arr.max()), 4),
        "percentiles": {str(p): round(float(np.percentile(arr, p)), 4) for p in (1, 5, 50, 95, 99)},
    }


def _run_session_worker(args) -> SessionResult:
    config, index = args
    detector = resolve_detector(config.detector)
    policy = resolve_policy(config.policy, config.security_pref)
    return run_session(config, detector, policy, index)


def run_eval(config: EvalConfig) -> tuple[EvalReport, list[SessionResult]]:
    """Run all sessions and aggregate. Deterministic per master seed."""
    detector = resolve_detector(config.detector)
    policy = resolve_policy(config.policy, config.security_pref)

    if config.jobs > 1 and not config.detector.startswith("plugin:"):
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_session_worker,
                                    ((config, i) for i in range(config.n_sessions)),
                                    chunksize=64))
        results.sort(key=lambda r: r.index)
    else:
        results = [run_session(config, detector, policy, i) for i in range(config.n_sessions)]

    totals = {"sessions": config.n_sessions, "passed": 0, "failed": 0, "no_challenge": 0}
    kinds: dict = {}
    categories: dict = {}
    rounds_hist: dict = {}
    pgn_hist: dict = {}
    durations: list[float] = []

    for r in results:
        totals[r.outcome] += 1
        if r.outcome == "no_challenge":
            rounds_hist["0"] = rounds_hist.get("0", 0) + 1
            continue
        k = kinds.setdefault(r.kind, {"sessions": 0, "passed": 0})
        k["sessions"] += 1
        k["passed"] += int(r.outcome == "passed")
        rounds_hist[str(r.rounds_required)] = rounds_hist.get(str(r.rounds_required), 0) + 1
        for rec in r.round_records:
            c = categories.setdefault(rec["category"], {"challenges": 0, "passed": 0})
            c["challenges"] += 1
            c["passed"] += int(rec["passed"])
            pgn_hist[str(rec["pgns"])] = pgn_hist.get(str(rec["pgns"]), 0) + 1
        if r.outcome == "passed":
            durations.append(r.duration)

    challenged = totals["sessions"] - totals["no_challenge"]
    success_rate = totals["passed"] / challenged if challenged else 0.0
    for k in kinds.values():
        k["rate"] = round(k["passed"] / k["sessions"], 4) if k["sessions"] else 0.0
    for c in categories.values():
        c["success_rate"] = round(c["passed"] / c["challenges"], 4) if c["challenges"] else 0.0

    notes = {
        "detector": detector.config.name,
        "policy": policy.name,
        "timing_over": "passed sessions",
    }
    if config.target_band is not None:
        lo, hi = config.target_band
        notes["target_band"] = [lo, hi]
        notes["in_target_band"] = bool(lo <= success_rate <= hi)
        notes["band_meaning"] = "calibrated model fit, not a reproduction of any live system"

    report = EvalReport(
        config=config.to_dict(),
        totals=totals,
        success_rate=round(success_rate, 4),
        kinds={k: kinds[k] for k in sorted(kinds)},
        categories={k: categories[k] for k in sorted(categories)},
        rounds_histogram={k: rounds_hist[k] for k in sorted(rounds_hist, key=int)},
        pgn_histogram={k: pgn_hist[k] for k in sorted(pgn_hist, key=int)},
        timing=_percentiles(durations),
        notes=notes,
    )
    if config.detector.startswith("plugin:"):
        detector.handle.close()
    return report, results


# ---------------------------------------------------------------------------
# report files


def _atomic_write(path: str, data: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_report(report: EvalReport, out_dir: str, formats: tuple[str, ...] = ("json", "csv")) -> list[str]:
    """Emit report.json, summary.csv, timing.csv; write-then-rename."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        _atomic_write(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "csv" in formats:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "challenges", "passed", "success_rate"])
        ordered = sorted(
            report.categories.items(), key=lambda kv: (-kv[1]["challenges"], kv[0])
        )
        for label, stats in ordered:
            writer.writerow([label, stats["challenges"], stats["passed"], stats["success_rate"]])
        path = os.path.join(out_dir, "summary.csv")
        _atomic_write(path, buf.getvalue())
        written.append(path)

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["percentile", "seconds"])
        for p in ("1", "5", "50", "95", "99"):
            writer.writerow([p, report.timing["percentiles"][p]])
        path = os.path.join(out_dir, "timing.csv")
        _atomic_write(path, buf.getvalue())
        written.append(path)
    return written


def write_traces(results: list[SessionResult], out_dir: str) -> int:
    traces_dir = os.path.join(out_dir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    n = 0
    for r in results:
        if not r.traces:
            continue
        path = os.path.join(traces_dir, f"session-{r.index:06d}.jsonl")
        _atomic_write(path, "".join(t.to_jsonl() for t in r.traces))
        n += 1
    return n


# ---------------------------------------------------------------------------
# challenge corpora


def gen_corpus(
    out_dir: str,
    n: int,
    seed: int = 0,
    kind: str = "selection",
    unperturbed: bool = False,
    security_pref: str = "medium",
) -> list[str]:
    """Emit ``challenge-<id>.json`` + ``challenge-<id>.png`` pairs."""
    os.makedirs(out_dir, exist_ok=True)
    difficulty = ch.difficulty_from_risk(0.1, security_pref)
    if unperturbed:
        from dataclasses import replace

        difficulty = replace(difficulty, noise_sigma_range=(0.0, 0.0))
    paths = []
    for i in range(n):
        gen_seed = substream_seed(seed, i, "generation")
        challenge = ch.generate_challenge(difficulty, seed=gen_seed, kind=kind)
        image = ch.render_challenge(challenge)
        base = os.path.join(out_dir, f"challenge-{challenge.id}")
        meta = {
            "id": challenge.id,
            "kind": challenge.kind,
            "target": challenge.target_label,
            "grid": {
                "rows": challenge.grid.rows,
                "cols": challenge.grid.cols,
                "width": challenge.grid.image_width_px,
                "height": challenge.grid.image_height_px,
            },
            "ground_truth_pgns": sorted(challenge.ground_truth_pgns),
            "perturbation": challenge.perturbation.to_dict(),
            "seed": gen_seed,
        }
        _atomic_write(f"{base}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
        write_image_with_record(f"{base}.png", image, challenge.perturbation)
        paths.append(f"{base}.json")
    return paths


@dataclass(frozen=True)
class CorpusChallenge:
    """A corpus entry as needed to solve from pixels alone."""

    id: str
    kind: str
    target: str
    grid: GridSpec
    ground_truth_pgns: frozenset
    perturbation: PerturbationRecord
    seed: int
    image_path: str


def load_corpus_challenge(json_path: str) -> CorpusChallenge:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    grid = GridSpec(
        rows=meta["grid"]["rows"],
        cols=meta["grid"]["cols"],
        image_width_px=meta["grid"]["width"],
        image_height_px=meta["grid"]["height"],
    )
    return CorpusChallenge(
        id=meta["id"],
        kind=meta["kind"],
        target=meta["target"],
        grid=grid,
        ground_truth_pgns=frozenset(meta["ground_truth_pgns"]),
        perturbation=PerturbationRecord.from_dict(meta["perturbation"]),
        seed=meta["seed"],
        image_path=json_path[: -len(".json")] + ".png",
    )


# ---------------------------------------------------------------------------
# scripted click patterns (flexibility-table reproduction)


CLICK_PATTERN_ROWS = (
    {"correct": 3, "missed": 0, "wrong": 1},
    {"correct": 4, "missed": 0, "wrong": 1},
    {"correct": 5, "missed": 0, "wrong": 1},
    {"correct": 6, "missed": 0, "wrong": 1},
    {"correct": 6, "missed": 0, "wrong": 2},
    {"correct": 3, "missed": 1, "wrong": 0},
    {"correct": 4, "missed": 1, "wrong": 0},
    {"correct": 5, "missed": 1, "wrong": 0},
)


def _scripted_click_challenge(correct: int, missed: int, seed: int) -> ch.Challenge:
    """Click challenge with exactly ``correct + missed`` target cells."""
    total = correct + missed
    dynamics = ch.ClickDynamics(p_regen=0.0, n_targets_distribution={total: 1.0})
    difficulty = ch.difficulty_from_risk(0.1, "medium")
    grid = GridSpec(3, 3) if total <= 9 else GridSpec(4, 4)
    return ch.generate_challenge(difficulty, seed=seed, kind="click", click=dynamics, grid=grid)


def run_click_patterns(
    policy_name: str = "table5", trials: int = 500, seed: int = 2024
) -> list[dict]:
    """Replay each scripted (correct, missed, wrong) row ``trials`` times."""
    policy = ch.load_policy(policy_name)
    rows = []
    for row_no, row in enumerate(CLICK_PATTERN_ROWS):
        rng_ver = substream(seed, row_no, "verification")
        rng_gen = substream(seed, row_no, "generation")
        passes = 0
        for trial in range(trials):
            gen_seed = substream_seed(seed, row_no, "generation", trial)
            challenge = _scripted_click_challenge(row["correct"], row["missed"], gen_seed)
            targets = sorted(challenge.ground_truth_pgns)
            wrong_cells = [c for c in range(1, challenge.grid.n_cells + 1) if c not in targets]
            for cell in targets[: row["correct"]]:
                challenge = ch.click_cell(challenge, cell, rng_gen)
            for cell in wrong_cells[: row["wrong"]]:
                challenge = ch.click_cell(challenge, cell, rng_gen)
            outcome = ch.verify_click(challenge, policy, rng_ver)
            passes += int(outcome.passed)
        preset = policy.accept_click(row["correct"], row["missed"], row["wrong"])
        rows.append(
            {
                **row,
                "trials": trials,
                "passes": passes,
                "observed_rate": passes / trials,
                "preset_rate": preset,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# rate-limit scenario


def simulate_rate_limit_days(
    days: int = 3,
    requests_per_day: int = 1000,
    ip_class: str = "regular",
    seed: int = 7,
    config: ch.RateLimitConfig = ch.RateLimitConfig(),
) -> dict:
    """Requests every 60 s from one IP; returns per-day block stats."""
    rng = np.random.default_rng(seed)
    state = ch.IpState(ip="10.0.0.1", ip_class=ip_class)
    per_day = []
    durations = []
    for day in range(days):
        blocked = 0
        for i in range(requests_per_day):
            now = day * 86400.0 + i * 60.0
            before = state.blocked_until
            decision = ch.rate_limit_check(state, now, config, rng)
            if not decision.allowed:
                blocked += 1
                if decision.blocked_until is not None and decision.blocked_until != before:
                    durations.append((decision.blocked_until - now) / 60.0)
        per_day.append({"day": day, "requests": requests_per_day, "blocked": blocked})
    return {"per_day": per_day, "block_durations_min": durations}
