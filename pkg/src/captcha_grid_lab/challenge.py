"""Server-side challenge simulation: generation, click regeneration,
verification flexibility, risk scoring, difficulty profiles, and per-IP
rate limiting.

Everything generated here carries full ground truth, so solver behavior
can be verified exactly instead of probed.  Challenge objects are treated
as immutable; state transitions (cell regeneration, clicks) return new
instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np

from . import categories as cat
from .geometry import BoundingBox, GridSpec, grid_cells, map_detections_to_grids, Detection
from .imaging import (
    PerturbationRecord,
    Scene,
    SceneObject,
    apply_record,
    noise_only_record,
    render_scene,
    styled_object,
)

SECURITY_PREFS = ("easiest", "medium", "most_secure")
CLICK_SENTINEL = "Click verify once there are none left"

# Observed share of selection challenges requiring n grid selections.
# 2..4 are measured fractions; the remaining mass spreads evenly over 5..14.
SELECTION_PGN_DIST: dict[int, float] = {2: 0.0572, 3: 0.4259, 4: 0.3215}
_TAIL_MASS = 1.0 - sum(SELECTION_PGN_DIST.values())
SELECTION_PGN_DIST.update({n: _TAIL_MASS / 10 for n in range(5, 15)})

# Share of sessions that pass with no image challenge at all at low risk.
NO_CHALLENGE_P = 12 / 800


class GenerationError(RuntimeError):
    """Challenge could not be placed under the given constraints."""


class ChallengeStateError(RuntimeError):
    """Operation called on a challenge or session in the wrong state."""


# ---------------------------------------------------------------------------
# client signals and risk


@dataclass(frozen=True)
class ClientSignals:
    webdriver_flag: bool = False
    cookie_age_days: float = 365.0
    ip_class: str = "regular"
    request_rate_per_min: float = 0.1

    def __post_init__(self) -> None:
        if self.cookie_age_days < 0:
            raise ValueError("cookie_age_days must be >= 0")
        if self.ip_class not in ("regular", "tor"):
            raise ValueError(f"ip_class must be 'regular' or 'tor', got {self.ip_class!r}")
        if self.request_rate_per_min < 0:
            raise ValueError("request_rate_per_min must be >= 0")


@dataclass(frozen=True)
class RiskWeights:
    """Default weights for the risk score.

    Fresh cookies contribute ``cookie_base`` decaying with age; Tor exits
    add a flat term; the request-rate term saturates at
    ``rate_saturation`` requests per minute; a webdriver flag floors the
    score at ``webdriver_floor``.
    """

    cookie_base: float = 0.4
    cookie_decay_days: float = 30.0
    tor_weight: float = 0.3
    rate_weight: float = 0.3
    rate_saturation: float = 2.0
    webdriver_floor: float = 0.8


DEFAULT_RISK_WEIGHTS = RiskWeights()


def risk_score(signals: ClientSignals, weights: RiskWeights = DEFAULT_RISK_WEIGHTS) -> float:
    """Deterministic suspicion score in [0, 1]."""
    score = weights.cookie_base * math.exp(-signals.cookie_age_days / weights.cookie_decay_days)
    if signals.ip_class == "tor":
        score += weights.tor_weight
    score += weights.rate_weight * min(1.0, signals.request_rate_per_min / weights.rate_saturation)
    score = min(1.0, score)
    if signals.webdriver_flag:
        score = max(score, weights.webdriver_floor)
    return score


# ---------------------------------------------------------------------------
# verification flexibility


@dataclass(frozen=True)
class FlexibilityPolicy:
    """Acceptance probabilities for imperfect solutions.

    ``selection_accept`` maps ``(missed, wrong)`` to a pass probability.
    ``click_accept`` maps either ``(missed, wrong)`` or the finer
    ``(correct, missed, wrong)`` to a pass probability; the finer key wins
    when both are present.  A perfect solution always passes.
    """

    name: str = "strict"
    selection_accept: dict = field(default_factory=dict)
    click_accept: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for table in (self.selection_accept, self.click_accept):
            for key, p in table.items():
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"acceptance probability out of range at {key}: {p}")

    def accept_selection(self, missed: int, wrong: int) -> float:
        if missed == 0 and wrong == 0:
            return 1.0
        return self.selection_accept.get((missed, wrong), 0.0)

    def accept_click(self, correct: int, missed: int, wrong: int) -> float:
        if missed == 0 and wrong == 0:
            return 1.0
        if (correct, missed, wrong) in self.click_accept:
            return self.click_accept[(correct, missed, wrong)]
        return self.click_accept.get((missed, wrong), 0.0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "selection_accept": {",".join(map(str, k)): v for k, v in self.selection_accept.items()},
            "click_accept": {",".join(map(str, k)): v for k, v in self.click_accept.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlexibilityPolicy":
        def parse(table: dict) -> dict:
            return {tuple(int(x) for x in k.split(",")): float(v) for k, v in table.items()}

        return cls(
            name=data.get("name", "custom"),
            selection_accept=parse(data.get("selection_accept", {})),
            click_accept=parse(data.get("click_accept", {})),
        )


def load_policy(name_or_path: str) -> FlexibilityPolicy:
    """Load a named preset (``table5``, ``easiest``, ``strict``) or a JSON file."""
    preset = resources.files("captcha_grid_lab") / "presets" / "policies" / f"{name_or_path}.json"
    if preset.is_file():
        data = json.loads(preset.read_text(encoding="utf-8"))
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            data = json.load(fh)
    return FlexibilityPolicy.from_dict(data)


# ---------------------------------------------------------------------------
# difficulty


@dataclass(frozen=True)
class DifficultyProfile:
    security_pref: str = "medium"
    p_click: float = 87 / 788
    rounds_distribution: dict = field(
        default_factory=lambda: {1: 0.8081, 2: 0.1684, 3: 0.0150, 4: 0.0060, 5: 0.0025}
    )
    noise_sigma_range: tuple[float, float] = (0.0, 2.0)
    flexibility: FlexibilityPolicy = field(default_factory=FlexibilityPolicy)
    p_no_challenge: float = 0.0

    def __post_init__(self) -> None:
        if self.security_pref not in SECURITY_PREFS:
            raise ValueError(f"security_pref must be one of {SECURITY_PREFS}")
        if not 0.0 <= self.p_click <= 1.0:
            raise ValueError("p_click must be in [0, 1]")
        total = sum(self.rounds_distribution.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"rounds_distribution must sum to 1, got {total}")
        lo, hi = self.noise_sigma_range
        if lo > hi or lo < 0:
            raise ValueError(f"bad noise_sigma_range ({lo}, {hi})")


_ROUNDS_LOW = {1: 0.8081, 2: 0.1684, 3: 0.0150, 4: 0.0060, 5: 0.0025}
_ROUNDS_SECURE = {1: 0.45, 2: 0.35, 3: 0.12, 4: 0.05, 5: 0.03}

P_CLICK_LOW = 87 / 788
P_CLICK_HIGH = 0.28


def _ramp(score: float) -> float:
    """0 at score <= 0.2, 1 at score >= 0.8, linear in between."""
    return min(1.0, max(0.0, (score - 0.2) / 0.6))


def difficulty_from_risk(
    score: float,
    security_pref: str = "medium",
    flexibility: Optional[FlexibilityPolicy] = None,
) -> DifficultyProfile:
    """Map a risk score to challenge difficulty.

    The click-challenge share rises from the low-risk share (87 of 788
    observed challenges) to at least a quarter for suspicious clients, the
    noise range widens from [0, 2] to [0, 15], and the most-secure
    preference shifts round-count mass away from single-round sessions.
    """
    if not 0.0 <= score <= 1.0:
        raise ValueError("score must be in [0, 1]")
    if security_pref not in SECURITY_PREFS:
        raise ValueError(f"security_pref must be one of {SECURITY_PREFS}")
    t = _ramp(score)
    p_click = P_CLICK_LOW + (P_CLICK_HIGH - P_CLICK_LOW) * t

    blend = 0.6 * t + (0.4 if security_pref == "most_secure" else 0.0)
    blend = min(1.0, blend)
    rounds = {
        k: (1 - blend) * _ROUNDS_LOW[k] + blend * _ROUNDS_SECURE[k] for k in sorted(_ROUNDS_LOW)
    }

    sigma_hi = 2.0 + 13.0 * t
    if flexibility is None:
        flexibility = load_policy("easiest" if security_pref == "easiest" else "strict")
    return DifficultyProfile(
        security_pref=security_pref,
        p_click=p_click,
        rounds_distribution=rounds,
        noise_sigma_range=(0.0, sigma_hi),
        flexibility=flexibility,
        p_no_challenge=NO_CHALLENGE_P if score <= 0.2 else 0.0,
    )


# ---------------------------------------------------------------------------
# challenge generation


@dataclass(frozen=True)
class CategoryDistribution:
    selection: dict = field(default_factory=cat.default_selection_weights)
    click: dict = field(default_factory=cat.default_click_weights)

    def __post_init__(self) -> None:
        for table in (self.selection, self.click):
            total = sum(table.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"category weights must sum to 1, got {total}")
            for label in table:
                if label not in cat.CATEGORIES:
                    raise ValueError(f"unknown category {label!r}")


@dataclass(frozen=True)
class ClickDynamics:
    """Regeneration behavior of click challenges.

    A regenerated cell contains the target with probability ``p_regen``
    decayed by ``decay`` for every previous regeneration of that cell.
    """

    p_regen: float = 0.25
    decay: float = 0.5
    n_targets_distribution: dict = field(
        default_factory=lambda: {2: 0.25, 3: 0.35, 4: 0.25, 5: 0.15}
    )


DEFAULT_CLICK_DYNAMICS = ClickDynamics()


@dataclass(frozen=True)
class Challenge:
    id: str
    kind: str
    target_label: str
    grid: GridSpec
    scene: Scene
    perturbation: PerturbationRecord
    ground_truth_pgns: frozenset
    instruction_text: str
    seed: int
    render_seed: int
    click: ClickDynamics = DEFAULT_CLICK_DYNAMICS
    regen_counts: tuple = ()
    correct_clicks: int = 0
    wrong_clicks: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("selection", "click"):
            raise ValueError(f"kind must be 'selection' or 'click', got {self.kind!r}")
        n = self.grid.n_cells
        if any(p < 1 or p > n for p in self.ground_truth_pgns):
            raise ValueError("ground truth cells out of grid range")

    def regen_count(self, cell: int) -> int:
        return dict(self.regen_counts).get(cell, 0)


def ground_truth_mapping(scene: Scene, grid: GridSpec, target_label: str) -> frozenset:
    """Cells covered by target-labeled ground-truth boxes (intersection mode)."""
    detections = [
        Detection(label=obj.label, confidence=1.0, box=obj.box)
        for obj in scene.objects
        if obj.label == target_label
    ]
    mappings = map_detections_to_grids(detections, grid, target_label, threshold=0.0)
    return frozenset(p for m in mappings for p in m.pgns)


def _single_cell_box(cell, rng: np.random.Generator) -> BoundingBox:
    """A box strictly inside one cell, filling most of it.

    Sides span 68..90% of the cell so even an inscribed triangle keeps
    area above a fifth of the cell, and margins stay at 5% or more.
    """
    cw = cell.x_max - cell.x_min
    ch = cell.y_max - cell.y_min
    fx = rng.uniform(0.68, 0.90)
    fy = rng.uniform(0.68, 0.90)
    ox = rng.uniform(0.05, 0.95 - fx)
    oy = rng.uniform(0.05, 0.95 - fy)
    return BoundingBox(
        cell.x_min + ox * cw,
        cell.y_min + oy * ch,
        cell.x_min + (ox + fx) * cw,
        cell.y_min + (oy + fy) * ch,
    )


def _block_box(cells_by_index: dict, indices: list[int], rng: np.random.Generator) -> BoundingBox:
    """A box spanning a rectangular block of cells, margins inside the rim."""
    xs0 = min(cells_by_index[i].x_min for i in indices)
    ys0 = min(cells_by_index[i].y_min for i in indices)
    xs1 = max(cells_by_index[i].x_max for i in indices)
    ys1 = max(cells_by_index[i].y_max for i in indices)
    cw = cells_by_index[indices[0]].x_max - cells_by_index[indices[0]].x_min
    ch = cells_by_index[indices[0]].y_max - cells_by_index[indices[0]].y_min
    return BoundingBox(
        xs0 + rng.uniform(0.04, 0.15) * cw,
        ys0 + rng.uniform(0.04, 0.15) * ch,
        xs1 - rng.uniform(0.04, 0.15) * cw,
        ys1 - rng.uniform(0.04, 0.15) * ch,
    )


def _sample_from_dist(rng: np.random.Generator, dist: dict) -> int:
    keys = sorted(dist)
    probs = np.array([dist[k] for k in keys], dtype=float)
    probs = probs / probs.sum()
    return int(rng.choice(keys, p=probs))


def _truncate_count_dist(dist: dict, max_n: int) -> dict:
    trunc = {n: p for n, p in dist.items() if n <= max_n}
    if not trunc:
        raise GenerationError(f"count distribution has no support below {max_n}")
    return trunc


def _instruction_for(target: str, kind: str, rng: np.random.Generator) -> str:
    if kind == "click" or rng.random() < 0.5:
        noun = cat.PLURAL_OF[target]
    else:
        article = "an" if target[0] in "aeiou" else "a"
        noun = f"{article} {target}"
    lines = ["Select all images with", noun]
    if kind == "click":
        lines.append(CLICK_SENTINEL)
    else:
        lines.append("If there are none, click skip")
    return "\n".join(lines)


def generate_challenge(
    difficulty: DifficultyProfile,
    categories: CategoryDistribution = CategoryDistribution(),
    seed: int = 0,
    kind: Optional[str] = None,
    grid: Optional[GridSpec] = None,
    click: ClickDynamics = DEFAULT_CLICK_DYNAMICS,
    max_retries: int = 32,
) -> Challenge:
    """Deterministically generate a challenge with full ground truth.

    The target-cell count follows the configured distribution exactly: the
    scene is constructed so that the intersection-mode mapping of its
    target boxes equals the drawn cell set.
    """
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = "click" if rng.random() < difficulty.p_click else "selection"
    if grid is None:
        grid = GridSpec(4, 4, 400.0, 400.0)

    weights = categories.click if kind == "click" else categories.selection
    labels = sorted(weights)
    probs = np.array([weights[l] for l in labels], dtype=float)
    target = str(rng.choice(labels, p=probs / probs.sum()))

    count_dist = click.n_targets_distribution if kind == "click" else SELECTION_PGN_DIST
    count_dist = _truncate_count_dist(count_dist, grid.n_cells)
    n_cells_wanted = _sample_from_dist(rng, count_dist)

    cells = grid_cells(grid)
    by_index = {c.index: c for c in cells}

    for _ in range(max_retries):
        chosen: list[int] = []
        target_boxes: list[BoundingBox] = []

        if kind == "selection" and rng.random() < 0.4:
            blocks = [
                (a, b)
                for a in range(1, grid.rows + 1)
                for b in range(1, grid.cols + 1)
                if 2 <= a * b <= n_cells_wanted
            ]
            if blocks:
                a, b = blocks[int(rng.integers(len(blocks)))]
                r0 = int(rng.integers(grid.rows - a + 1))
                c0 = int(rng.integers(grid.cols - b + 1))
                block = [grid.cell_index(r0 + i, c0 + j) for i in range(a) for j in range(b)]
                chosen.extend(block)
                target_boxes.append(_block_box(by_index, block, rng))

        free = [i for i in range(1, grid.n_cells + 1) if i not in chosen]
        need = n_cells_wanted - len(chosen)
        if need < 0 or need > len(free):
            continue
        singles = [int(i) for i in rng.choice(free, size=need, replace=False)] if need else []
        for i in singles:
            chosen.append(i)
            target_boxes.append(_single_cell_box(by_index[i], rng))

        shapes = [str(rng.choice(("rect", "ellipse", "triangle"))) for _ in target_boxes]
        objects = [styled_object(target, box, shape) for box, shape in zip(target_boxes, shapes)]

        unused = [i for i in range(1, grid.n_cells + 1) if i not in chosen]
        n_distractors = int(rng.integers(0, 3))
        if unused and n_distractors:
            others = [l for l in cat.CATEGORIES if l != target]
            for i in rng.choice(unused, size=min(n_distractors, len(unused)), replace=False):
                label = str(rng.choice(others))
                box = _single_cell_box(by_index[int(i)], rng)
                objects.append(styled_object(label, box, str(rng.choice(("rect", "ellipse", "triangle")))))

        scene = Scene(int(grid.image_width_px), int(grid.image_height_px), tuple(objects))
        gt = ground_truth_mapping(scene, grid, target)
        if gt == frozenset(chosen) and gt:
            break
    else:
        raise GenerationError(
            f"could not place {n_cells_wanted} target cells on a {grid.rows}x{grid.cols} grid"
        )

    lo, hi = difficulty.noise_sigma_range
    sigma = float(rng.uniform(lo, hi))
    noise_seed = int(rng.integers(0, 2**32))
    perturbation = noise_only_record(sigma, noise_seed)
    render_seed = int(rng.integers(0, 2**32))
    instruction = _instruction_for(target, kind, rng)

    return Challenge(
        id=f"c{seed & 0xFFFFFFFFFFFF:012x}",
        kind=kind,
        target_label=target,
        grid=grid,
        scene=scene,
        perturbation=perturbation,
        ground_truth_pgns=gt,
        instruction_text=instruction,
        seed=seed,
        render_seed=render_seed,
        click=click,
    )


def render_challenge(challenge: Challenge) -> np.ndarray:
    """Raster of the challenge's current scene with its perturbation applied."""
    base = render_scene(challenge.scene, challenge.render_seed)
    return apply_record(base, challenge.perturbation)


# ---------------------------------------------------------------------------
# click dynamics


def _cell_of_box(box: BoundingBox, grid: GridSpec) -> Optional[int]:
    """Cell wholly containing the box, or None if it spans several."""
    hits = [
        c.index
        for c in grid_cells(grid)
        if box.x_min >= c.x_min and box.x_max <= c.x_max and box.y_min >= c.y_min and box.y_max <= c.y_max
    ]
    return hits[0] if len(hits) == 1 else None


def regenerate_cell(challenge: Challenge, cell: int, rng: np.random.Generator) -> Challenge:
    """Replace a clicked cell's sub-scene with a fresh one.

    The new content holds the target with probability ``p_regen`` decayed
    per previous regeneration of the same cell; otherwise it may hold an
    unrelated object.
    """
    if challenge.kind != "click":
        raise ChallengeStateError("regenerate_cell is only valid for click challenges")
    if not 1 <= cell <= challenge.grid.n_cells:
        raise ValueError(f"cell {cell} out of range")

    times = challenge.regen_count(cell)
    p = challenge.click.p_regen * (challenge.click.decay**times)

    by_index = {c.index: c for c in grid_cells(challenge.grid)}
    kept = tuple(
        obj for obj in challenge.scene.objects if _cell_of_box(obj.box, challenge.grid) != cell
    )
    new_objects = list(kept)
    if rng.random() < p:
        box = _single_cell_box(by_index[cell], rng)
        shape = str(rng.choice(("rect", "ellipse", "triangle")))
        new_objects.append(styled_object(challenge.target_label, box, shape))
    elif rng.random() < 0.3:
        others = [l for l in cat.CATEGORIES if l != challenge.target_label]
        box = _single_cell_box(by_index[cell], rng)
        new_objects.append(styled_object(str(rng.choice(others)), box, "rect"))

    scene = Scene(challenge.scene.width_px, challenge.scene.height_px, tuple(new_objects))
    gt = ground_truth_mapping(scene, challenge.grid, challenge.target_label)
    counts = dict(challenge.regen_counts)
    counts[cell] = times + 1
    return replace(
        challenge,
        scene=scene,
        ground_truth_pgns=gt,
        regen_counts=tuple(sorted(counts.items())),
    )


def click_cell(challenge: Challenge, cell: int, rng: np.random.Generator) -> Challenge:
    """Click one cell of a click challenge: count it, then regenerate it."""
    if challenge.kind != "click":
        raise ChallengeStateError("click_cell is only valid for click challenges")
    was_target = cell in challenge.ground_truth_pgns
    updated = regenerate_cell(challenge, cell, rng)
    if was_target:
        return replace(updated, correct_clicks=challenge.correct_clicks + 1)
    return replace(updated, wrong_clicks=challenge.wrong_clicks + 1)


def expected_regenerations(p_regen: float, decay: float, max_terms: int = 64) -> float:
    """Closed-form expected regenerations of one clicked target cell.

    The first click always regenerates; each later regeneration happens
    only if the previous one respawned the target, whose probability
    decays geometrically.
    """
    total = 1.0
    product = 1.0
    for k in range(max_terms):
        product *= p_regen * (decay**k)
        if product == 0.0:
            break
        total += product
    return total


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerifyOutcome:
    passed: bool
    missed: int
    wrong: int


def verify_selection(
    challenge: Challenge,
    selected: set[int],
    policy: FlexibilityPolicy,
    rng: np.random.Generator,
) -> VerifyOutcome:
    """Grade a set of selected cells against ground truth."""
    n = challenge.grid.n_cells
    if any(s < 1 or s > n for s in selected):
        raise ValueError("selected cells out of grid range")
    missed = len(challenge.ground_truth_pgns - set(selected))
    wrong = len(set(selected) - challenge.ground_truth_pgns)
    p = policy.accept_selection(missed, wrong)
    return VerifyOutcome(passed=bool(rng.random() < p), missed=missed, wrong=wrong)


def verify_click(
    challenge: Challenge, policy: FlexibilityPolicy, rng: np.random.Generator
) -> VerifyOutcome:
    """Grade a click challenge at submit time.

    Cells still holding the target count as missed; wrong clicks are those
    made on cells that held no target when clicked.
    """
    if challenge.kind != "click":
        raise ChallengeStateError("verify_click is only valid for click challenges")
    missed = len(challenge.ground_truth_pgns)
    wrong = challenge.wrong_clicks
    p = policy.accept_click(challenge.correct_clicks, missed, wrong)
    return VerifyOutcome(passed=bool(rng.random() < p), missed=missed, wrong=wrong)


# ---------------------------------------------------------------------------
# sessions


@dataclass
class Session:
    session_id: str
    client: ClientSignals
    difficulty: DifficultyProfile
    rounds_remaining: int
    history: list = field(default_factory=list)
    status: str = "active"


def new_session(
    session_id: str,
    client: ClientSignals,
    security_pref: str,
    rng: np.random.Generator,
    weights: RiskWeights = DEFAULT_RISK_WEIGHTS,
    flexibility: Optional[FlexibilityPolicy] = None,
) -> Session:
    score = risk_score(client, weights)
    difficulty = difficulty_from_risk(score, security_pref, flexibility)
    rounds = _sample_from_dist(rng, difficulty.rounds_distribution)
    return Session(session_id, client, difficulty, rounds)


def next_round(session: Session, outcome: VerifyOutcome) -> str:
    """Advance a session by one verified round: fail fast, pass at zero left."""
    if session.status != "active":
        raise ChallengeStateError(f"session already {session.status}")
    session.history.append(outcome)
    if not outcome.passed:
        session.status = "failed"
        return "failed"
    session.rounds_remaining -= 1
    if session.rounds_remaining == 0:
        session.status = "passed"
        return "passed"
    return "continue"


# ---------------------------------------------------------------------------
# rate limiting


@dataclass(frozen=True)
class RateLimitConfig:
    daily_cap: int = 800
    block_minutes: tuple[float, float] = (36.0, 95.0)
    p_tor_block: float = 0.30


@dataclass
class IpState:
    ip: str
    ip_class: str = "regular"
    daily_count: int = 0
    blocked_until: Optional[float] = None
    day: Optional[int] = None
    last_now: Optional[float] = None


@dataclass(frozen=True)
class RateDecision:
    allowed: bool
    blocked_until: Optional[float] = None


def rate_limit_check(
    state: IpState,
    now: float,
    config: RateLimitConfig,
    rng: np.random.Generator,
) -> RateDecision:
    """Admit or block one request under the per-IP policy.

    Regular IPs get a daily cap; crossing it starts a randomly sized block
    window, and requests keep counting while blocked.  Tor IPs are blocked
    independently per request.  The clock must not run backwards.
    """
    if state.last_now is not None and now < state.last_now:
        raise ChallengeStateError(f"clock regression: {now} < {state.last_now}")
    state.last_now = now

    day = int(now // 86400)
    if state.day != day:
        state.day = day
        state.daily_count = 0
        state.blocked_until = None

    state.daily_count += 1

    if state.ip_class == "tor":
        if rng.random() < config.p_tor_block:
            return RateDecision(allowed=False)
        return RateDecision(allowed=True)

    if state.blocked_until is not None and now < state.blocked_until:
        return RateDecision(allowed=False, blocked_until=state.blocked_until)
    if state.daily_count > config.daily_cap:
        lo, hi = config.block_minutes
        state.blocked_until = now + 60.0 * rng.uniform(lo, hi)
        return RateDecision(allowed=False, blocked_until=state.blocked_until)
    return RateDecision(allowed=True)
