"""Offline laboratory for grid-image CAPTCHA mechanics.

Simulates selection- and click-based grid challenges with full ground
truth, the box-to-grid solver pipeline, anti-recognition perturbations
and their blind estimation, verification flexibility, risk-driven
difficulty, and per-IP rate limiting.
"""

from .geometry import (
    BoundingBox,
    CellRect,
    Detection,
    GridMapping,
    GridSpec,
    grid_cells,
    map_detections_to_grids,
    mapping_oracle,
    parse_mappings,
    serialize_mappings,
)
from .imaging import (
    PerturbationConfig,
    PerturbationRecord,
    Scene,
    SceneObject,
    add_gaussian_noise,
    apply_record,
    augment_pipeline,
    blur,
    classify_perturbed,
    estimate_noise_sigma,
    render_scene,
)
from .challenge import (
    Challenge,
    ClientSignals,
    DifficultyProfile,
    FlexibilityPolicy,
    IpState,
    RateLimitConfig,
    Session,
    VerifyOutcome,
    difficulty_from_risk,
    generate_challenge,
    load_policy,
    next_round,
    rate_limit_check,
    regenerate_cell,
    render_challenge,
    risk_score,
    verify_click,
    verify_selection,
)
from .solver import (
    DetectorConfig,
    Instruction,
    OracleDetector,
    SolveTrace,
    TimingConfig,
    load_detector_config,
    oracle_detect,
    parse_instruction,
    simulate_timing,
    singularize,
    solve_click,
    solve_selection,
)
from .plugin_host import PluginHandle, remote_detect, spawn_plugin
from .harness import EvalConfig, EvalReport, gen_corpus, run_click_patterns, run_eval, write_report

__version__ = "0.1.0"
