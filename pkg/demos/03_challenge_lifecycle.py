"""One full challenge-response exchange, from risk score to verdict.

Covers both widget types: a selection grid solved in one shot, and a
click grid where clicked cells regenerate until no target remains.
"""

import numpy as np

from captcha_grid_lab.challenge import (
    ClientSignals,
    difficulty_from_risk,
    generate_challenge,
    load_policy,
    risk_score,
    verify_click,
    verify_selection,
)
from captcha_grid_lab.solver import OracleDetector, load_detector_config, parse_instruction, solve_click, solve_selection

# a suspicious client gets a harder profile than a seasoned one
for signals in (
    ClientSignals(webdriver_flag=False, cookie_age_days=400, ip_class="regular", request_rate_per_min=0.1),
    ClientSignals(webdriver_flag=True, cookie_age_days=0, ip_class="tor", request_rate_per_min=6.0),
):
    score = risk_score(signals)
    d = difficulty_from_risk(score, "medium")
    print(f"risk {score:.3f}: P(click challenge)={d.p_click:.2f}, noise range {d.noise_sigma_range}")

difficulty = difficulty_from_risk(0.1, "medium")
detector = OracleDetector(load_detector_config("augmented"))
policy = load_policy("strict")

print()
challenge = generate_challenge(difficulty, seed=31, kind="selection")
instruction = parse_instruction(challenge.instruction_text)
print(f"instruction: {challenge.instruction_text.splitlines()[1]!r} -> target {instruction.target_label!r}")
print(f"ground truth cells: {sorted(challenge.ground_truth_pgns)}")
trace, challenge = solve_selection(challenge, detector, np.random.default_rng(0), timing_seed=3)
print(f"solver clicked:     {trace.clicked_cells}")
outcome = verify_selection(challenge, set(trace.clicked_cells), policy, np.random.default_rng(1))
print(f"verdict: passed={outcome.passed} missed={outcome.missed} wrong={outcome.wrong}")
print(f"simulated wall time: {trace.duration:.1f}s")

print()
challenge = generate_challenge(difficulty, seed=32, kind="click")
print(f"click challenge, targets at {sorted(challenge.ground_truth_pgns)}")
trace, challenge = solve_click(challenge, detector, np.random.default_rng(2), np.random.default_rng(3), timing_seed=4)
rounds = len(trace.detections) - 1
print(f"clicked {trace.clicked_cells} over {rounds} round(s); residual targets {sorted(challenge.ground_truth_pgns)}")
outcome = verify_click(challenge, load_policy("table5"), np.random.default_rng(4))
print(f"verdict: passed={outcome.passed}; simulated wall time {trace.duration:.1f}s")
