"""Aggregate evaluation runs: success rates, histograms, defenses.

Runs three small evaluations (perfect detector, degraded detector,
suspicious client), prints the headline numbers, and exercises the
flexibility-table reproduction and the per-IP rate limiter.
"""

from captcha_grid_lab.harness import (
    EvalConfig,
    run_click_patterns,
    run_eval,
    simulate_rate_limit_days,
)

for label, config in (
    ("perfect detector, strict policy", EvalConfig(n_sessions=300, seed=1, detector="perfect", policy="strict", write_traces=False)),
    ("augmented-preset detector", EvalConfig(n_sessions=300, seed=1, detector="augmented", policy="strict", write_traces=False, target_band=(0.78, 0.88))),
    ("suspicious client (webdriver, tor)", EvalConfig(n_sessions=300, seed=1, detector="augmented", policy="strict", webdriver=True, cookie_age_days=0, ip_class="tor", write_traces=False)),
):
    report, _ = run_eval(config)
    t = report.totals
    print(f"{label}:")
    print(f"  passed {t['passed']} / failed {t['failed']} / no-challenge {t['no_challenge']}"
          f"  -> success rate {report.success_rate:.3f}")
    print(f"  rounds histogram {report.rounds_histogram}")
    print(f"  timing mean {report.timing['mean']}s, p95 {report.timing['percentiles']['95']}s")
    if "in_target_band" in report.notes:
        print(f"  target band {report.notes['target_band']}: {'hit' if report.notes['in_target_band'] else 'miss'}")
    print()

print("click-flexibility reproduction (500 trials per scripted pattern):")
for row in run_click_patterns(trials=500, seed=9):
    print(f"  {row['correct']} correct, {row['missed']} missed, {row['wrong']} wrong"
          f" -> observed {row['observed_rate']:.3f} (preset {row['preset_rate']:.2f})")

print()
print("per-IP rate limiting, 1000 requests/day at 60s spacing:")
result = simulate_rate_limit_days(days=3, requests_per_day=1000, ip_class="regular", seed=3)
for day in result["per_day"]:
    print(f"  day {day['day']}: {day['blocked']} blocked of {day['requests']}")
durations = result["block_durations_min"]
print(f"  block windows ranged {min(durations):.0f}-{max(durations):.0f} minutes")
tor = simulate_rate_limit_days(days=1, requests_per_day=1000, ip_class="tor", seed=4)
print(f"  tor exit: {tor['per_day'][0]['blocked']} of 1000 blocked")
