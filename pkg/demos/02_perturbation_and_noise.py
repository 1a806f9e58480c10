"""Inject anti-recognition noise, then estimate it blind.

The defense adds Gaussian noise and blur to challenge images; the blind
estimator recovers the noise level from the image alone (no clean
reference), which is how perturbed challenges get flagged.
"""

import numpy as np

from captcha_grid_lab.challenge import difficulty_from_risk, generate_challenge, render_challenge
from captcha_grid_lab.imaging import (
    PerturbationConfig,
    add_gaussian_noise,
    apply_record,
    augment_pipeline,
    blur,
    classify_perturbed,
    estimate_noise_sigma,
)

difficulty = difficulty_from_risk(0.1, "medium")
challenge = generate_challenge(difficulty, seed=12, kind="selection")
clean = render_challenge(challenge)

print("sigma injected -> sigma estimated")
for sigma in (0, 2, 5, 10, 15):
    noisy = add_gaussian_noise(clean, sigma, seed=99)
    est = estimate_noise_sigma(noisy)
    flag = "PERTURBED" if classify_perturbed(est) else "clean"
    print(f"  {sigma:>5} -> {est:6.2f}  [{flag}]")

print()
print("blur shrinks the estimate (it removes fine detail):")
noisy = add_gaussian_noise(clean, 12, seed=7)
print(f"  noisy: {estimate_noise_sigma(noisy):.2f}")
print(f"  + gaussian blur sigma=3: {estimate_noise_sigma(blur(noisy, 'gaussian', 3.0)):.2f}")
print(f"  + median blur k=9: {estimate_noise_sigma(blur(noisy, 'median', 9)):.2f}")

print()
print("the full augmentation pipeline records what it did:")
config = PerturbationConfig(p_brightness=1.0, p_contrast=1.0, p_noise=1.0, p_blur=1.0)
augmented, record = augment_pipeline(clean, config, seed=5)
for name, params in record.ops:
    print(f"  {name}: {params}")
replayed = apply_record(clean, record)
print(f"record replays byte-exactly: {bool((replayed == augmented).all())}")
