"""Object category vocabulary, render palette, and default sampling weights.

The category set is the 19 object classes that show up in grid-image
challenges.  Five of them dominate; click challenges only ever draw from
those five.  Each category also gets a fixed, saturated render color so
that a color-rule detector can find synthetic objects without a model.
"""

from __future__ import annotations

CATEGORIES: tuple[str, ...] = (
    "bicycle",
    "boat",
    "bridge",
    "bus",
    "car",
    "chimney",
    "crosswalk",
    "fire hydrant",
    "motorcycle",
    "mountain",
    "palm tree",
    "parking meter",
    "stair",
    "statue",
    "store front",
    "taxi",
    "tractor",
    "traffic light",
    "tree",
)

TOP5: tuple[str, ...] = ("bus", "traffic light", "crosswalk", "car", "fire hydrant")

# Plural forms as they appear in challenge instructions.
PLURAL_OF: dict[str, str] = {
    "bicycle": "bicycles",
    "boat": "boats",
    "bridge": "bridges",
    "bus": "buses",
    "car": "cars",
    "chimney": "chimneys",
    "crosswalk": "crosswalks",
    "fire hydrant": "fire hydrants",
    "motorcycle": "motorcycles",
    "mountain": "mountains",
    "palm tree": "palm trees",
    "parking meter": "parking meters",
    "stair": "stairs",
    "statue": "statues",
    "store front": "store fronts",
    "taxi": "taxis",
    "tractor": "tractors",
    "traffic light": "traffic lights",
    "tree": "trees",
}

SINGULAR_OF: dict[str, str] = {plural: singular for singular, plural in PLURAL_OF.items()}

# Channel levels 20/100/235 keep every color at least 40 gray-levels away
# from the background gradient band (roughly 140..180) in some channel,
# and pairwise colors at least 80 apart in some channel.
PALETTE: dict[str, tuple[int, int, int]] = {
    "bicycle": (235, 20, 20),
    "boat": (20, 20, 235),
    "bridge": (100, 20, 20),
    "bus": (235, 235, 20),
    "car": (20, 235, 20),
    "chimney": (235, 20, 100),
    "crosswalk": (235, 235, 235),
    "fire hydrant": (235, 100, 20),
    "motorcycle": (100, 20, 235),
    "mountain": (20, 100, 235),
    "palm tree": (20, 235, 100),
    "parking meter": (20, 20, 20),
    "stair": (100, 235, 20),
    "statue": (235, 100, 100),
    "store front": (100, 235, 235),
    "taxi": (235, 235, 100),
    "tractor": (100, 100, 235),
    "traffic light": (20, 235, 235),
    "tree": (100, 235, 100),
}

# Per-channel tolerance a color-rule detector can use against renders of
# this palette without ever matching the background.
PALETTE_TOLERANCE: int = 30


def normalize_label(label: str) -> str:
    return " ".join(label.strip().lower().split())


def default_selection_weights() -> dict[str, float]:
    """Category weights for selection challenges: top five carry 0.78."""
    top = dict(zip(TOP5, (0.22, 0.18, 0.15, 0.13, 0.10)))
    rest = [c for c in CATEGORIES if c not in top]
    share = (1.0 - sum(top.values())) / len(rest)
    weights = {c: share for c in rest}
    weights.update(top)
    return weights


def default_click_weights() -> dict[str, float]:
    """Click challenges draw from exactly the five dominant categories."""
    return dict(zip(TOP5, (0.30, 0.25, 0.20, 0.15, 0.10)))


def color_rules() -> dict:
    """Rule file content for the out-of-process color-blob detector."""
    return {
        "min_area": 64,
        "grid_rows": 4,
        "grid_cols": 4,
        "rules": [
            {
                "label": label,
                "rgb": list(PALETTE[label]),
                "tolerance": [PALETTE_TOLERANCE] * 3,
            }
            for label in CATEGORIES
        ],
    }
