"""Walk through the box-to-grid mapping on a 4x4 challenge image.

A detector hands back labeled boxes; the mapping decides which grid cells
each box covers. This script shows the three containment modes side by
side and cross-checks the default against the brute-force lattice oracle.
"""

from captcha_grid_lab.geometry import (
    BoundingBox,
    Detection,
    GridSpec,
    grid_cells,
    map_detections_to_grids,
    mapping_oracle,
    serialize_mappings,
)

spec = GridSpec(rows=4, cols=4, image_width_px=400, image_height_px=400)
print(f"{spec.rows}x{spec.cols} grid over {spec.image_width_px:.0f}px image,")
print(f"cell 1 = {grid_cells(spec)[0]}")
print()

# a bus detected across the upper-left quadrant, plus a low-confidence car
detections = [
    Detection("bus", 0.912, BoundingBox(50, 50, 250, 150)),
    Detection("car", 0.15, BoundingBox(300, 300, 380, 380)),
]

for mode in ("intersection", "corner", "coverage"):
    mappings = map_detections_to_grids(detections, spec, "bus", threshold=0.2, mode=mode)
    print(f"{mode:>13}: {[m.pgns for m in mappings]}")

print()
print("JSON the solver passes to the clicker:")
print(serialize_mappings(map_detections_to_grids(detections, spec, "bus")))

print()
oracle = mapping_oracle(detections[0].box, spec, step_px=1.0)
print(f"1px lattice oracle agrees: {sorted(oracle)}")

# a wide flat box shows why corner mode undercounts: its corners sit in
# the outer cells only, yet its body crosses the two cells in between
flat = BoundingBox(10, 10, 390, 40)
corner = map_detections_to_grids([Detection("bus", 0.9, flat)], spec, "bus", mode="corner")
inter = map_detections_to_grids([Detection("bus", 0.9, flat)], spec, "bus")
print()
print(f"flat box corner mode {corner[0].pgns} vs intersection {inter[0].pgns}")
