"""Build a synthetic city block, fly a drone over it, and look at what it sees.

Writes the RGB and depth views of a few poses to demos/out/ as PNGs.
"""
from pathlib import Path

import numpy as np
from PIL import Image

from somgen.scene import generate_scene, render_depth, render_rgb, sample_trajectory

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# Two scene families: a low-rise crossroad and a taller, denser wide lane.
cross = generate_scene("crossroad", seed=7, width_cells=160, cell_size=2.0)
wide = generate_scene("widelane", seed=7, width_cells=208, cell_size=4.0)
for s in (cross, wide):
    built = s.grid[s.grid > 0]
    print(f"{s.scenario:9s} side {s.side:5.0f} m, {len(np.unique(s.building_ids)) - 1:3d} buildings, "
          f"height {built.min():5.1f}..{built.max():5.1f} m (mean {built.mean():.1f})")

# The flight route is a closed loop sampled at equal steps. Its ground
# projection does not depend on altitude, so 50 m and 70 m flights overlap.
low = sample_trajectory(cross, altitude=50.0, n_snapshots=8, seed=1)
high = sample_trajectory(cross, altitude=70.0, n_snapshots=8, seed=1)
steps = np.linalg.norm(np.diff([(p.x, p.y) for p in low], axis=0), axis=1)
print("step lengths (m):", np.round(steps, 3))
print("same ground track at both altitudes:", [(p.x, p.y) for p in low] == [(p.x, p.y) for p in high])

# Each pose sees a 2z x 2z square straight down: RGB from roof/road/ground
# colours, depth as the distance from the camera to the surface below.
for i, pose in enumerate(low[:3]):
    rgb = render_rgb(cross, pose, 64).payload
    depth = render_depth(cross, pose, 64).payload
    print(f"pose {i}: ({pose.x:.1f}, {pose.y:.1f}, {pose.z:.0f}) depth {depth.min():.1f}..{depth.max():.1f} m")
    Image.fromarray(rgb[::-1]).resize((256, 256), Image.NEAREST).save(out / f"pose{i}_rgb.png")
    grey = np.clip(255 * depth / pose.z, 0, 255).astype(np.uint8)
    Image.fromarray(grey[::-1]).resize((256, 256), Image.NEAREST).save(out / f"pose{i}_depth.png")
print("images written to", out)
