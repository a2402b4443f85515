# %% [markdown]
# # Where should the fine detector look?
#
# A feature-pyramid classification head lights up where small objects sit.
# Averaging its sigmoid outputs over channels, keeping cells above gamma and
# clustering them gives a handful of crops worth upscaling.

# %%
import sys
from pathlib import Path

import numpy as np

from adet.asoe import AsoeConfig, generate_subregions
from adet.heatmap import ActivationTensor, activation_map, filter_positions
from adet.io import write_image
from adet.pipeline import draw_overlay
from adet.sim import SceneConfig, generate_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

# %% Hand-made logits: four hot blobs on a 60x60 grid at stride 8
data = np.full((3, 60, 60), -6.0)
for i, j in [(5, 5), (5, 50), (50, 5), (50, 50)]:
    data[:, i : i + 3, j : j + 3] = 6.0
F = ActivationTensor(data, layer=3)
V = activation_map(F)
T = filter_positions(V, gamma=0.5)
print(f"{len(T)} hot cells, first few image positions: {T.positions[:3].tolist()}")

for r in generate_subregions(F, AsoeConfig(n=4)):
    print(f"cluster {r.cluster_id}: rect {r.rect.tolist()}  upscale x{r.scale:.1f}")

# %% A synthetic aerial scene; its tensor is hot over the small objects
scene = generate_scene(SceneConfig(seed=7))
regions = generate_subregions(scene.tensor, AsoeConfig(), scene.image)
small = sum(a.area < 32 * 32 for a in scene.annotations)
print(f"scene: {len(scene.annotations)} objects ({small} small), {len(regions)} subregions")

# %% Share of small objects that land inside some subregion
inside = [
    a for a in scene.annotations
    if a.area < 32 * 32 and any(r.rect.contains_box(a.bbox) for r in regions)
]
print(f"small objects covered by a crop: {len(inside)}/{small}")

write_image(draw_overlay(scene.pixels, scene.annotations, regions), out / "subregions.png")
print(f"overlay -> {out / 'subregions.png'}")
