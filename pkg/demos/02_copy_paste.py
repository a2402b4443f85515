# %% [markdown]
# # Rebalancing tail classes inside the crops
#
# Tail-class instances met while walking the crops go into small FIFO banks.
# Each crop then receives a few augmented instances, placed by a
# breadth-first walk outward from the cluster center until a free slot turns up.

# %%
import sys
from pathlib import Path

import numpy as np

from adet.asoe import AsoeConfig, generate_subregions
from adet.dcc import DccConfig, OccupancyMask, find_paste_position
from adet.io import write_image
from adet.pipeline import build_fine_training_set, draw_overlay
from adet.sim import SceneConfig, generate_scenes, scenes_to_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

# %% The placement search on its own: a blocked center pushes the box right
cells = np.zeros((60, 60), np.uint8)
cells[25:35, 25:35] = 1
pos = find_paste_position((60, 60), (30, 30), OccupancyMask(cells), (10, 10))
print(f"first free slot: ({pos.x}, {pos.y}) after {pos.layer} ring(s)")

# %% Full pass over twenty scenes
scenes = generate_scenes(SceneConfig(), 20, master_seed=1)
dataset = scenes_to_dataset(scenes)
regions = [r for s in scenes for r in generate_subregions(s.tensor, AsoeConfig(), s.image)]
pixels = {s.image.id: s.pixels for s in scenes}
fts = build_fine_training_set(dataset, regions, pixels.__getitem__, DccConfig(budget=2, seed=0))
print(fts.count_table())

# %% Every pasted object records where it came from
pasted = [a for a in fts.dataset.annotations if "paste_position" in a.extra]
print(f"{len(pasted)} pastes; first: {pasted[0].extra}")

aug = max(fts.regions, key=lambda r: len(r.pastes))
write_image(
    draw_overlay(aug.pixels, aug.annotations),
    out / "copy_paste.png",
)
print(f"crop with {len(aug.pastes)} pastes -> {out / 'copy_paste.png'}")
