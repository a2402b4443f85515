# %% [markdown]
# # How gamma and the cluster count trade coverage for cost
#
# Raising gamma keeps fewer hot cells; allowing more clusters yields more,
# tighter crops, and since each is upscaled to the same long side the fine
# detector ends up processing more pixels.

# %%
from dataclasses import replace

from adet.asoe import AsoeConfig, generate_subregions
from adet.pipeline import fine_stage_area
from adet.sim import SceneConfig, generate_scenes

scenes = generate_scenes(SceneConfig(), 25, master_seed=0)


def regions(cfg):
    return [r for s in scenes for r in generate_subregions(s.tensor, cfg, s.image)]


# %% gamma sweep
for g in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99):
    print(f"gamma={g:<5} subregions={len(regions(replace(AsoeConfig(), gamma=g)))}")

# %% cluster-count sweep
for n in range(1, 7):
    rs = regions(replace(AsoeConfig(), n=n))
    raw = sum(r.rect.area for r in rs)
    print(f"N={n}  crops={len(rs):4d}  crop area={raw:10.0f}  fine-stage area={fine_stage_area(rs):.3e}")
