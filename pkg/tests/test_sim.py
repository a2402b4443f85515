import numpy as np
import pytest

from adet.asoe import SubRegion
from adet.core import BBox, iou, iou_matrix, size_bucket
from adet.heatmap import activation_map, filter_positions
from adet.sim import (
    DEFAULT_CLASS_FREQS,
    MockDetectorConfig,
    SceneConfig,
    categories_for,
    generate_scene,
    generate_scenes,
    mock_detect,
    scenes_to_dataset,
)


@pytest.fixture(scope="module")
def hundred():
    return generate_scenes(SceneConfig(), 100, master_seed=0)


class TestSceneConfig:
    def test_frequencies_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SceneConfig(class_freqs=(0.5,) * 10)
        with pytest.raises(ValueError):
            SceneConfig(size_fracs=(0.5, 0.5, 0.5))

    def test_tail_classes(self):
        tails = [c.name for c in categories_for(SceneConfig()) if c.is_tail]
        assert "car" not in tails and "pedestrian" not in tails and "people" not in tails
        assert len(tails) == 7


class TestGenerateScene:
    def test_deterministic(self):
        a, b = generate_scene(SceneConfig(seed=4)), generate_scene(SceneConfig(seed=4))
        assert a.annotations == b.annotations
        np.testing.assert_array_equal(a.pixels, b.pixels)
        np.testing.assert_array_equal(a.tensor.data, b.tensor.data)

    def test_seeds_differ(self):
        a, b = generate_scene(SceneConfig(seed=1)), generate_scene(SceneConfig(seed=2))
        assert a.annotations != b.annotations

    def test_all_small(self):
        s = generate_scene(SceneConfig(size_fracs=(1.0, 0.0, 0.0), seed=3))
        assert s.annotations and all(size_bucket(a) == "small" for a in s.annotations)

    def test_saturation_drops_objects(self):
        cfg = SceneConfig(width=100, height=100, n_objects=(30, 30), size_fracs=(0, 0, 1.0), max_attempts=20)
        s = generate_scene(cfg)
        assert s.dropped > 0 and len(s.annotations) + s.dropped == 30

    def test_tensor_shape(self):
        s = generate_scene(SceneConfig(seed=0))
        assert s.tensor.data.shape == (4, 75, 100)
        assert s.tensor.layer == 3

    def test_small_fraction(self, hundred):
        anns = [a for s in hundred for a in s.annotations]
        frac = np.mean([size_bucket(a) == "small" for a in anns])
        assert abs(frac - 0.605) <= 0.05

    def test_class_frequencies(self, hundred):
        anns = [a for s in hundred for a in s.annotations]
        counts = np.bincount([a.category_id - 1 for a in anns], minlength=10) / len(anns)
        assert np.all(np.abs(counts - np.array(DEFAULT_CLASS_FREQS)) <= 0.03)

    def test_non_overlapping(self, hundred):
        for s in hundred:
            m = iou_matrix([a.bbox.tolist() for a in s.annotations], [a.bbox.tolist() for a in s.annotations])
            np.fill_diagonal(m, 0.0)
            assert m.max() == 0.0

    def test_hot_cells_cover_small_centers(self, hundred):
        for s in hundred:
            T = filter_positions(activation_map(s.tensor), 0.5)
            hot = {tuple(p) for p in T.positions.tolist()}
            stride = s.tensor.stride
            small = [a for a in s.annotations if size_bucket(a) == "small"]
            covered = sum(
                (int(a.bbox.center[0]) // stride * stride, int(a.bbox.center[1]) // stride * stride) in hot
                for a in small
            )
            assert covered >= 0.95 * len(small)

    def test_dataset_ids_unique(self, hundred):
        ds = scenes_to_dataset(hundred)
        ids = [a.id for a in ds.annotations]
        assert len(ids) == len(set(ids))


class TestMockDetector:
    def test_recall_midpoint(self):
        cfg = MockDetectorConfig()
        assert cfg.recall(8.0) < 0.5
        assert cfg.recall(8.0 * 4) == 0.5
        sides = np.linspace(1, 200, 50)
        assert np.all(np.diff(cfg.recall(sides)) > 0)

    def test_rejects_non_increasing_recall(self):
        with pytest.raises(ValueError):
            MockDetectorConfig(recall_slope=0.0)

    def test_exact_when_noise_free(self):
        s = generate_scene(SceneConfig(seed=5))
        cfg = MockDetectorConfig(loc_noise=0.0, recall_override=1.0, fp_rate=0.0)
        dets = mock_detect(s, cfg=cfg)
        assert [(d.bbox, d.category_id) for d in dets] == [(a.bbox, a.category_id) for a in s.annotations]

    def test_region_frame(self):
        s = generate_scene(SceneConfig(seed=5))
        a = s.annotations[0]
        rect = BBox(max(a.bbox.x - 10, 0), max(a.bbox.y - 10, 0), a.bbox.w + 20, a.bbox.h + 20)
        r = SubRegion(s.image.id, rect, rect.center, 4.0, 0)
        cfg = MockDetectorConfig(loc_noise=0.0, recall_override=1.0, fp_rate=0.0)
        dets = mock_detect(s, r, cfg)
        want = BBox((a.bbox.x - rect.x) * 4, (a.bbox.y - rect.y) * 4, a.bbox.w * 4, a.bbox.h * 4)
        assert any(iou(d.bbox, want) > 1 - 1e-9 for d in dets)

    def test_deterministic_per_region(self):
        s = generate_scene(SceneConfig(seed=6))
        r = SubRegion(s.image.id, BBox(0, 0, 200, 200), (100, 100), 6.0, 2)
        assert mock_detect(s, r) == mock_detect(s, r)
        assert mock_detect(s) == mock_detect(s)

    def test_upscaling_raises_small_recall(self, hundred):
        cfg = MockDetectorConfig(fp_rate=0.0)
        hits_1 = hits_4 = n = 0
        for s in hundred[:30]:
            small = [a for a in s.annotations if size_bucket(a) == "small"]
            n += len(small)
            hits_1 += sum(d.bbox.area < 32 * 32 for d in mock_detect(s, cfg=cfg))
            r = SubRegion(s.image.id, s.image.bounds, (400, 300), 4.0, 0)
            hits_4 += sum(d.bbox.area < 32 * 32 * 16 for d in mock_detect(s, r, cfg))
        assert hits_4 > hits_1
