import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adet.asoe import (
    AsoeConfig,
    Cluster,
    SubRegion,
    cluster_positions,
    generate_subregions,
    kmeans_sse,
    regions_from_clusters,
)
from adet.core import BBox, ImageRecord
from adet.heatmap import ActivationTensor, PositionSet, activation_map, filter_positions
from oracles import best_partition_sse

IMG = ImageRecord(1, 1000, 1000)

point_sets = st.lists(
    st.tuples(st.integers(0, 120), st.integers(0, 120)), min_size=1, max_size=25, unique=True
).map(lambda pts: np.array(pts, dtype=np.int64))


def four_blob_tensor(layer: int = 3) -> ActivationTensor:
    data = np.full((3, 60, 60), -6.0)
    for i, j in [(5, 5), (5, 50), (50, 5), (50, 50)]:
        data[:, i : i + 3, j : j + 3] = 6.0
    return ActivationTensor(data, layer=layer, image_id=9)


class TestClusterPositions:
    def test_fewer_points_than_clusters(self):
        cs = cluster_positions(PositionSet(np.array([[10, 10]])), 4, seed=0)
        assert len(cs) == 1
        assert cs[0].centroid == (10.0, 10.0)

    def test_empty(self):
        assert cluster_positions(np.zeros((0, 2)), 3) == []

    def test_rejects_zero_n(self):
        with pytest.raises(ValueError):
            cluster_positions(np.array([[1, 1]]), 0)

    def test_two_pairs(self):
        pts = np.array([[0, 0], [0, 8], [100, 100], [100, 108]])
        cs = cluster_positions(pts, 2, seed=5)
        got = sorted((c.centroid, sorted(map(tuple, c.members.tolist()))) for c in cs)
        assert got == [
            ((0.0, 4.0), [(0.0, 0.0), (0.0, 8.0)]),
            ((100.0, 104.0), [(100.0, 100.0), (100.0, 108.0)]),
        ]
        labels = np.array([0, 0, 1, 1])
        assert kmeans_sse(pts.astype(float), labels) == pytest.approx(best_partition_sse(pts.astype(float), 2))

    def test_default_counts(self):
        assert AsoeConfig().n == 4
        assert AsoeConfig().gamma == 0.5
        assert AsoeConfig().layer == 3

    @settings(max_examples=60, deadline=None)
    @given(point_sets, st.integers(1, 5), st.integers(0, 2**16))
    def test_properties(self, pts, n, seed):
        cs = cluster_positions(pts, n, seed=seed)
        assert 1 <= len(cs) <= min(n, len(pts))
        members = np.concatenate([c.members for c in cs])
        assert len(members) == len(pts)
        assert {tuple(p) for p in members.tolist()} == {tuple(p) for p in pts.astype(float).tolist()}
        cents = np.array([c.centroid for c in cs])
        for c in cs:
            assert len(c.members) > 0
            np.testing.assert_allclose(c.centroid, c.members.mean(axis=0), atol=1e-6)
            d = ((c.members[:, None, :] - cents[None]) ** 2).sum(axis=2)
            own = d[:, c.id]
            assert np.all(own <= d.min(axis=1) + 1e-9)
        # no single-point move lowers SSE
        labels = np.concatenate([[c.id] * len(c.members) for c in cs])
        base = kmeans_sse(members, labels)
        for i in range(len(members)):
            for k in range(len(cs)):
                if k == labels[i] or (labels == labels[i]).sum() == 1:
                    continue
                moved = labels.copy()
                moved[i] = k
                assert kmeans_sse(members, moved) >= base - 1e-6

    @settings(max_examples=25, deadline=None)
    @given(point_sets, st.integers(1, 4), st.integers(0, 1000))
    def test_deterministic(self, pts, n, seed):
        a = cluster_positions(pts, n, seed=seed)
        b = cluster_positions(pts, n, seed=seed)
        assert [(c.centroid, c.members.tobytes()) for c in a] == [(c.centroid, c.members.tobytes()) for c in b]


class TestRegionsFromClusters:
    def _cluster(self, pts):
        pts = np.asarray(pts, dtype=float)
        return Cluster(0, pts, tuple(pts.mean(axis=0)))

    def test_tight_box(self):
        (r,) = regions_from_clusters([self._cluster([(10, 20), (30, 40)])], IMG, pad=0, min_side=1)
        assert r.rect == BBox(10, 20, 20, 20)
        assert r.center == (20.0, 30.0)

    def test_min_side_growth(self):
        (r,) = regions_from_clusters([self._cluster([(50, 50)])], IMG, pad=0, min_side=64)
        assert r.rect == BBox(18, 18, 64, 64)

    def test_border_clamp(self):
        # expand to x in [-16, 24], y in [-16, 16], then clamp at the origin
        img = ImageRecord(1, 100, 100)
        (r,) = regions_from_clusters([self._cluster([(0, 0), (8, 0)])], img, pad=16, min_side=1)
        assert r.rect == BBox(0, 0, 24, 16)

    def test_scale_records_fine_input_size(self):
        (r,) = regions_from_clusters([self._cluster([(50, 50)])], IMG, pad=0, min_side=64)
        assert r.scale == pytest.approx(1333 / 64)

    def test_json_round_trip(self):
        (r,) = regions_from_clusters([self._cluster([(10, 20), (30, 47)])], IMG)
        assert SubRegion.from_json(r.to_json()) == r
        assert set(r.to_json()) == {"image_id", "cluster_id", "rect", "center", "scale"}

    @settings(max_examples=40, deadline=None)
    @given(point_sets, st.integers(1, 4), st.integers(2, 4))
    def test_scale_equivariance(self, pts, n, k):
        img = ImageRecord(1, 130, 130)
        big = ImageRecord(1, 130 * k, 130 * k)
        cs = cluster_positions(pts, n, seed=1)
        scaled = [Cluster(c.id, c.members * k, (c.centroid[0] * k, c.centroid[1] * k)) for c in cs]
        a = regions_from_clusters(cs, img, pad=4, min_side=16)
        b = regions_from_clusters(scaled, big, pad=4 * k, min_side=16 * k)
        for ra, rb in zip(a, b):
            np.testing.assert_allclose(np.array(ra.rect.tolist()) * k, rb.rect.tolist(), atol=1e-9)


class TestGenerateSubregions:
    def test_all_zero_logits(self):
        assert generate_subregions(ActivationTensor(np.zeros((2, 10, 10)))) == []

    def test_single_hot_cell(self):
        data = np.full((1, 20, 20), -5.0)
        data[0, 10, 6] = 5.0  # position (48, 80)
        (r,) = generate_subregions(ActivationTensor(data, layer=3), AsoeConfig(pad=16, min_side=64))
        assert r.rect == BBox(48 - 32, 80 - 32, 64, 64)
        assert r.center == (48.0, 80.0)

    def test_four_blobs(self):
        F = four_blob_tensor()
        cfg = AsoeConfig(n=4)
        regions = generate_subregions(F, cfg)
        assert len(regions) == 4
        for i, a in enumerate(regions):
            for b in regions[i + 1 :]:
                assert a.rect.x2 <= b.rect.x or b.rect.x2 <= a.rect.x or a.rect.y2 <= b.rect.y or b.rect.y2 <= a.rect.y
        # each region holds exactly one blob, which is the optimal 4-partition
        T = filter_positions(activation_map(F), 0.5).positions
        for p in T:
            inside = [r for r in regions if r.rect.contains_point(*p)]
            assert len(inside) == 1

    def test_coverage_and_count(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            data = rng.normal(-1.0, 2.0, size=(2, 30, 40))
            F = ActivationTensor(data, layer=3)
            cfg = AsoeConfig(n=int(rng.integers(1, 6)), seed=int(rng.integers(100)))
            regions = generate_subregions(F, cfg)
            T = filter_positions(activation_map(F), cfg.gamma).positions
            assert len(regions) <= min(cfg.n, len(T))
            for p in T:
                assert any(r.rect.contains_point(*p) for r in regions)
            for r in regions:
                assert BBox(0, 0, 320, 240).contains_box(r.rect)
