import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from adet.heatmap import (
    HEADER_SIZE,
    ActivationMap,
    ActivationTensor,
    HeatmapFormatError,
    activation_map,
    decode_adhm,
    encode_adhm,
    filter_positions,
    read_adhm,
    write_adhm,
)

logits = arrays(
    np.float64,
    st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-30, 30, allow_nan=False),
)


class TestActivationMap:
    def test_zero_logits_give_half(self):
        V = activation_map(ActivationTensor(np.zeros((5, 3, 4))))
        assert np.all(V.values == 0.5)

    def test_opposite_extremes_average_to_half(self):
        F = ActivationTensor(np.array([[[1000.0]], [[-1000.0]]]))
        assert activation_map(F).values[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_scalar_sigmoid(self):
        V = activation_map(ActivationTensor(np.full((1, 1, 1), 2.0)))
        assert V.values[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-2.0)), abs=1e-12)
        assert V.values[0, 0] == pytest.approx(0.8808, abs=1e-4)

    def test_no_overflow_warnings(self):
        with np.errstate(all="raise"):
            V = activation_map(ActivationTensor(np.array([[[-800.0, 800.0]]])))
        assert V.values.tolist() == [[0.0, 1.0]]

    def test_pre_activated_bypasses_sigmoid(self):
        F = ActivationTensor(np.array([[[0.2, 0.9]], [[0.4, 0.1]]]))
        V = activation_map(F, pre_activated=True)
        np.testing.assert_allclose(V.values, [[0.3, 0.5]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ActivationTensor(np.array([[[np.nan]]]))

    @given(logits)
    def test_channel_permutation_invariant(self, data):
        a = activation_map(ActivationTensor(data)).values
        b = activation_map(ActivationTensor(data[::-1])).values
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert np.all((a >= 0) & (a <= 1))


class TestFilterPositions:
    def test_all_below(self):
        T = filter_positions(ActivationMap(np.full((4, 4), 0.4)), 0.5)
        assert len(T) == 0

    def test_two_by_two(self):
        V = ActivationMap(np.array([[0.9, 0.1], [0.1, 0.6]]), layer=3)
        assert filter_positions(V, 0.5).positions.tolist() == [[0, 0], [8, 8]]

    def test_strict_threshold(self):
        V = ActivationMap(np.array([[0.5, 0.5000001]]), layer=0)
        assert filter_positions(V, 0.5).positions.tolist() == [[1, 0]]

    def test_columns_map_to_x(self):
        V = ActivationMap(np.array([[0.0, 0.0, 0.9]]), layer=2)
        assert filter_positions(V, 0.5).positions.tolist() == [[8, 0]]

    def test_gamma_default(self):
        import inspect

        assert inspect.signature(filter_positions).parameters["gamma"].default == 0.5

    @settings(max_examples=50)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(0, 1)),
        st.floats(0.01, 0.98),
        st.floats(0.0, 0.5),
        st.integers(0, 5),
    )
    def test_monotone_and_stride(self, values, g1, dg, layer):
        g2 = min(g1 + dg, 0.99)
        V = ActivationMap(values, layer=layer)
        lo = {tuple(p) for p in filter_positions(V, g1).positions}
        hi = {tuple(p) for p in filter_positions(V, g2).positions}
        assert hi <= lo
        assert len(lo) <= values.size
        H, W = values.shape
        for x, y in lo:
            assert x % 2**layer == 0 and y % 2**layer == 0
            assert 0 <= x // 2**layer < W and 0 <= y // 2**layer < H


class TestAdhm:
    def test_round_trip(self, tmp_path):
        F = ActivationTensor(np.arange(24, dtype=np.float64).reshape(2, 3, 4) - 7.5, layer=3, image_id=42)
        write_adhm(F, tmp_path / "a.adhm")
        G = read_adhm(tmp_path / "a.adhm")
        assert (G.layer, G.image_id, G.data.shape) == (3, 42, (2, 3, 4))
        np.testing.assert_array_equal(G.data, F.data)

    def test_header_layout(self):
        buf = encode_adhm(ActivationTensor(np.zeros((1, 2, 3)), layer=4, image_id=7))
        assert buf[:4] == b"ADHM"
        assert struct.unpack("<BBIIII", buf[4:22]) == (1, 4, 7, 1, 2, 3)
        assert len(buf) == HEADER_SIZE + 4 * 6

    def _buf(self):
        return bytearray(encode_adhm(ActivationTensor(np.zeros((1, 2, 2)))))

    def test_bad_magic(self):
        buf = self._buf()
        buf[:4] = b"XXXX"
        with pytest.raises(HeatmapFormatError, match="magic") as e:
            decode_adhm(bytes(buf), "f.adhm")
        assert e.value.offset == 0 and "f.adhm" in str(e.value)

    def test_bad_version(self):
        buf = self._buf()
        buf[4] = 2
        with pytest.raises(HeatmapFormatError, match="version") as e:
            decode_adhm(bytes(buf))
        assert e.value.offset == 4

    def test_length_mismatch(self):
        with pytest.raises(HeatmapFormatError, match="length"):
            decode_adhm(bytes(self._buf()[:-2]))

    def test_truncated_header(self):
        with pytest.raises(HeatmapFormatError, match="truncated"):
            decode_adhm(b"ADHM\x01")

    def test_non_finite_names_offset(self):
        buf = self._buf()
        buf[HEADER_SIZE + 8 : HEADER_SIZE + 12] = struct.pack("<f", float("inf"))
        with pytest.raises(HeatmapFormatError, match="non-finite") as e:
            decode_adhm(bytes(buf))
        assert e.value.offset == HEADER_SIZE + 8
