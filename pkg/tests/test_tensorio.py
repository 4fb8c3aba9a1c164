import numpy as np
import pytest

import shiftconv as sc
from shiftconv.errors import (
    BadMagicError,
    BlobLengthMismatchError,
    DomainError,
    IndexOutOfRangeError,
    InvalidConfigError,
    MalformedManifestError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from shiftconv.tensorio import tensor_from_bytes, tensor_to_bytes

CFG = sc.CodebookConfig(2, 4)


class TestFixedPoint:
    def test_full_scale_clamps_max(self):
        fx = sc.to_fixed_point(np.array([1.0, 0.5, -0.25]), 8)
        assert fx.exponent == -7
        assert fx.data.tolist() == [127, 64, -32]

    def test_all_zeros(self):
        fx = sc.to_fixed_point(np.zeros(4), 8)
        assert fx.exponent == -7
        assert not fx.data.any()

    def test_rounding(self):
        fx = sc.to_fixed_point(np.array([0.3]), 8)
        assert (fx.exponent, fx.data.tolist()) == (-8, [77])

    def test_negative_full_scale_is_exact(self):
        fx = sc.to_fixed_point(np.array([-1.0, 0.5]), 8)
        assert fx.data.tolist() == [-128, 64]
        assert sc.from_fixed_point(fx).tolist() == [-1.0, 0.5]

    @pytest.mark.parametrize("bits", [1, 0, 17, 32])
    def test_invalid_bits(self, bits):
        with pytest.raises(InvalidConfigError):
            sc.to_fixed_point(np.ones(1), bits)

    @pytest.mark.parametrize(
        "stored,exp,expected", [([64], -7, [0.5]), ([0], 3, [0.0]), ([-32], -7, [-0.25])]
    )
    def test_from_fixed_point(self, stored, exp, expected):
        fx = sc.FixedPointTensor(np.array(stored), 8, exp)
        assert sc.from_fixed_point(fx).tolist() == expected

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = rng.normal(scale=rng.uniform(0.01, 10.0), size=rng.integers(1, 40))
            once = sc.to_fixed_point(t, 8)
            twice = sc.to_fixed_point(sc.from_fixed_point(once), 8)
            assert once.exponent == twice.exponent
            assert np.array_equal(once.data, twice.data)

    def test_error_bound_when_max_not_clamped(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            t = rng.uniform(-1.0, 1.0, size=50)
            t[0] = -np.max(np.abs(t)) * 1.0001  # negative max avoids the +full-scale clamp
            fx = sc.to_fixed_point(t, 8)
            err = np.max(np.abs(sc.from_fixed_point(fx) - t))
            assert err <= 2.0 ** (fx.exponent - 1)

    def test_width_validation(self):
        with pytest.raises(DomainError):
            sc.FixedPointTensor(np.array([200]), 8, 0)


class TestTensorFiles:
    def test_float_round_trip(self, tmp_path):
        t = np.array([[0.5, -0.25], [1.5, 0.0]], dtype=np.float32).astype(np.float64)
        path = tmp_path / "t.shct"
        sc.save_tensor(t, path)
        loaded = sc.load_tensor(path)
        assert isinstance(loaded, np.ndarray)
        assert np.array_equal(loaded, t)

    def test_fixed_round_trip(self, tmp_path):
        fx = sc.to_fixed_point(np.linspace(-3, 3, 24).reshape(2, 3, 4), 12)
        path = tmp_path / "t.shct"
        sc.save_tensor(fx, path)
        loaded = sc.load_tensor(path)
        assert isinstance(loaded, sc.FixedPointTensor)
        assert (loaded.bits, loaded.exponent) == (12, fx.exponent)
        assert np.array_equal(loaded.data, fx.data)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            tensor_from_bytes(b"NOPE" + bytes(20))

    def test_truncated_payload(self):
        blob = tensor_to_bytes(np.ones(5))
        with pytest.raises(TruncatedPayloadError):
            tensor_from_bytes(blob[:-3])

    def test_unsupported_version(self):
        blob = bytearray(tensor_to_bytes(np.ones(2)))
        blob[4] = 9
        with pytest.raises(UnsupportedVersionError):
            tensor_from_bytes(bytes(blob))

    def test_header_dims_authoritative(self):
        blob = tensor_to_bytes(np.ones((2, 3)))
        loaded = tensor_from_bytes(blob)
        assert loaded.shape == (2, 3)


def small_model(rng, quantized=True, layers=2):
    specs = [
        sc.LayerSpec("a", 2, 3, 3, 3, 8, 8, 1, 1),
        sc.LayerSpec("b", 3, 2, 1, 1, 8, 8, 1, 0),
    ][:layers]
    out = []
    for spec in specs:
        w = rng.uniform(-1, 1, size=spec.weight_shape)
        weights = sc.quantize_tensor(w, CFG) if quantized else w
        bias = rng.normal(size=spec.out_channels).astype(np.float32)
        out.append(sc.ModelLayer(spec, weights, bias))
    return sc.Model(out, CFG if quantized else None, relu=True)


class TestModelFiles:
    def test_round_trip_quantized(self, tmp_path):
        model = small_model(np.random.default_rng(2))
        path = tmp_path / "m.txt"
        sc.save_model(model, path)
        loaded = sc.load_model(path)
        assert loaded.config == model.config
        assert loaded.relu == model.relu
        for a, b in zip(loaded.layers, model.layers):
            assert a.spec == b.spec
            assert a.weights.scale == b.weights.scale
            assert np.array_equal(a.weights.indices, b.weights.indices)
            assert np.array_equal(a.bias, b.bias)

    def test_round_trip_float(self, tmp_path):
        rng = np.random.default_rng(3)
        model = small_model(rng, quantized=False)
        # float weights persist as float32
        for layer in model.layers:
            layer.weights = layer.weights.astype(np.float32).astype(np.float64)
        path = tmp_path / "m.txt"
        sc.save_model(model, path)
        loaded = sc.load_model(path)
        for a, b in zip(loaded.layers, model.layers):
            assert np.array_equal(np.asarray(a.weights), np.asarray(b.weights))

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("shiftconv-model 1\nrelu 1\nlayers one\n")
        with pytest.raises(MalformedManifestError):
            sc.load_model(path)

    def test_unsupported_model_version(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("shiftconv-model 9\nrelu 1\nlayers 0\n")
        with pytest.raises(UnsupportedVersionError):
            sc.load_model(path)

    def test_blob_length_mismatch(self, tmp_path):
        model = small_model(np.random.default_rng(4))
        path = tmp_path / "m.txt"
        sc.save_model(model, path)
        blob = tmp_path / "layer0.idx"
        blob.write_bytes(blob.read_bytes()[:-1])
        with pytest.raises(BlobLengthMismatchError):
            sc.load_model(path)

    def test_index_out_of_range(self, tmp_path):
        model = small_model(np.random.default_rng(5))
        path = tmp_path / "m.txt"
        sc.save_model(model, path)
        blob = tmp_path / "layer0.idx"
        raw = bytearray(blob.read_bytes())
        raw[0] = 9  # beyond max index 7 for bits=4
        blob.write_bytes(bytes(raw))
        with pytest.raises(IndexOutOfRangeError):
            sc.load_model(path)

    def test_missing_blob(self, tmp_path):
        model = small_model(np.random.default_rng(6))
        path = tmp_path / "m.txt"
        sc.save_model(model, path)
        (tmp_path / "layer0.idx").unlink()
        with pytest.raises(MalformedManifestError):
            sc.load_model(path)

    def test_save_is_deterministic(self, tmp_path):
        model = small_model(np.random.default_rng(7))
        sc.save_model(model, tmp_path / "a" / "m.txt")
        sc.save_model(model, tmp_path / "b" / "m.txt")
        for name in ("m.txt", "layer0.idx", "layer0.bias", "layer1.idx", "layer1.bias"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestLayerSpec:
    def test_output_extents(self):
        spec = sc.LayerSpec("x", 3, 8, 3, 3, 32, 32, 2, 1)
        assert (spec.out_height, spec.out_width) == (16, 16)

    def test_rejects_non_integral_output(self):
        with pytest.raises(InvalidConfigError):
            sc.LayerSpec("x", 3, 8, 3, 3, 56, 56, 2, 1)

    def test_rejects_bad_extents(self):
        with pytest.raises(InvalidConfigError):
            sc.LayerSpec("x", 0, 8, 3, 3, 32, 32)
        with pytest.raises(InvalidConfigError):
            sc.LayerSpec("x", 3, 8, 5, 5, 3, 3)

    def test_channel_chain_validation(self):
        rng = np.random.default_rng(8)
        model = small_model(rng)
        bad_spec = sc.LayerSpec("b", 4, 2, 1, 1, 8, 8, 1, 0)
        model.layers[1] = sc.ModelLayer(
            bad_spec, sc.quantize_tensor(rng.normal(size=bad_spec.weight_shape), CFG),
            model.layers[1].bias,
        )
        with pytest.raises(ShapeMismatchError):
            model.validate()
