from importlib import resources

import numpy as np
import pytest

import shiftconv as sc
from shiftconv.analyzer import _histogram
from shiftconv.errors import DomainError, InvalidConfigError, MalformedManifestError

from reference_impls import histogram_loop

CFG = sc.CodebookConfig(2, 4)


def data_text(name: str) -> str:
    return (resources.files("shiftconv") / "data" / name).read_text()


class TestLayerCost:
    def test_worked_example(self):
        spec = sc.LayerSpec("ex", 64, 128, 3, 3, 56, 56, 1, 1)
        cost = sc.layer_cost(spec, CFG)
        assert cost.mult_cycles == 231_211_008
        assert cost.shift_alu_cycles == 200_704
        assert cost.speedup == 1152
        assert cost.shift_product_ops == 17 * 200_704

    def test_one_by_one_no_advantage(self):
        spec = sc.LayerSpec("p", 8, 1, 1, 1, 10, 10)
        assert sc.layer_cost(spec, CFG).speedup == 1.0

    def test_product_ops_factor(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            shifts, bits = int(rng.integers(1, 4)), int(rng.integers(2, 6))
            cfg = sc.CodebookConfig(shifts, bits)
            spec = sc.LayerSpec("r", int(rng.integers(1, 64)), int(rng.integers(1, 64)),
                                 1, 1, int(rng.integers(1, 40)), int(rng.integers(1, 40)))
            cost = sc.layer_cost(spec, cfg)
            assert cost.shift_product_ops == cfg.precompute_count * cost.shift_alu_cycles

    def test_stride1_padding_preserving_speedup(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            kh = int(rng.choice([1, 3, 5]))
            kw = int(rng.choice([1, 3, 5]))
            spec = sc.LayerSpec(
                "s", int(rng.integers(1, 100)), int(rng.integers(1, 100)), kh, kw,
                int(rng.integers(max(kh, kw), 60)), int(rng.integers(max(kh, kw), 60)),
                1, 0,
            )
            # padding-preserving variant
            spec = sc.LayerSpec(spec.name, spec.in_channels, spec.out_channels, kh, kw,
                                spec.height, spec.width, 1, (kh - 1) // 2) \
                if kh == kw else spec
            if spec.out_height == spec.height and spec.out_width == spec.width:
                cost = sc.layer_cost(spec, CFG)
                expected = spec.out_channels * kh * kw
                assert cost.mult_cycles == expected * cost.shift_alu_cycles

    def test_stride2_uses_output_extents_for_mult(self):
        spec = sc.LayerSpec("t", 4, 8, 3, 3, 9, 9, 2, 0)
        cost = sc.layer_cost(spec, CFG)
        assert cost.mult_cycles == 8 * 4 * 4 * 4 * 9
        assert cost.shift_alu_cycles == 4 * 9 * 9


class TestModelCost:
    def test_single_layer_equals_layer_cost(self):
        spec = sc.LayerSpec("one", 16, 32, 3, 3, 14, 14, 1, 1)
        total = sc.model_cost([spec], CFG)
        single = sc.layer_cost(spec, CFG)
        assert (total.mult_cycles, total.shift_alu_cycles, total.shift_product_ops) == (
            single.mult_cycles, single.shift_alu_cycles, single.shift_product_ops,
        )

    def test_additive(self):
        rng = np.random.default_rng(2)
        specs = [
            sc.LayerSpec(f"l{i}", int(rng.integers(1, 32)), int(rng.integers(1, 32)),
                         3, 3, 15, 15, 1, 1)
            for i in range(6)
        ]
        a, b = specs[:2], specs[2:]
        whole = sc.model_cost(a + b, CFG)
        part_a, part_b = sc.model_cost(a, CFG), sc.model_cost(b, CFG)
        assert whole.mult_cycles == part_a.mult_cycles + part_b.mult_cycles
        assert whole.shift_alu_cycles == part_a.shift_alu_cycles + part_b.shift_alu_cycles
        assert whole.shift_product_ops == part_a.shift_product_ops + part_b.shift_product_ops

    def test_empty_rejected(self):
        with pytest.raises(InvalidConfigError):
            sc.model_cost([], CFG)


REFERENCE_TOTALS = {
    # bundled inventory -> reference totals (mult cycles, shift-unit cycles, speedup)
    "squeezenet-v1.1.layers": (410e6, 1.58e6, 260.0),
    "googlenet.layers": (1750e6, 2.55e6, 687.0),
    "resnet18.layers": (1970e6, 1.81e6, 1090.0),
}


class TestBundledInventories:
    @pytest.mark.parametrize("name", sorted(REFERENCE_TOTALS))
    def test_within_ten_percent(self, name):
        specs = sc.parse_layer_specs(data_text(name), source=name)
        cost = sc.model_cost(specs, CFG)
        mult_ref, shift_ref, speedup_ref = REFERENCE_TOTALS[name]
        assert abs(cost.mult_cycles - mult_ref) <= 0.10 * mult_ref
        assert abs(cost.shift_alu_cycles - shift_ref) <= 0.10 * shift_ref
        assert abs(cost.speedup - speedup_ref) <= 0.10 * speedup_ref

    def test_worked_example_file(self):
        specs = sc.parse_layer_specs(data_text("conv-example.layers"))
        assert sc.model_cost(specs, CFG).speedup == 1152


class TestLayerFileParsing:
    def test_parse_error_carries_line_number(self):
        with pytest.raises(MalformedManifestError) as err:
            sc.parse_layer_specs("a 1 1 1 1 4 4 1 0\nbroken line\n", source="f.layers")
        assert "f.layers:2" in str(err.value)

    def test_non_integer_field(self):
        with pytest.raises(MalformedManifestError) as err:
            sc.parse_layer_specs("a 1 1 1 1 4 4 one 0", source="f.layers")
        assert "f.layers:1" in str(err.value)

    def test_comments_and_blanks_skipped(self):
        specs = sc.parse_layer_specs("# header\n\na 1 2 3 3 8 8 1 1  # trailing\n")
        assert len(specs) == 1 and specs[0].out_channels == 2


class TestWeightHistogram:
    def test_two_bins(self):
        hist = sc.weight_histogram(np.array([0.5, 0.5, -0.5]), bins=2)
        assert hist.counts.tolist() == [1, 2]

    def test_all_zero_masses_middle_bin(self):
        hist = sc.weight_histogram(np.zeros(37), bins=101)
        assert hist.counts[50] == 37
        assert hist.total == 37

    def test_matches_binning_oracle(self):
        rng = np.random.default_rng(3)
        w = rng.normal(scale=0.1, size=10**5)
        hist = sc.weight_histogram(w, bins=101)
        normalized = w / np.max(np.abs(w))
        assert hist.counts.tolist() == histogram_loop(normalized, 101, -1.0, 1.0)

    def test_mass_conservation(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            w = rng.normal(size=int(rng.integers(1, 4000)))
            hist = sc.weight_histogram(w, bins=int(rng.integers(2, 300)))
            assert hist.total == w.size

    def test_quantized_input(self):
        q = sc.quantize_tensor(np.array([0.5, -0.5, 1.0]), CFG)
        hist = sc.weight_histogram(q, bins=2)
        assert hist.total == 3

    def test_validation(self):
        with pytest.raises(InvalidConfigError):
            sc.weight_histogram(np.ones(3), bins=1)
        with pytest.raises(DomainError):
            sc.weight_histogram(np.zeros(0))


def synthetic_model(rng, config=None):
    specs = [
        sc.LayerSpec("a", 2, 4, 3, 3, 10, 10, 1, 1),
        sc.LayerSpec("b", 4, 4, 3, 3, 10, 10, 1, 1),
        sc.LayerSpec("c", 4, 2, 1, 1, 10, 10, 1, 0),
    ]
    layers = []
    for spec in specs:
        w = rng.normal(scale=0.3, size=spec.weight_shape).clip(-1, 1)
        weights = sc.quantize_tensor(w, config) if config else w
        layers.append(sc.ModelLayer(spec, weights,
                                    rng.normal(scale=0.1, size=spec.out_channels).astype(np.float32)))
    return sc.Model(layers, config, relu=True)


class TestOutputDivergence:
    def test_identical_models(self):
        rng = np.random.default_rng(5)
        model = synthetic_model(rng, CFG)
        inputs = [rng.uniform(-1, 1, size=(2, 10, 10)) for _ in range(3)]
        report = sc.output_divergence(model, model, inputs, bins=11)
        assert report.bias == 0.0
        assert report.variance == 0.0
        assert report.histogram.counts[5] == report.histogram.total

    def test_variance_ordering_and_low_bias(self):
        rng = np.random.default_rng(6)
        base_rng = np.random.default_rng(7)
        float_model = synthetic_model(base_rng)
        weights = [np.asarray(l.weights) for l in float_model.layers]

        def quantized(config):
            layers = [
                sc.ModelLayer(l.spec, sc.quantize_tensor(w, config), l.bias)
                for l, w in zip(float_model.layers, weights)
            ]
            return sc.Model(layers, config, relu=True)

        inputs = [rng.uniform(-1, 1, size=(2, 10, 10)) for _ in range(8)]
        coarse = sc.output_divergence(float_model, quantized(sc.CodebookConfig(1, 4)), inputs)
        fine = sc.output_divergence(float_model, quantized(sc.CodebookConfig(3, 4)), inputs)
        assert fine.variance < coarse.variance
        mid = sc.output_divergence(float_model, quantized(CFG), inputs)
        assert abs(mid.bias) < np.sqrt(mid.variance)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(8)
        model = synthetic_model(rng, CFG)
        with pytest.raises(DomainError):
            sc.output_divergence(model, model, [])


class TestHistogramInternals:
    def test_range_validation(self):
        with pytest.raises(InvalidConfigError):
            _histogram(np.zeros(3), 10, (1.0, 1.0))
