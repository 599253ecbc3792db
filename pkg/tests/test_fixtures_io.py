"""Seeded fixtures, the stem extension, and the FPZ1 container."""

import json

import numpy as np
import pytest

from rcnet.fixtures import extend_stem, stem_params, synth_backbone
from rcnet.params import ParamStore
from rcnet.pyramid import (
    BadMagicError,
    BlobLengthError,
    FeaturePyramid,
    HeaderError,
    PyramidError,
    load_pyramid,
    pyramid_bytes,
    save_pyramid,
)
from rcnet.rng import SplitMix64, fold_seed
from rcnet.tensor import Tensor, conv2d, pad2d, relu


class TestSplitMix:
    def test_batching_independence(self):
        a = SplitMix64(42)
        b = SplitMix64(42)
        joined = np.concatenate([a.words(3), a.words(4)])
        assert np.array_equal(joined, b.words(7))

    def test_known_words(self):
        # frozen from the documented recurrence; guards the stream definition
        assert list(SplitMix64(0).words(3)) == [
            16294208416658607535,
            7960286522194355700,
            487617019471545679,
        ]

    def test_fold_seed_separates_labels(self):
        assert fold_seed(7, "a") != fold_seed(7, "b")
        assert fold_seed(7, "a") == fold_seed(7, "a")

    def test_normals_reshape_row_major(self):
        flat = SplitMix64(5).standard_normal((6,))
        square = SplitMix64(5).standard_normal((2, 3))
        assert np.array_equal(flat.reshape(2, 3), square)


class TestSynthBackbone:
    def test_same_seed_bitwise_identical(self, mini_cfg):
        a = synth_backbone(mini_cfg)
        b = synth_backbone(mini_cfg)
        assert a.equal_bitwise(b)

    def test_different_seed_differs(self, mini_cfg):
        a = synth_backbone(mini_cfg)
        b = synth_backbone(mini_cfg.replace(seed=mini_cfg.seed + 1))
        assert not a.equal_bitwise(b)

    def test_level_shapes(self, mini_cfg):
        pyr = synth_backbone(mini_cfg)
        assert pyr.levels == [3, 4, 5]
        assert pyr[3].shape == (1, 8, 32, 32)
        assert pyr[5].shape == (1, 16, 8, 8)

    def test_sample_mean_within_statistical_bound(self, desk_cfg):
        pyr = synth_backbone(desk_cfg)
        for i in pyr.levels:
            data = pyr[i].data
            bound = 5.0 / np.sqrt(data.size)  # 5 sigma / sqrt(n) for unit normals
            assert abs(data.mean()) < bound, f"level {i} mean {data.mean():.4f}"


class TestExtendStem:
    def test_adds_two_halved_levels(self, mini_cfg):
        store = stem_params(ParamStore(1), mini_cfg)
        out = extend_stem(synth_backbone(mini_cfg), store, mini_cfg)
        assert out.levels == [3, 4, 5, 6, 7]
        assert out[6].shape == (1, 16, 4, 4)
        assert out[7].shape == (1, 16, 2, 2)

    def test_zero_weights_give_bias_maps(self, mini_cfg):
        store = ParamStore(1)
        store.constant("stem/c6/weight", (16, 16, 3, 3), 0.0)
        store.constant("stem/c6/bias", (16,), 0.25)
        store.constant("stem/c7/weight", (16, 16, 3, 3), 0.0)
        store.constant("stem/c7/bias", (16,), -0.5)
        out = extend_stem(synth_backbone(mini_cfg), store, mini_cfg)
        assert np.array_equal(out[6].data, np.full((1, 16, 4, 4), 0.25))
        assert np.array_equal(out[7].data, np.full((1, 16, 2, 2), -0.5))

    def test_matches_conv_composition_oracle(self, mini_cfg):
        store = stem_params(ParamStore(3), mini_cfg)
        C = synth_backbone(mini_cfg)
        out = extend_stem(C, store, mini_cfg)
        c6 = conv2d(
            pad2d(C[5], 1, 0, 1, 0), store["stem/c6/weight"], store["stem/c6/bias"], stride=2
        )
        c7 = conv2d(
            pad2d(relu(c6), 1, 0, 1, 0), store["stem/c7/weight"], store["stem/c7/bias"], stride=2
        )
        assert np.array_equal(out[6].data, c6.data)
        assert np.array_equal(out[7].data, c7.data)

    def test_existing_level_rejected(self, mini_cfg):
        store = stem_params(ParamStore(1), mini_cfg)
        extended = extend_stem(synth_backbone(mini_cfg), store, mini_cfg)
        with pytest.raises(ValueError, match="highest present level"):
            extend_stem(extended, store, mini_cfg)


class TestContainer:
    def test_roundtrip_bitwise(self, mini_cfg, tmp_path):
        pyr = synth_backbone(mini_cfg)
        path = tmp_path / "p.fpz"
        save_pyramid(str(path), pyr, seed=mini_cfg.seed, config=mini_cfg.to_dict())
        assert load_pyramid(str(path)).equal_bitwise(pyr)

    def test_bad_magic(self, mini_cfg, tmp_path):
        path = tmp_path / "bad.fpz"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            load_pyramid(str(path))

    def test_malformed_header(self, mini_cfg, tmp_path):
        path = tmp_path / "hdr.fpz"
        junk = b"{not json"
        path.write_bytes(b"FPZ1" + len(junk).to_bytes(4, "little") + junk)
        with pytest.raises(HeaderError):
            load_pyramid(str(path))

    def test_truncated_blob(self, mini_cfg, tmp_path):
        blob = pyramid_bytes(synth_backbone(mini_cfg))
        path = tmp_path / "trunc.fpz"
        path.write_bytes(blob[:-16])
        with pytest.raises(BlobLengthError):
            load_pyramid(str(path))

    def test_trailing_bytes(self, mini_cfg, tmp_path):
        blob = pyramid_bytes(synth_backbone(mini_cfg))
        path = tmp_path / "extra.fpz"
        path.write_bytes(blob + b"\x00" * 8)
        with pytest.raises(BlobLengthError):
            load_pyramid(str(path))

    def test_header_with_wrong_extents(self, mini_cfg, tmp_path):
        # keep the element count (so blob lengths still line up) but declare
        # extents that break the halving invariant
        blob = pyramid_bytes(synth_backbone(mini_cfg))
        head_len = int.from_bytes(blob[4:8], "little")
        header = json.loads(blob[8 : 8 + head_len])
        assert header["shapes"]["4"] == [1, 12, 16, 16]
        header["shapes"]["4"] = [1, 8, 16, 24]  # 12*16*16 == 8*16*24 elements
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        path = tmp_path / "shape.fpz"
        path.write_bytes(b"FPZ1" + len(head).to_bytes(4, "little") + head + blob[8 + head_len :])
        with pytest.raises(PyramidError):
            load_pyramid(str(path))

    def test_pyramid_invariants_enforced(self):
        with pytest.raises(PyramidError, match="not consecutive"):
            FeaturePyramid({3: Tensor(np.zeros((1, 2, 8, 8))), 5: Tensor(np.zeros((1, 2, 2, 2)))})
        with pytest.raises(PyramidError, match="not half"):
            FeaturePyramid({3: Tensor(np.zeros((1, 2, 8, 8))), 4: Tensor(np.zeros((1, 2, 3, 3)))})
        with pytest.raises(PyramidError, match="batch"):
            FeaturePyramid({3: Tensor(np.zeros((1, 2, 8, 8))), 4: Tensor(np.zeros((2, 2, 4, 4)))})


class TestConfigValidation:
    def test_violations_enumerated(self):
        from rcnet.config import NeckConfig

        with pytest.raises(ValueError) as err:
            NeckConfig(
                l_min=3, l_max=6, d=30, backbone_channels=(8, 12), r=4, k=9,
                batch=0, base_resolution=(31, 32), seed=1,
            )
        message = str(err.value)
        for fragment in ["at least 5 levels", "divisible by 4*r", "k=9", "batch=0", "31"]:
            assert fragment in message
