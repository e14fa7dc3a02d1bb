import numpy as np
import pytest

from stagestyle.errors import UnsupportedModalityError, ValidationError
from stagestyle.sampler import GuidanceScales
from stagestyle.styletransfer import (
    StructureCondition,
    TransferConfig,
    extract_structure,
    invert_content,
    transfer,
)

from conftest import make_style_image
from oracles import pseudo_depth_bruteforce


class TestInvertContent:
    def test_strength_rounding(self, backend):
        content = make_style_image("blobs")
        _, t = invert_content(backend, content, 0.5, seed=0)
        assert t == 25  # 0.5 * 49 = 24.5, round half up

    def test_full_strength(self, backend):
        _, t = invert_content(backend, make_style_image("blobs"), 1.0, seed=0)
        assert t == 49

    def test_tiny_strength_hits_zero(self, backend):
        z_t, t = invert_content(backend, make_style_image("blobs"), 0.005, seed=0)
        assert t == 0
        z0 = backend.codec.encode(make_style_image("blobs"))
        assert np.array_equal(z_t.values, z0.values)  # alpha_bar_0 == 1

    def test_invalid_strength(self, backend):
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                invert_content(backend, make_style_image("blobs"), bad, seed=0)
            with pytest.raises(ValidationError):
                TransferConfig(strength=bad)


class TestStructureExtractor:
    def test_constant_image_gives_zero_depth(self):
        condition = extract_structure(None, np.full((32, 32, 3), 0.4), "depth")
        assert condition.modality == "depth"
        assert np.array_equal(condition.features, np.zeros((16, 16)))

    def test_deterministic(self):
        image = make_style_image("grid")
        a = extract_structure(None, image, "depth")
        b = extract_structure(None, image, "depth")
        assert np.array_equal(a.features, b.features)

    def test_step_edge_localized(self):
        image = np.zeros((32, 32, 3))
        image[:, 16:] = 1.0  # vertical step between columns 15 and 16
        features = extract_structure(None, image, "depth").features
        nonzero_cols = sorted(set(np.nonzero(features)[1]))
        assert nonzero_cols == [7, 8]  # central differences around the pooled boundary

    def test_matches_bruteforce(self):
        image = make_style_image("waves")
        ours = extract_structure(None, image, "depth").features
        ref = pseudo_depth_bruteforce(image, (16, 16))
        assert np.abs(ours - ref).max() < 1e-12

    def test_edge_and_segmentation_supported(self):
        image = make_style_image("grid")
        edge = extract_structure(None, image, "edge").features
        seg = extract_structure(None, image, "segmentation").features
        assert set(np.unique(edge)) <= {0.0, 1.0}
        assert seg.shape == (16, 16)

    def test_unsupported_modality(self):
        with pytest.raises(UnsupportedModalityError):
            extract_structure(None, make_style_image(), "normals")
        with pytest.raises(UnsupportedModalityError):
            extract_structure(None, make_style_image(), "none")

    def test_custom_extractor_support_check(self):
        class DepthOnly:
            def supports(self, modality):
                return modality == "depth"

            def extract(self, image, modality):
                return np.zeros((16, 16))

        with pytest.raises(UnsupportedModalityError):
            extract_structure(DepthOnly(), make_style_image(), "edge")


class TestTransfer:
    def test_degenerate_strength_is_codec_roundtrip(self, backend, quick_checkpoint):
        content = make_style_image("blobs")
        config = TransferConfig(strength=0.005, seed=0)
        result = transfer(backend, quick_checkpoint, content, config, structure="none")
        roundtrip = backend.codec.decode(backend.codec.encode(content))
        assert result.start_timestep == 0
        assert np.array_equal(result.image, roundtrip)

    def test_deterministic(self, backend, quick_checkpoint):
        content = make_style_image("grid")
        config = TransferConfig(strength=0.6, seed=5)
        a = transfer(backend, quick_checkpoint, content, config, structure="depth")
        b = transfer(backend, quick_checkpoint, content, config, structure="depth")
        assert np.array_equal(a.image, b.image)

    def test_structure_condition_has_effect(self, backend, quick_checkpoint):
        content = make_style_image("grid")
        config = TransferConfig(strength=0.6, seed=5)
        with_depth = transfer(backend, quick_checkpoint, content, config, structure="depth")
        without = transfer(backend, quick_checkpoint, content, config, structure="none")
        assert np.abs(with_depth.image - without.image).sum() > 0

    def test_prebuilt_condition_accepted(self, backend, quick_checkpoint):
        content = make_style_image("grid")
        condition = StructureCondition("depth", np.ones((16, 16)))
        result = transfer(
            backend, quick_checkpoint, content, TransferConfig(strength=0.4, seed=1), structure=condition
        )
        assert result.metadata["structure_modality"] == "depth"

    def test_metadata_provenance(self, backend, quick_checkpoint):
        content = make_style_image("waves")
        config = TransferConfig(strength=0.3, scales=GuidanceScales(2.0, 1.0, 0.5), seed=7)
        result = transfer(backend, quick_checkpoint, content, config, structure="depth")
        assert result.metadata["structure_modality"] == "depth"
        assert result.metadata["strength"] == 0.3
        assert result.metadata["scales"]["lambda_s"] == 1.0
        assert result.metadata["start_timestep"] == result.start_timestep

    def test_trace_covers_ladder(self, backend, quick_checkpoint):
        content = make_style_image("waves")
        result = transfer(
            backend,
            quick_checkpoint,
            content,
            TransferConfig(strength=0.2, seed=0),
            structure="none",
            collect_trace=True,
        )
        expected_t = list(range(result.start_timestep, -1, -1))
        assert [s.t for s in result.trace] == expected_t
