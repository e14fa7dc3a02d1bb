import json

import numpy as np
import pytest

from stagestyle.errors import ValidationError
from stagestyle.metrics import (
    GramFeature,
    MetricBackends,
    ToyConvFeatures,
    ToyImageEmbedder,
    ToyTextEmbedder,
    all_pairs,
    cosine,
    evaluate_manifest,
    extract_patches,
    format_report,
    gram_matrix,
    image_score,
    patch_coordinates,
    read_manifest,
    style_score,
    style_score_from_grams,
    text_score,
    write_report,
)

from oracles import (
    cosine_bruteforce,
    gram_bruteforce,
    style_score_bruteforce,
    text_score_bruteforce,
)


def big_image(seed: int, size: int = 256) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, 1, (size // 8, size // 8, 3))
    return np.kron(base, np.ones((8, 8, 1)))


class TestAlignmentScores:
    def test_identical_embeddings(self):
        e = np.array([0.3, -1.2, 0.7])
        assert text_score(e, e) == 100.0
        assert image_score(e, e) == 100.0

    def test_opposite_clamped_to_zero(self):
        e = np.array([1.0, 2.0])
        assert text_score(e, -e) == 0.0

    def test_orthogonal(self):
        assert image_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_cosine(self):
        score = text_score(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert score == pytest.approx(100.0 / np.sqrt(2), abs=1e-4)

    def test_matches_bruteforce_on_random_fixtures(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a, b = rng.normal(size=24), rng.normal(size=24)
            assert abs(text_score(a, b) - text_score_bruteforce(a, b)) <= 1e-9
            assert abs(image_score(a, b) - max(100 * cosine_bruteforce(a, b), 0)) <= 1e-9

    def test_zero_vector_rejected(self):
        with pytest.raises(ValidationError):
            cosine(np.zeros(3), np.ones(3))


class TestPatches:
    def test_documented_coordinates_448(self):
        assert patch_coordinates(448, 448) == [(0, 0), (224, 0), (0, 224), (224, 224), (112, 112)]

    def test_exact_fit(self):
        assert patch_coordinates(224, 224) == [(0, 0)] * 5

    def test_undersized_is_hard_error(self):
        with pytest.raises(ValidationError):
            patch_coordinates(223, 448)
        with pytest.raises(ValidationError):
            extract_patches(np.zeros((100, 300, 3)))

    def test_patch_contents(self):
        image = np.arange(300 * 260 * 1, dtype=float).reshape(300, 260, 1)
        patches = extract_patches(image)
        for (x, y), patch in zip(patches.coordinates, patches.patches):
            assert patch.shape == (224, 224, 1)
            assert np.array_equal(patch, image[y : y + 224, x : x + 224])


class TestGram:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        fm = rng.normal(size=(4, 6, 5))
        assert np.abs(gram_matrix(fm) - gram_bruteforce(fm)).max() <= 1e-12

    def test_symmetric(self):
        fm = np.random.default_rng(2).normal(size=(5, 7, 7))
        gram = gram_matrix(fm)
        assert np.array_equal(gram, gram.T)


class TestStyleScore:
    def test_constant_image_against_itself_is_49(self):
        image = np.full((256, 256, 3), 0.6)
        assert style_score(image, image) == 49.0

    def test_orthogonal_grams_score_50(self):
        a = [GramFeature((np.array([1.0, 0.0]),)) for _ in range(5)]
        b = [GramFeature((np.array([0.0, 1.0]),)) for _ in range(5)]
        assert style_score_from_grams(a, b) == 50.0

    def test_purity(self):
        image, style = big_image(3), big_image(4)
        assert style_score(image, style) == style_score(image, style)

    def test_swap_symmetric(self):
        image, style = big_image(5), big_image(6)
        forward = style_score(image, style)
        backward = style_score(style, image)
        assert abs(forward - backward) < 1e-12

    def test_matches_bruteforce(self):
        extractor = ToyConvFeatures(0)
        image, style = big_image(7, 224), big_image(8, 224)
        ours = style_score(image, style, extractor)
        ref = style_score_bruteforce(image, style, extractor)
        assert abs(ours - ref) <= 1e-9

    def test_pair_set_is_all_25(self):
        assert len(all_pairs()) == 25
        assert len(set(all_pairs())) == 25

    def test_layer_count_mismatch_rejected(self):
        a = [GramFeature((np.ones(2),))] * 5
        b = [GramFeature((np.ones(2), np.ones(2)))] * 5
        with pytest.raises(ValidationError):
            style_score_from_grams(a, b)


class TestToyEmbedders:
    def test_image_embedder_deterministic(self):
        embedder = ToyImageEmbedder(0)
        image = big_image(9)
        assert np.array_equal(embedder.embed_image(image).values, embedder.embed_image(image).values)

    def test_text_embedder_order_insensitive_but_word_sensitive(self):
        embedder = ToyTextEmbedder(0)
        a = embedder.embed_text("a painting of a house").values
        b = embedder.embed_text("a painting of a boat").values
        assert not np.array_equal(a, b)
        with pytest.raises(ValidationError):
            embedder.embed_text("   ")

    def test_image_embedder_handles_small_and_gray(self):
        embedder = ToyImageEmbedder(0)
        small = np.random.default_rng(0).uniform(0, 1, (32, 32, 3))
        gray = small.mean(axis=2)
        assert embedder.embed_image(small).values.shape == (32,)
        assert embedder.embed_image(gray).values.shape == (32,)


class TestManifest:
    def _write_png(self, path, image):
        from PIL import Image

        Image.fromarray((image * 255).astype(np.uint8)).save(path)

    def test_empty_manifest(self, tmp_path):
        manifest = tmp_path / "empty.jsonl"
        manifest.write_text("", encoding="utf-8")
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        assert table.rows == ()
        assert table.means() == {}

    def test_duplicate_rows_identical_scores(self, tmp_path):
        gen, sty = tmp_path / "gen.png", tmp_path / "sty.png"
        self._write_png(gen, big_image(1))
        self._write_png(sty, big_image(2))
        manifest = tmp_path / "m.jsonl"
        row = json.dumps({"image_path": str(gen), "prompt": "a painting of a tree", "style_path": str(sty)})
        manifest.write_text(row + "\n" + row + "\n", encoding="utf-8")
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        assert len(table.rows) == 2
        first, second = table.rows
        assert (first.text, first.image, first.style) == (second.text, second.image, second.style)

    def test_means_match_recomputation(self, tmp_path):
        paths = []
        for i in range(3):
            p = tmp_path / f"img{i}.png"
            self._write_png(p, big_image(10 + i))
            paths.append(p)
        manifest = tmp_path / "m.jsonl"
        lines = [
            json.dumps({"image_path": str(paths[i]), "prompt": f"painting number {i}", "style_path": str(paths[(i + 1) % 3])})
            for i in range(3)
        ]
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        means = table.means()
        for key in ("text", "image", "style"):
            values = [getattr(r, key) for r in table.rows]
            assert means[key] == pytest.approx(sum(values) / 3)

    def test_missing_file_recorded_not_fatal(self, tmp_path):
        gen = tmp_path / "gen.png"
        self._write_png(gen, big_image(1))
        manifest = tmp_path / "m.jsonl"
        lines = [
            json.dumps({"image_path": str(tmp_path / "nope.png"), "prompt": "x y", "style_path": str(gen)}),
            json.dumps({"image_path": str(gen), "prompt": "a tree", "style_path": str(gen)}),
        ]
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        assert table.rows[0].error is not None
        assert table.rows[1].error is None
        assert table.rows[1].image == pytest.approx(100.0, abs=1e-9)  # same file on both sides

    def test_small_image_records_style_error_keeps_alignment(self, tmp_path):
        gen = tmp_path / "small.png"
        self._write_png(gen, np.random.default_rng(0).uniform(0, 1, (64, 64, 3)))
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(
            json.dumps({"image_path": str(gen), "prompt": "tiny art", "style_path": str(gen)}) + "\n",
            encoding="utf-8",
        )
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        row = table.rows[0]
        assert row.error is not None and "style_score" in row.error
        assert row.text is not None and row.image == pytest.approx(100.0, abs=1e-9)

    def test_report_roundtrip(self, tmp_path):
        gen = tmp_path / "gen.png"
        self._write_png(gen, big_image(1))
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(
            json.dumps({"image_path": str(gen), "prompt": "a tree", "style_path": str(gen)}) + "\n",
            encoding="utf-8",
        )
        table = evaluate_manifest(read_manifest(manifest), MetricBackends.toy())
        text = format_report(table)
        assert "MEAN" in text and str(gen) in text
        report = tmp_path / "report.json"
        write_report(table, report)
        doc = json.loads(report.read_text(encoding="utf-8"))
        assert doc["rows"][0]["image_score"] == pytest.approx(100.0, abs=1e-9)

    def test_bad_manifest_line(self, tmp_path):
        manifest = tmp_path / "bad.jsonl"
        manifest.write_text('{"image_path": "x"}\n', encoding="utf-8")
        with pytest.raises(ValidationError):
            read_manifest(manifest)
