import hashlib
import io
import json

import numpy as np
import pytest
from PIL import Image

from stagestyle.cli import main, parse_assignment
from stagestyle.errors import IncompleteAssignmentError, ValidationError
from stagestyle import persistence

from conftest import make_style_image


def write_png(path, image):
    Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)


@pytest.fixture()
def style_png(tmp_path):
    path = tmp_path / "waves.png"
    write_png(path, make_style_image("waves"))
    return path


def train_args(style_png, out, steps=25, extra=()):
    return [
        "train",
        "--image", str(style_png),
        "--caption-inline", "swirling bands of color",
        "--out", str(out),
        "--steps", str(steps),
        "--stages", "6",
        "--seed", "0",
        *extra,
    ]


class TestParseAssignment:
    def test_two_ranges(self):
        assert parse_assignment("0-2:A,3-5:B", 6) == {0: "A", 1: "A", 2: "A", 3: "B", 4: "B", 5: "B"}

    def test_identity(self):
        assert parse_assignment("0-5:A", 6) == {k: "A" for k in range(6)}

    def test_single_stage_fragment(self):
        assert parse_assignment("0-1:A,2:B,3-5:C", 6)[2] == "B"

    def test_incomplete(self):
        with pytest.raises(IncompleteAssignmentError):
            parse_assignment("0-1:A", 6)

    def test_overlap(self):
        with pytest.raises(IncompleteAssignmentError):
            parse_assignment("0-3:A,2-5:B", 6)

    def test_malformed(self):
        with pytest.raises(ValidationError):
            parse_assignment("0..2=A", 6)

    def test_out_of_range(self):
        with pytest.raises(IncompleteAssignmentError):
            parse_assignment("0-6:A", 6)


class TestTrainCommand:
    def test_writes_loadable_checkpoint(self, tmp_path, style_png, capsys):
        out = tmp_path / "style.json"
        log = tmp_path / "train.jsonl"
        code = main(train_args(style_png, out, extra=["--log", str(log)]))
        assert code == 0
        checkpoint = persistence.load(out)
        assert checkpoint.schedule.num_stages == 6
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["steps"] == 25
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(records) == 25
        assert all({"step", "t", "stage", "loss"} <= set(r) for r in records)

    def test_caption_sidecar_flow(self, tmp_path, style_png):
        sidecar = tmp_path / "waves.png.caption.txt"
        sidecar.write_text("# auto: bands\n# source: human\nswirling bands of color\n", encoding="utf-8")
        out = tmp_path / "style.json"
        code = main(["train", "--image", str(style_png), "--out", str(out), "--steps", "5"])
        assert code == 0
        assert persistence.load(out).metadata["caption_sources"]["waves.png"] == "human"

    def test_missing_image_is_io_error(self, tmp_path, capsys):
        code = main(train_args(tmp_path / "missing.png", tmp_path / "out.json"))
        assert code == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert "missing.png" in err["message"]

    def test_zero_stages_is_config_error(self, tmp_path, style_png, capsys):
        code = main(train_args(style_png, tmp_path / "out.json", extra=["--stages", "0"]))
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip())["error"] == "validation"

    def test_missing_sidecar_is_io_error(self, tmp_path, style_png):
        code = main(["train", "--image", str(style_png), "--out", str(tmp_path / "o.json"), "--steps", "1"])
        assert code == 3

    def test_config_checked_before_io(self, tmp_path, capsys):
        # bad config + missing image: the config error must win (fail fast)
        code = main(train_args(tmp_path / "missing.png", tmp_path / "out.json", extra=["--stages", "0"]))
        assert code == 2

    def test_numeric_failure_maps_to_exit_4(self, tmp_path, style_png, capsys, monkeypatch):
        from stagestyle.errors import NumericError

        def explode(*args, **kwargs):
            raise NumericError("non-finite loss at step=0 t=3 stage=0")

        monkeypatch.setattr("stagestyle.cli.trainer.train", explode)
        code = main(train_args(style_png, tmp_path / "out.json"))
        assert code == 4
        assert json.loads(capsys.readouterr().err.strip())["error"] == "numeric"

    def test_quickstart_under_60s(self, tmp_path, style_png):
        import time

        out = tmp_path / "style.json"
        start = time.time()
        assert main(train_args(style_png, out, steps=200)) == 0
        assert time.time() - start < 60.0
        assert persistence.load(out).metadata["config"]["steps"] == 200


class TestSampleCommand:
    def test_deterministic_outputs(self, tmp_path, style_png):
        ckpt = tmp_path / "style.json"
        assert main(train_args(style_png, ckpt)) == 0
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            code = main([
                "sample", "--checkpoint", str(ckpt), "--prompt-opening", "a painting",
                "--prompt-context", "of a quiet harbor", "--steps", "20", "--seed", "11",
                "--lambda-s", "1.0", "--lambda-c", "0.5", "--out", str(out),
            ])
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        sidecar = json.loads((tmp_path / "a.png.json").read_text())
        assert sidecar["scales"]["lambda_s"] == 1.0
        assert sidecar["seed"] == 11

    def test_corrupt_checkpoint_is_io_error(self, tmp_path, style_png, capsys):
        ckpt = tmp_path / "style.json"
        assert main(train_args(style_png, ckpt, steps=5)) == 0
        raw = bytearray(ckpt.read_bytes())
        anchor = raw.find(b'"vectors"')
        offset = raw.find(b'"', anchor + 10) + 3
        raw[offset] = ord("A") if raw[offset] != ord("A") else ord("B")
        ckpt.write_bytes(bytes(raw))
        code = main(["sample", "--checkpoint", str(ckpt), "--out", str(tmp_path / "x.png")])
        assert code == 3
        assert json.loads(capsys.readouterr().err.strip())["type"] == "CheckpointIntegrityError"


class TestTransferCommand:
    def test_transfer_with_structure(self, tmp_path, style_png):
        ckpt = tmp_path / "style.json"
        assert main(train_args(style_png, ckpt)) == 0
        content = tmp_path / "content.png"
        write_png(content, make_style_image("grid"))
        out = tmp_path / "styled.png"
        code = main([
            "transfer", "--checkpoint", str(ckpt), "--content", str(content),
            "--strength", "0.6", "--structure", "depth", "--seed", "2", "--out", str(out),
        ])
        assert code == 0
        sidecar = json.loads((tmp_path / "styled.png.json").read_text())
        assert sidecar["structure_modality"] == "depth"
        assert sidecar["strength"] == 0.6
        assert out.exists()


class TestMixCommand:
    def test_mix_and_identity(self, tmp_path, style_png):
        other_png = tmp_path / "blobs.png"
        write_png(other_png, make_style_image("blobs"))
        ckpt_a, ckpt_b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(train_args(style_png, ckpt_a)) == 0
        assert main([
            "train", "--image", str(other_png), "--caption-inline", "soft shapes",
            "--out", str(ckpt_b), "--steps", "25", "--stages", "6", "--seed", "1",
        ]) == 0
        mixed_path = tmp_path / "mixed.json"
        code = main(["mix", f"A={ckpt_a}", f"B={ckpt_b}", "--assign", "0-2:A,3-5:B", "--out", str(mixed_path)])
        assert code == 0
        a, b, mixed = persistence.load(ckpt_a), persistence.load(ckpt_b), persistence.load(mixed_path)
        for k in range(3):
            assert np.array_equal(mixed.vectors[k], a.vectors[k])
        for k in range(3, 6):
            assert np.array_equal(mixed.vectors[k], b.vectors[k])
        assert mixed.metadata["assignment"]["0"] == "A"

        identity = tmp_path / "ident.json"
        assert main(["mix", f"A={ckpt_a}", f"B={ckpt_b}", "--assign", "0-5:A", "--out", str(identity)]) == 0
        assert np.array_equal(persistence.load(identity).vectors, a.vectors)

    def test_incomplete_assignment_fails(self, tmp_path, style_png, capsys):
        ckpt = tmp_path / "a.json"
        assert main(train_args(style_png, ckpt, steps=5)) == 0
        code = main(["mix", f"A={ckpt}", f"B={ckpt}", "--assign", "0-1:A", "--out", str(tmp_path / "m.json")])
        assert code == 2


class TestCaptionCommand:
    def test_fixture_flow_with_refinement(self, tmp_path, style_png, capsys, monkeypatch):
        digest = hashlib.sha256(style_png.read_bytes()).hexdigest()
        fixtures = tmp_path / "fixtures.json"
        fixtures.write_text(json.dumps({digest: "bands of color"}), encoding="utf-8")
        monkeypatch.setattr("sys.stdin", io.StringIO("bands of color over a dark sea\n"))
        monkeypatch.setattr("builtins.input", lambda prompt="": "bands of color over a dark sea")
        code = main(["caption", str(style_png), "--fixtures", str(fixtures)])
        assert code == 0
        sidecar = tmp_path / "waves.png.caption.txt"
        text = sidecar.read_text(encoding="utf-8")
        assert "# auto: bands of color" in text
        assert "# source: human" in text
        assert text.strip().splitlines()[-1] == "bands of color over a dark sea"

    def test_no_input_keeps_auto(self, tmp_path, style_png):
        digest = hashlib.sha256(style_png.read_bytes()).hexdigest()
        fixtures = tmp_path / "fixtures.json"
        fixtures.write_text(json.dumps({digest: "bands of color"}), encoding="utf-8")
        assert main(["caption", str(style_png), "--fixtures", str(fixtures), "--no-input"]) == 0
        from stagestyle.prompts import read_caption_sidecar

        record = read_caption_sidecar(tmp_path / "waves.png.caption.txt")
        assert record.source == "auto"
        assert record.effective_caption == "bands of color"


class TestEvalCommand:
    def test_scores_manifest(self, tmp_path, capsys):
        big = np.kron(np.random.default_rng(0).uniform(0, 1, (32, 32, 3)), np.ones((8, 8, 1)))
        gen, sty = tmp_path / "gen.png", tmp_path / "sty.png"
        write_png(gen, big)
        write_png(sty, big)
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            json.dumps({"image_path": str(gen), "prompt": "a painting", "style_path": str(sty)}) + "\n",
            encoding="utf-8",
        )
        report = tmp_path / "report.json"
        code = main(["eval", "--manifest", str(manifest), "--report", str(report)])
        assert code == 0
        doc = json.loads(report.read_text(encoding="utf-8"))
        assert doc["rows"][0]["image_score"] == pytest.approx(100.0, abs=1e-9)
        assert "MEAN" in capsys.readouterr().out


class TestConfigFile:
    def test_config_presets_flags(self, tmp_path, style_png, capsys):
        config = tmp_path / "run.ini"
        config.write_text("[train]\nsteps = 7\nopening = a sketch\n", encoding="utf-8")
        out = tmp_path / "style.json"
        code = main([
            "--config", str(config), "train",
            "--image", str(style_png), "--caption-inline", "x", "--out", str(out),
        ])
        assert code == 0
        meta = persistence.load(out).metadata
        assert meta["config"]["steps"] == 7
        assert meta["config"]["opening"] == "a sketch"

    def test_flags_override_config(self, tmp_path, style_png):
        config = tmp_path / "run.ini"
        config.write_text("[train]\nsteps = 7\n", encoding="utf-8")
        out = tmp_path / "style.json"
        code = main([
            "--config", str(config), "train", "--steps", "3",
            "--image", str(style_png), "--caption-inline", "x", "--out", str(out),
        ])
        assert code == 0
        assert persistence.load(out).metadata["config"]["steps"] == 3

    def test_unknown_config_key(self, tmp_path, style_png, capsys):
        config = tmp_path / "run.ini"
        config.write_text("[train]\nbogus = 1\n", encoding="utf-8")
        code = main(["--config", str(config), "train", "--image", str(style_png),
                     "--caption-inline", "x", "--out", str(tmp_path / "o.json")])
        assert code == 2
