"""Command-line surface: every subcommand end to end on tiny inputs."""

import numpy as np

from srforge.checkpoint import save_checkpoint
from srforge.cli import main
from srforge.imageio import list_images, read_image, write_image
from srforge.networks import DiscriminatorConfig, Generator, GeneratorConfig
from srforge.rng import SeededRng
from srforge.tensor import Tensor
from srforge.training import TrainConfig, gather_checkpoint_tensors, make_train_state


def _write_pngs(directory, n=4, hw=64, seed=5):
    directory.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(seed)
    for i in range(n):
        arr = rng.uniforms(3 * hw * hw).reshape(1, 3, hw, hw).astype(np.float32)
        write_image(Tensor(arr), directory / f"im{i}.png")


def _toy_checkpoint(path, scale=4):
    gen_cfg = GeneratorConfig(3, 3, 8, 1, 4, scale, 0.2)
    gen = Generator(gen_cfg, seed=3)
    state = make_train_state(gen, None, TrainConfig())
    save_checkpoint(gather_checkpoint_tensors(gen, None, state),
                    {"format_version": 1, "iteration": 0, "adam_t_g": 0, "adam_t_d": 0,
                     "generator_config": gen_cfg.to_dict(),
                     "discriminator_config": DiscriminatorConfig(3, 8).to_dict()},
                    path)
    return path


class TestPrepare:
    def test_fivefold(self, tmp_path, capsys):
        src = tmp_path / "src"
        _write_pngs(src, n=4)
        code = main(["prepare", "--src", str(src), "--dst", str(tmp_path / "dst"),
                     "--scales", "1,0.75,0.5,0.333,0.25"])
        assert code == 0
        outputs = list_images(tmp_path / "dst")
        assert len(outputs) == 20
        assert "4 images -> 20 outputs" in capsys.readouterr().out

    def test_missing_source_fails(self, tmp_path):
        code = main(["prepare", "--src", str(tmp_path / "nope"), "--dst", str(tmp_path / "d")])
        assert code != 0

    def test_idempotent_outputs(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=2, hw=40)
        for out in ("m1", "m2"):
            assert main(["prepare", "--src", str(src), "--dst", str(tmp_path / out)]) == 0
        d1, d2 = tmp_path / "m1", tmp_path / "m2"
        for p in sorted(d1.iterdir()):
            assert p.read_bytes() == (d2 / p.name).read_bytes(), p.name


class TestDegrade:
    def test_idempotent_given_seed(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=2)
        for out in ("d1", "d2"):
            code = main(["degrade", "--src", str(src), "--dst", str(tmp_path / out),
                         "--scale", "4", "--seed", "11", "--threads", "2"])
            assert code == 0
        for name in ("im0.png", "im1.png", "records.jsonl"):
            assert ((tmp_path / "d1" / name).read_bytes()
                    == (tmp_path / "d2" / name).read_bytes())

    def test_output_scale(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=1, hw=64)
        main(["degrade", "--src", str(src), "--dst", str(tmp_path / "d"),
              "--scale", "2", "--seed", "1"])
        out = read_image(tmp_path / "d" / "im0.png")
        assert out.shape[2:] == (32, 32)

    def test_records_one_line_per_image(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=3)
        main(["degrade", "--src", str(src), "--dst", str(tmp_path / "d"), "--seed", "2"])
        lines = (tmp_path / "d" / "records.jsonl").read_text(encoding="utf-8").strip().split("\n")
        assert len(lines) == 3
        assert all("\t" in line for line in lines)

    def test_input_directory_untouched(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=2)
        before = {p.name: p.read_bytes() for p in src.iterdir()}
        main(["degrade", "--src", str(src), "--dst", str(tmp_path / "d"), "--seed", "3"])
        assert before == {p.name: p.read_bytes() for p in src.iterdir()}

    def test_config_file_respected(self, tmp_path):
        """A config forcing quality-100 JPEG and no noise changes the output."""
        src = tmp_path / "src"
        _write_pngs(src, n=1, hw=64)
        cfg = tmp_path / "mild.ini"
        cfg.write_text("\n".join([
            "[stage1.blur]", "skip_prob = 1.0",
            "[stage1.resize]", "skip_prob = 1.0",
            "[stage1.noise]", "skip_prob = 1.0",
            "[stage1.jpeg]", "quality_min = 100", "quality_max = 100",
            "[stage2.blur]", "skip_prob = 1.0",
            "[stage2.resize]", "skip_prob = 1.0",
            "[stage2.noise]", "skip_prob = 1.0",
            "[stage2.jpeg]", "quality_min = 100", "quality_max = 100",
            "[final]", "sinc_prob = 0.0",
        ]) + "\n", encoding="utf-8")
        main(["degrade", "--src", str(src), "--dst", str(tmp_path / "mild"),
              "--scale", "2", "--seed", "7", "--config", str(cfg)])
        main(["degrade", "--src", str(src), "--dst", str(tmp_path / "harsh"),
              "--scale", "2", "--seed", "7"])
        mild = read_image(tmp_path / "mild" / "im0.png")
        harsh = read_image(tmp_path / "harsh" / "im0.png")
        assert not np.array_equal(mild.data, harsh.data)
        from srforge.resample import resize
        reference = resize(read_image(src / "im0.png"), 32, 32, "bicubic")
        mild_err = float(np.abs(mild.data - reference.data).mean())
        harsh_err = float(np.abs(harsh.data - reference.data).mean())
        assert mild_err < harsh_err


class TestUpscale:
    def test_scale4_dimensions(self, tmp_path, capsys):
        src = tmp_path / "src"
        _write_pngs(src, n=1, hw=64)
        ckpt = _toy_checkpoint(tmp_path / "g.srfg", scale=4)
        code = main(["upscale", "--checkpoint", str(ckpt), "--src", str(src),
                     "--dst", str(tmp_path / "sr"), "--scale", "4"])
        assert code == 0
        out = read_image(tmp_path / "sr" / "im0.png")
        assert out.shape[2:] == (256, 256)

    def test_scale_mismatch_fails(self, tmp_path):
        src = tmp_path / "src"
        _write_pngs(src, n=1)
        ckpt = _toy_checkpoint(tmp_path / "g.srfg", scale=4)
        code = main(["upscale", "--checkpoint", str(ckpt), "--src", str(src),
                     "--dst", str(tmp_path / "sr"), "--scale", "2"])
        assert code != 0


class TestEvaluate:
    def test_drive_report_shape(self, tmp_path, capsys):
        gt = tmp_path / "gt"
        _write_pngs(gt, n=3, hw=64)
        out = tmp_path / "report.txt"
        code = main(["evaluate", "--protocol", "drive", "--gt", str(gt), "--out", str(out)])
        assert code == 0
        lines = out.read_text(encoding="utf-8").strip().split("\n")
        headers = [ln for ln in lines if ln.startswith("#")]
        rows = [ln for ln in lines if not ln.startswith("#")]
        assert any("protocol\tdrive" in h for h in headers)
        assert rows[0] == "image\tpsnr\tssim"
        assert len(rows) == 1 + 3 + 1
        assert rows[-1].startswith("MEAN\t")

    def test_deterministic_reports(self, tmp_path):
        gt = tmp_path / "gt"
        _write_pngs(gt, n=2, hw=64)
        main(["evaluate", "--protocol", "nih", "--gt", str(gt), "--out", str(tmp_path / "a.txt")])
        main(["evaluate", "--protocol", "nih", "--gt", str(gt), "--out", str(tmp_path / "b.txt")])
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_model_checkpoint_evaluation(self, tmp_path):
        gt = tmp_path / "gt"
        _write_pngs(gt, n=2, hw=32)
        ckpt = _toy_checkpoint(tmp_path / "g.srfg", scale=2)
        code = main(["evaluate", "--protocol", "custom", "--scale", "2", "--gt", str(gt),
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "r.txt")])
        assert code == 0


class TestInspect:
    def test_manifest_printed(self, tmp_path, capsys):
        ckpt = _toy_checkpoint(tmp_path / "g.srfg")
        code = main(["inspect-checkpoint", "--checkpoint", str(ckpt)])
        out = capsys.readouterr().out
        assert code == 0
        assert "generator.conv_first.weight" in out
        assert "generator_config" in out

    def test_bad_file_fails(self, tmp_path):
        (tmp_path / "junk.srfg").write_bytes(b"garbage")
        assert main(["inspect-checkpoint", "--checkpoint", str(tmp_path / "junk.srfg")]) != 0


class TestArgumentHandling:
    def test_unknown_command(self):
        assert main(["frobnicate"]) != 0

    def test_unknown_flag(self, tmp_path):
        assert main(["prepare", "--src", str(tmp_path), "--dst", str(tmp_path),
                     "--bogus-flag", "1"]) != 0

    def test_version_flag(self):
        assert main(["--version"]) == 0


class TestFinetuneCommand:
    def test_short_run(self, tmp_path, capsys):
        data = tmp_path / "data"
        _write_pngs(data, n=2, hw=48)
        ckpt = _toy_checkpoint(tmp_path / "init.srfg", scale=2)
        code = main(["finetune", "--checkpoint-in", str(ckpt),
                     "--checkpoint-out", str(tmp_path / "out.srfg"),
                     "--data", str(data), "--iterations", "2", "--batch-size", "1",
                     "--patch-size", "32", "--scale", "2", "--seed", "4",
                     "--log", str(tmp_path / "train.log")])
        assert code == 0
        assert (tmp_path / "out.srfg").exists()
        log_lines = (tmp_path / "train.log").read_text().strip().split("\n")
        assert len(log_lines) == 2
        assert len(log_lines[0].split("\t")) == 6
        assert "2 iterations" in capsys.readouterr().out
