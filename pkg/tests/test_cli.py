import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from s4dm.cli import main
from s4dm.errors import FormatError
from s4dm.fileio import read_f32r, read_manifest, write_f32r, write_pgm
from s4dm.kvfile import format_keyvalue, parse_keyvalue
from s4dm.network import ArchSpec, init_params, load_checkpoint, save_checkpoint
from s4dm.speckle import make_synthetic_targets
from s4dm.transform import TransformSpec


class TestF32R:
    def test_roundtrip_rounds_once(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(7, 11)) * 1e3
        write_f32r(tmp_path / "a.f32r", x)
        y = read_f32r(tmp_path / "a.f32r")
        assert y.shape == (7, 11)
        assert y.tobytes() == x.astype(np.float32).astype(np.float64).tobytes()
        write_f32r(tmp_path / "b.f32r", y)
        assert (tmp_path / "a.f32r").read_bytes() == (tmp_path / "b.f32r").read_bytes()

    def test_header_layout(self, tmp_path):
        write_f32r(tmp_path / "a.f32r", np.ones((3, 5)))
        data = (tmp_path / "a.f32r").read_bytes()
        assert data[:4] == b"F32R"
        assert int.from_bytes(data[4:8], "little") == 5 and int.from_bytes(data[8:12], "little") == 3
        assert len(data) == 12 + 4 * 15

    def test_bad_files(self, tmp_path):
        f = tmp_path / "a.f32r"
        write_f32r(f, np.ones((4, 4)))
        f.write_bytes(f.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_f32r(f)
        f.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(FormatError):
            read_f32r(f)
        with pytest.raises(FormatError):
            write_f32r(f, np.array([[1.0, np.inf]]))
        with pytest.raises(FormatError):
            write_f32r(f, np.array([[1e300]]))


class TestSmallFormats:
    def test_manifest(self, tmp_path):
        (tmp_path / "m.txt").write_text("# images\n\na.f32r\n/abs/b.f32r\n")
        assert read_manifest(tmp_path / "m.txt") == [tmp_path / "a.f32r", Path("/abs/b.f32r")]

    def test_keyvalue(self):
        text = format_keyvalue({"a": 0.1, "b": 3, "c": "unit"})
        kv = parse_keyvalue(text)
        assert float(kv["a"]) == 0.1 and kv["b"] == "3" and kv["c"] == "unit"
        with pytest.raises(FormatError):
            parse_keyvalue("a = 1\na = 2\n")
        with pytest.raises(FormatError):
            parse_keyvalue("no equals sign\n")

    def test_pgm(self, tmp_path):
        write_pgm(tmp_path / "p.pgm", np.array([[0.0, 1.0], [2.0, 4.0]]))
        data = (tmp_path / "p.pgm").read_bytes()
        assert data.startswith(b"P5\n2 2\n65535\n")
        assert np.frombuffer(data[-8:], ">u2").tolist() == [0, 16384, 32768, 65535]


@pytest.fixture
def scene(tmp_path):
    clean = np.full((64, 64), 100.0)
    write_f32r(tmp_path / "clean.f32r", clean)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestSimulate:
    def test_constant_enl(self, scene, capsys):
        assert run("simulate", "--clean", scene / "clean.f32r", "--looks", 4, "--seed", 3, "--out", scene / "n.f32r",
                   "--pgm", scene / "n.pgm") == 0
        x = read_f32r(scene / "n.f32r")
        assert abs((x.mean() / x.std()) ** 2 - 4) < 0.3
        assert (scene / "n.pgm").exists()

    def test_zero_pixel(self, scene, capsys):
        bad = np.full((8, 8), 1.0)
        bad[2, 2] = 0
        write_f32r(scene / "bad.f32r", bad)
        assert run("simulate", "--clean", scene / "bad.f32r", "--looks", 4, "--out", scene / "o.f32r") == 2
        assert "non-positive amplitude" in capsys.readouterr().err

    def test_missing_input(self, scene, capsys):
        assert run("simulate", "--clean", scene / "nope.f32r", "--looks", 4, "--out", scene / "o.f32r") == 2

    def test_usage_errors(self, scene, capsys):
        with pytest.raises(SystemExit) as e:
            run("simulate", "--looks", 4)
        assert e.value.code == 1
        with pytest.raises(SystemExit) as e:
            run("frobnicate")
        assert e.value.code == 1


class TestFitTransform:
    def test_single_look(self, scene, capsys):
        assert run("fit-transform", "--looks", 1, "--seed", 2, "--out", scene / "t.txt") == 0
        out = capsys.readouterr().out
        skew = float(next(l for l in out.splitlines() if l.startswith("skewness")).split("=")[1])
        assert abs(skew) <= 0.2 * 1.14
        spec = TransformSpec.load(scene / "t.txt")
        assert spec.looks == 1.0 and spec.mc_samples == 10**6

    def test_too_few_samples(self, scene, capsys):
        assert run("fit-transform", "--looks", 1, "--mc-samples", 10, "--out", scene / "t.txt") == 1

    def test_anchor_from_manifest(self, scene, capsys):
        (scene / "m.txt").write_text("clean.f32r\n")
        assert run("fit-transform", "--looks", 4, "--mc-samples", 100000, "--data", scene / "m.txt",
                   "--out", scene / "t.txt") == 0
        assert TransformSpec.load(scene / "t.txt").anchor_mu == pytest.approx(math.log(100.0), rel=1e-12)


def _identity_model(path, looks=4.0, arch=ArchSpec(4, 1)):
    save_checkpoint(init_params(arch), arch, path, meta={"looks": looks})


class TestTrainDespeckleEvaluate:
    @pytest.fixture
    def data(self, scene):
        for i in range(2):
            img = make_synthetic_targets("piecewise-constant", 64, seed=i).image
            write_f32r(scene / f"img{i}.f32r", img)
        (scene / "m.txt").write_text("img0.f32r\nimg1.f32r\n")
        TransformSpec(1.4, -0.1, 0.5, 4.0, 10**6, 4.0).save(scene / "t.txt")
        (scene / "cfg.txt").write_text("channels = 4\ndepth = 1\nbatch = 2\npatch = 32\nlog_every = 5\n")
        return scene

    def test_train(self, data, capsys):
        assert run("train", "--data", data / "m.txt", "--transform", data / "t.txt", "--config", data / "cfg.txt",
                   "--iterations", 10, "--out", data / "m.ckpt", "--log", data / "log.txt") == 0
        params, arch, meta = load_checkpoint(data / "m.ckpt", with_meta=True)
        assert arch == ArchSpec(4, 1) and meta["looks"] == 4.0 and meta["sigma_data"] == 0.5
        assert len((data / "log.txt").read_text().splitlines()) == 2
        assert "final_loss" in capsys.readouterr().out

    def test_train_empty_manifest(self, data, capsys):
        (data / "empty.txt").write_text("# nothing\n")
        assert run("train", "--data", data / "empty.txt", "--transform", data / "t.txt", "--out", data / "m.ckpt") == 2

    def test_train_unreadable_fails_fast(self, data, capsys):
        (data / "bad.txt").write_text("img0.f32r\nmissing.f32r\n")
        assert run("train", "--data", data / "bad.txt", "--transform", data / "t.txt", "--out", data / "m.ckpt") == 2
        assert not (data / "m.ckpt").exists()

    def test_despeckle_identity(self, data, capsys):
        _identity_model(data / "id.ckpt")
        for tile in (0, 32):
            assert run("despeckle", "--in", data / "img0.f32r", "--model", data / "id.ckpt", "--transform",
                       data / "t.txt", "--tile", tile, "--out", data / "o.f32r") == 0
            np.testing.assert_allclose(read_f32r(data / "o.f32r"), read_f32r(data / "img0.f32r"), rtol=1e-6)

    def test_despeckle_errors(self, data, capsys):
        assert run("despeckle", "--in", data / "img0.f32r", "--model", data / "none.ckpt", "--transform",
                   data / "t.txt", "--out", data / "o.f32r") == 2
        _identity_model(data / "l1.ckpt", looks=1.0)
        assert run("despeckle", "--in", data / "img0.f32r", "--model", data / "l1.ckpt", "--transform",
                   data / "t.txt", "--out", data / "o.f32r") == 2
        (data / "junk.ckpt").write_bytes(b"S4DMjunk")
        assert run("despeckle", "--in", data / "img0.f32r", "--model", data / "junk.ckpt", "--transform",
                   data / "t.txt", "--out", data / "o.f32r") == 2

    def test_evaluate(self, data, capsys):
        run("simulate", "--clean", data / "clean.f32r", "--looks", 4, "--out", data / "n.f32r")
        capsys.readouterr()
        assert run("evaluate", "--in", data / "n.f32r", "--rois", 4) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 5 and lines[-1].startswith("mean_enl")
        assert run("evaluate", "--in", data / "n.f32r", "--ref", data / "n.f32r", "--format", "kv") == 0
        kv = parse_keyvalue(capsys.readouterr().out)
        assert kv["psnr_db"] == "inf" and float(kv["mse"]) == 0.0

    def test_evaluate_patch_too_big(self, data, capsys):
        assert run("evaluate", "--in", data / "img0.f32r", "--patch", 128) == 1


def test_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "s4dm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "fit-transform", "train", "despeckle", "evaluate"):
        assert cmd in res.stdout
