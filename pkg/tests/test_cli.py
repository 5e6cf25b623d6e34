import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from mlrq.cli import run
from mlrq.codec import Bitstream, GrayImage, bpp, decode_image, encode_image, psnr, read_pgm, write_pgm
from mlrq.corpus import write_corpus
from mlrq.model import Model


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("faces")
    write_corpus(d, 12, seed=5, height=24, width=20)
    return d


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.mlrq"
    assert run(["train", "--images", str(corpus), "--layer-sizes", "8x2,4", "--block", "4",
                "--restarts", "1", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_small(self, tmp_path):
        out = tmp_path / "rd.csv"
        assert run(["simulate", "--n", "32", "--layers", "5", "--k", "64", "--samples", "20", "--out", str(out)]) == 0
        r = rows(out)
        assert len(r) == 5 and list(r[0]) == ["layer", "cum_rate_bits", "distortion", "shannon_bound"]
        assert float(r[-1]["cum_rate_bits"]) == pytest.approx(5 * 6 / 32)
        m = json.loads((tmp_path / "rd.csv.manifest.json").read_text())
        assert m["command"] == "simulate" and m["seed"] == 0 and m["config"]["samples"] == 20
        assert m["outputs"] == [str(out)]

    @pytest.mark.slow
    def test_fig4_parameters(self, tmp_path):
        out = tmp_path / "rd.csv"
        argv = ["simulate", "--n", "512", "--layers", "200", "--k", "4096", "--family", "gaussian",
                "--seed", "7", "--out", str(out)]
        assert run(argv) == 0
        assert len(rows(out)) == 200
        assert (tmp_path / "rd.csv.manifest.json").exists()

    def test_rate_flag(self, tmp_path):
        out = tmp_path / "rd.csv"
        assert run(["simulate", "--n", "16", "--layers", "2", "--rate", "0.25", "--samples", "5",
                    "--out", str(out)]) == 0
        assert float(rows(out)[0]["cum_rate_bits"]) == pytest.approx(0.25)

    def test_capacity_error_exit_1(self, tmp_path):
        assert run(["simulate", "--n", "64", "--layers", "1", "--rate", "1.0", "--out", str(tmp_path / "x")]) == 1


class TestSweep:
    def test_runs(self, tmp_path):
        out = tmp_path / "sw.csv"
        assert run(["sweep-variance", "--n", "20", "--samples", "50", "--points", "21", "--out", str(out)]) == 0
        r = rows(out)
        assert len(r) == 21 and float(r[0]["variance"]) == 0.0

    def test_explicit_variances(self, tmp_path):
        out = tmp_path / "sw.csv"
        assert run(["sweep-variance", "--n", "10", "--samples", "5", "--variances", "0.1,0.2", "--out", str(out)]) == 0
        assert [float(x["variance"]) for x in rows(out)] == [0.1, 0.2]


class TestTrain:
    def test_degenerate(self, tmp_path):
        rng = np.random.default_rng(0)
        paths = []
        for i in range(3):
            p = tmp_path / f"t{i}.pgm"
            write_pgm(p, GrayImage(rng.integers(0, 256, (4, 4), dtype=np.uint8)))
            paths.append(str(p))
        out = tmp_path / "m.mlrq"
        assert run(["train", "--layer-sizes", "2x1", "--block", "2", "--images", *paths, "--out", str(out)]) == 0
        m = Model.load(out)
        assert m.stack.sizes == [2]
        rep = rows(f"{out}.report.csv")
        assert len(rep) == 1 and list(rep[0]) == ["layer", "k", "train_mse", "test_mse", "ratio", "flagged"]

    def test_manifest(self, trained):
        m = json.loads((trained.parent / "m.mlrq.manifest.json").read_text())
        assert m["config"]["layer_sizes"] == "8x2,4" and m["config"]["split"] == 0.8
        assert len(m["inputs"]) == 1 and m["duration_seconds"] >= 0

    def test_strict_first_layer_exit_1(self, corpus, tmp_path):
        code = run(["train", "--images", str(corpus), "--layer-sizes", "256", "--block", "2",
                    "--policy", "strict", "--margin", "0", "--out", str(tmp_path / "m")])
        assert code == 1


class TestCodecCommands:
    def test_encode_decode_eval_consistent(self, trained, corpus, tmp_path):
        img_path = sorted(corpus.glob("*.pgm"))[0]
        bs_path, out_path, csv_path = tmp_path / "a.mlrq", tmp_path / "a.pgm", tmp_path / "e.csv"
        assert run(["encode", "--model", str(trained), "--input", str(img_path), "--out", str(bs_path)]) == 0
        assert run(["decode", "--model", str(trained), "--input", str(bs_path), "--out", str(out_path)]) == 0
        assert run(["eval", "--model", str(trained), "--images", str(img_path), "--out", str(csv_path)]) == 0

        model, img = Model.load(trained), read_pgm(img_path)
        bs = encode_image(img, model)
        assert bs_path.read_bytes() == bs.to_bytes()
        assert read_pgm(out_path) == decode_image(bs, model)
        last = rows(csv_path)[-1]
        raw, coded = bpp(bs, model.stack)
        assert int(last["layers"]) == 3
        assert float(last["raw_bpp"]) == raw and float(last["coded_bpp"]) == coded
        assert float(last["psnr_db"]) == psnr(img, read_pgm(out_path))

    def test_partial_layers(self, trained, corpus, tmp_path):
        img_path = sorted(corpus.glob("*.pgm"))[1]
        bs_path = tmp_path / "a.mlrq"
        assert run(["encode", "--model", str(trained), "--input", str(img_path), "--layers", "1",
                    "--out", str(bs_path)]) == 0
        assert Bitstream.from_bytes(bs_path.read_bytes()).layers == 1

    def test_eval_header_and_baseline(self, trained, corpus, tmp_path, capsys):
        base = tmp_path / "jp2.csv"
        base.write_text("bpp,psnr_db\n0.1,20\n2.0,40\n")
        out = tmp_path / "e.csv"
        assert run(["eval", "--model", str(trained), "--images", str(corpus), "--layers", "1,3",
                    "--baseline", str(base), "--out", str(out)]) == 0
        r = rows(out)
        assert list(r[0]) == ["image", "layers", "raw_bpp", "coded_bpp", "psnr_db"]
        assert len(r) == 2 * 12
        assert "baseline_psnr_db" in capsys.readouterr().out

    def test_inputs_untouched(self, trained, corpus, tmp_path):
        before = {p: p.read_bytes() for p in corpus.glob("*.pgm")}
        model_bytes = trained.read_bytes()
        run(["eval", "--model", str(trained), "--images", str(corpus), "--layers", "2", "--out", str(tmp_path / "e")])
        assert {p: p.read_bytes() for p in corpus.glob("*.pgm")} == before
        assert trained.read_bytes() == model_bytes


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path, capsys):
        assert run(["simulate", "--out", str(tmp_path / "x"), "--bogus"]) == 1
        err = capsys.readouterr()
        assert "usage" in err.err and err.out == ""

    def test_missing_required(self):
        assert run(["encode", "--model", "m"]) == 1

    def test_no_command(self):
        assert run([]) == 1

    def test_missing_file_is_io_error(self, tmp_path):
        assert run(["decode", "--model", str(tmp_path / "nope"), "--input", "x", "--out", str(tmp_path / "o")]) == 2

    def test_corrupt_bitstream_exit_1(self, trained, tmp_path):
        bad = tmp_path / "bad.mlrq"
        bad.write_bytes(b"MLRQ\x01garbage")
        assert run(["decode", "--model", str(trained), "--input", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_console_script(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "mlrq.cli", "simulate", "--n", "8", "--layers", "1",
                              "--k", "4", "--samples", "3", "--out", str(tmp_path / "r.csv")],
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stderr


class TestReplay:
    def test_train_replay_identical(self, trained, tmp_path):
        original = trained.read_bytes()
        trained.write_bytes(b"")
        assert run(["replay", str(trained.parent / "m.mlrq.manifest.json")]) == 0
        assert trained.read_bytes() == original

    def test_simulate_replay_identical(self, tmp_path):
        out = tmp_path / "rd.csv"
        assert run(["simulate", "--n", "16", "--layers", "3", "--k", "16", "--samples", "10",
                    "--family", "binary", "--seed", "9", "--out", str(out)]) == 0
        first = out.read_bytes()
        out.unlink()
        assert run(["replay", f"{out}.manifest.json"]) == 0
        assert out.read_bytes() == first

    def test_corpus_manifest(self, tmp_path):
        d = tmp_path / "c"
        assert run(["make-corpus", "--count", "3", "--height", "8", "--width", "8", "--out", str(d)]) == 0
        m = json.loads((d / "corpus.manifest.json").read_text())
        assert len(m["outputs"]) == 3

    def test_bad_manifest(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"argv": []}))
        assert run(["replay", str(p)]) == 1
