import csv
import hashlib
from dataclasses import replace

import numpy as np
import pytest

from vmbeauty.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from vmbeauty.config import parse_config
from vmbeauty.data import fold_split, load_manifest, write_manifest
from vmbeauty.evaluate import predict_records
from vmbeauty.model import save_checkpoint
from vmbeauty.train import load_model


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), "--n", "20", "--size", "8", "--k", "2", "--quiet"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(synth_dir):
    run = synth_dir.parent / "run"
    code = main(["train", "--tiny", "--manifest", str(synth_dir / "manifest.csv"), "--out", str(run),
                 "--fold", "1", "--quiet"])
    assert code == EXIT_OK
    return run


class TestSynth:
    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            main(["synth", "--out", str(tmp_path / name), "--n", "6", "--size", "8", "--k", "2", "--quiet"])
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_seed_changes_output(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), "--n", "6", "--size", "8", "--k", "2", "--quiet"])
        main(["synth", "--out", str(tmp_path / "b"), "--n", "6", "--size", "8", "--k", "2", "--seed", "1",
              "--quiet"])
        assert digest(tmp_path / "a") != digest(tmp_path / "b")

    def test_fewer_samples_than_folds(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--n", "3", "--k", "5"]) == EXIT_USAGE
        assert "K=5" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, trained):
        for name in ("config.ini", "final.vmb", "history.csv", "loss.png"):
            assert (trained / name).is_file(), name
        with open(trained / "history.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4, 5]
        assert len(list((trained / "checkpoints").glob("epoch_*.vmb"))) == 5

    def test_keep_last(self, synth_dir, tmp_path):
        main(["train", "--tiny", "--manifest", str(synth_dir / "manifest.csv"), "--out", str(tmp_path),
              "--fold", "2", "--keep-last", "2", "--quiet"])
        assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["epoch_004.vmb", "epoch_005.vmb"]

    def test_missing_manifest(self, tmp_path, capsys):
        code = main(["train", "--tiny", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path),
                     "--fold", "1"])
        assert code == EXIT_DATA
        assert "manifest not found" in capsys.readouterr().err

    def test_fold_out_of_range(self, synth_dir, tmp_path, capsys):
        code = main(["train", "--tiny", "--manifest", str(synth_dir / "manifest.csv"), "--out", str(tmp_path),
                     "--fold", "6"])
        assert code == EXIT_USAGE
        assert "--fold 6" in capsys.readouterr().err

    def test_config_round_trip(self, trained):
        _, cfg, _ = load_model(trained / "final.vmb")
        assert parse_config((trained / "config.ini").read_text()) == cfg


class TestEvalPredict:
    def test_perfect_stub_checkpoint(self, synth_dir, trained, tmp_path, capsys):
        # shift both heads into the score range, then relabel the test fold with the
        # resulting checkpoint's own predictions
        man = load_manifest(synth_dir / "manifest.csv")
        model, cfg, meta = load_model(trained / "final.vmb")
        for head in (model.vit.head_bias, model.mamba.head_bias):
            head.data = np.full(head.shape, 3.0, dtype=head.dtype)
        ckpt = save_checkpoint(tmp_path / "stub.vmb", model, cfg.to_dict(), meta=meta)
        _, test = fold_split(man, 1)
        pred, _ = predict_records(model, man, test, "learned_fusion", cfg.model.image_size)
        assert pred.min() >= 1.0 and pred.max() <= 5.0
        relabel = dict(zip((r.image_path for r in test), pred.tolist()))
        records = [replace(r, score=relabel.get(r.image_path, r.score)) for r in man.records]
        stub = synth_dir / "stub_manifest.csv"
        write_manifest(stub, records)
        code = main(["eval", "--checkpoint", str(ckpt), "--manifest", str(stub),
                     "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK
        with open(tmp_path / "eval.csv", newline="") as fh:
            row = next(csv.DictReader(fh))
        assert float(row["pc"]) == pytest.approx(1.0, abs=1e-12)
        assert float(row["mae"]) == 0.0
        assert float(row["rmse"]) == 0.0
        assert int(row["n"]) == len(test)

    def test_eval_prints_table(self, synth_dir, trained, capsys):
        main(["eval", "--checkpoint", str(trained / "final.vmb"), "--manifest", str(synth_dir / "manifest.csv"),
              "--variant", "vit_only"])
        assert capsys.readouterr().out.startswith("vit_only")

    def test_predict_is_repeatable(self, synth_dir, trained, capsys):
        image = next((synth_dir / "images").glob("*.png"))
        args = ["predict", "--checkpoint", str(trained / "final.vmb"), "--image", str(image), "--quiet"]
        main(args)
        first = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == first
        header, values = first.strip().splitlines()
        assert header == "y_hat,p_vit,p_mamba"
        assert all(np.isfinite(float(v)) for v in values.split(","))

    def test_corrupt_checkpoint(self, tmp_path, synth_dir):
        bad = tmp_path / "bad.vmb"
        bad.write_bytes(b"not a checkpoint")
        image = next((synth_dir / "images").glob("*.png"))
        assert main(["predict", "--checkpoint", str(bad), "--image", str(image)]) == EXIT_DATA


class TestSaliency:
    def test_writes_grids_and_overlays(self, synth_dir, trained, tmp_path):
        image = sorted((synth_dir / "images").glob("*.png"))[0]
        code = main(["saliency", "--checkpoint", str(trained / "final.vmb"), "--image", str(image),
                     "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK
        for b in ("vit", "mamba", "fused"):
            grid = np.loadtxt(tmp_path / f"{image.stem}_{b}_grid.csv", delimiter=",")
            assert grid.shape == (2, 2)
            assert grid.min() >= 0 and grid.max() <= 1
            assert (tmp_path / f"{image.stem}_{b}_overlay.png").is_file()

    def test_unknown_branch(self, synth_dir, trained, tmp_path, capsys):
        image = next((synth_dir / "images").glob("*.png"))
        with pytest.raises(SystemExit) as exc:
            main(["saliency", "--checkpoint", str(trained / "final.vmb"), "--image", str(image),
                  "--out", str(tmp_path), "--branch", "cnn"])
        assert exc.value.code == EXIT_USAGE
        assert "vit" in capsys.readouterr().err


class TestBench:
    def test_too_few_lengths(self, capsys):
        assert main(["bench-scan", "--lengths", "8"]) == EXIT_USAGE
        assert "3 distinct lengths" in capsys.readouterr().err

    def test_writes_csv_and_plot(self, tmp_path):
        assert main(["bench-scan", "--lengths", "8,16,32", "--trials", "1", "--out", str(tmp_path), "--quiet"]) == 0
        with open(tmp_path / "bench.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert (tmp_path / "bench.png").is_file()


class TestConfigAndSplits:
    def test_print_config_round_trip(self, capsys, tmp_path):
        main(["print-config", "--tiny"])
        text = capsys.readouterr().out
        (tmp_path / "c.ini").write_text(text)
        main(["print-config", "--config", str(tmp_path / "c.ini")])
        assert capsys.readouterr().out == text

    def test_missing_config(self, tmp_path):
        assert main(["print-config", "--config", str(tmp_path / "nope.ini")]) == EXIT_USAGE

    def test_convert_splits(self, synth_dir, tmp_path):
        names = sorted(p.name for p in (synth_dir / "images").glob("*.png"))[:4]
        lists = []
        for i, chunk in enumerate((names[:2], names[2:]), start=1):
            path = tmp_path / f"test_{i}.txt"
            path.write_text("".join(f"{n} {2.5 + j}\n" for j, n in enumerate(chunk)))
            lists.append(str(path))
        out = tmp_path / "manifest.csv"
        code = main(["convert-splits", "--lists", *lists, "--images", str(synth_dir / "images"),
                     "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        man = load_manifest(out)
        assert [r.fold for r in man.records] == [1, 1, 2, 2]
        assert [r.score for r in man.records] == [2.5, 3.5, 2.5, 3.5]
