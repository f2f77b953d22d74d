"""End-to-end command-line runs on small synthetic datasets."""
import csv
import io
import json

import numpy as np
import pytest

from dfast.cli import main
from dfast.training import ModelConfig, auxiliary_samples, features_from_samples, load_checkpoint, proxy_pretrain

COMPACT = "face_preset = compact\nvoice_preset = compact\npose_preset = compact\nlr = 0.001\n"


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "compact.cfg").write_text(COMPACT)
    code, _ = run("--config", d / "compact.cfg", "generate", "--subjects", 8, "--delta", 0.9, "--sigma", 0,
                  "--seed", 1, "--out", d / "data")
    assert code == 0
    return d


@pytest.fixture(scope="module")
def trained(workdir):
    ckpt = workdir / "fusion.ckpt"
    code, out = run("--config", workdir / "compact.cfg", "train", "--manifest", workdir / "data/manifest.jsonl",
                    "--epochs", 20, "--checkpoint", ckpt)
    assert code == 0, out
    return ckpt


def first_record(workdir):
    return json.loads((workdir / "data/manifest.jsonl").read_text().splitlines()[0])


class TestGenerate:
    def test_summary_line(self, tmp_path):
        code, out = run("generate", "--subjects", 8, "--out", tmp_path / "d")
        assert code == 0 and "8 subjects, 48 samples" in out

    def test_prints_resolved_configuration(self, tmp_path):
        _, out = run("generate", "--subjects", 3, "--delta", 0.25, "--out", tmp_path / "d")
        assert "resolved configuration:" in out and "delta = 0.25" in out and "subjects = 3" in out

    def test_existing_directory_without_force(self, workdir, capsys):
        manifest = workdir / "data/manifest.jsonl"
        before = manifest.read_bytes()
        code, _ = run("generate", "--subjects", 3, "--out", workdir / "data")
        assert code == 1 and "--force" in capsys.readouterr().err
        assert manifest.read_bytes() == before

    def test_force(self, tmp_path):
        run("generate", "--subjects", 3, "--out", tmp_path)
        code, _ = run("generate", "--subjects", 4, "--out", tmp_path, "--force")
        assert code == 0 and len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 24

    def test_same_flags_same_manifest(self, tmp_path):
        for name in ("a", "b"):
            run("generate", "--subjects", 3, "--seed", 9, "--out", tmp_path / name)
        assert (tmp_path / "a/manifest.jsonl").read_bytes() == (tmp_path / "b/manifest.jsonl").read_bytes()


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["bogus"], ["generate"], ["generate", "--out", "x", "--delta", "high"],
                                      ["train", "--manifest", "m", "--checkpoint", "c", "--modalities", "smell"],
                                      ["generate", "--out", "x", "--subjects", "2"]])
    def test_exit_two(self, argv, capsys):
        assert run(*argv)[0] == 2

    def test_missing_manifest_exit_one(self, tmp_path):
        code, _ = run("train", "--manifest", tmp_path / "none.jsonl", "--checkpoint", tmp_path / "c.ckpt")
        assert code == 1

    def test_corrupt_checkpoint_exit_one(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        assert run("infer", "--checkpoint", tmp_path / "bad.ckpt")[0] == 1


class TestTrain:
    @pytest.mark.parametrize("fusion,width", [("sum", 256), ("concat", 768)])
    def test_head_shape(self, workdir, tmp_path, fusion, width):
        ckpt = tmp_path / f"{fusion}.ckpt"
        code, _ = run("--config", workdir / "compact.cfg", "train", "--manifest", workdir / "data/manifest.jsonl",
                      "--epochs", 1, "--fusion", fusion, "--checkpoint", ckpt)
        assert code == 0
        state, _ = load_checkpoint(ckpt)
        assert state["head.fc.weight"].shape == (1, width)

    def test_pose_only_checkpoint(self, workdir, tmp_path):
        ckpt = tmp_path / "pose.ckpt"
        run("--config", workdir / "compact.cfg", "train", "--manifest", workdir / "data/manifest.jsonl",
            "--epochs", 1, "--modalities", "pose", "--checkpoint", ckpt)
        state, meta = load_checkpoint(ckpt)
        assert meta["model"]["modalities"] == ["pose"]
        assert not [k for k in state if ".face." in k or ".voice." in k]

    def test_frozen_history_and_pretrained_encoders(self, workdir, tmp_path):
        ckpt = tmp_path / "frozen.ckpt"
        code, out = run("--config", workdir / "compact.cfg", "train", "--manifest", workdir / "data/manifest.jsonl",
                        "--epochs", 2, "--modalities", "voice", "--freeze-encoders", "--pretrain", "proxy",
                        "--pretrain-epochs", 1, "--pretrain-subjects", 3, "--checkpoint", ckpt)
        assert code == 0 and "frozen groups: encoder.voice" in out
        history = read_csv(f"{ckpt}.history.csv")
        assert len(history) == 2 and {r["frozen_groups"] for r in history} == {"encoder.voice"}
        state, meta = load_checkpoint(ckpt)
        assert meta["frozen_groups"] == ["encoder.voice"] and meta["pretrain"] == "proxy"
        cfg = ModelConfig(modalities=("voice",), voice_preset="compact", freeze_encoders=True)
        aux = features_from_samples(auxiliary_samples(10_000, 3), ("voice",))
        pre = proxy_pretrain(cfg, aux, seed=0, epochs=1, lr=1e-4, batch_size=8).state
        encoder_keys = [k for k in pre if k.startswith("encoder.")]
        assert encoder_keys and all(state[k].tobytes() == pre[k].astype(np.float32).tobytes() for k in encoder_keys)

    def test_history_columns(self, trained):
        rows = read_csv(f"{trained}.history.csv")
        assert len(rows) == 20
        assert list(rows[0]) == ["epoch", "train_loss", "val_loss", "val_accuracy", "val_auc", "val_f1",
                                 "frozen_groups"]


class TestEval:
    def test_separable_data_is_learned(self, workdir, trained, tmp_path):
        code, _ = run("eval", "--manifest", workdir / "data/manifest.jsonl", "--checkpoint", trained,
                      "--report", tmp_path / "r.csv")
        assert code == 0
        (report,) = read_csv(tmp_path / "r.csv")
        assert float(report["accuracy"]) == 1.0

    def test_sample_rows_and_weights(self, workdir, trained, tmp_path):
        run("eval", "--manifest", workdir / "data/manifest.jsonl", "--checkpoint", trained,
            "--report", tmp_path / "r.csv")
        rows = read_csv(tmp_path / "r_samples.csv")
        assert len(rows) == 6
        for r in rows:
            w = [float(r[c]) for c in ("w_face", "w_voice", "w_pose")]
            assert abs(sum(w) - 1.0) <= 1e-5

    def test_single_class_split_reports_undefined_auc(self, workdir, trained, tmp_path):
        lines = (workdir / "data/manifest.jsonl").read_text().splitlines()
        healthy = [line for line in lines if json.loads(line)["label"] == 0]
        (workdir / "data/healthy.jsonl").write_text("\n".join(healthy) + "\n")
        code, _ = run("eval", "--manifest", workdir / "data/healthy.jsonl", "--checkpoint", trained,
                      "--split", "all", "--report", tmp_path / "h.csv")
        (report,) = read_csv(tmp_path / "h.csv")
        assert code == 0 and report["auc"] == "undefined" and report["accuracy"] != "undefined"


class TestInfer:
    def test_prints_probability_class_weights(self, workdir, trained):
        r = first_record(workdir)
        code, out = run("infer", "--checkpoint", trained, "--face", workdir / "data" / r["face_path"],
                        "--pose", workdir / "data" / r["pose_path"], "--audio", workdir / "data" / r["audio_path"])
        assert code == 0
        lines = dict(line.split(": ", 1) for line in out.splitlines() if line.startswith(("probability", "class", "weights")))
        prob = float(lines["probability"])
        assert 0.0 <= prob <= 1.0 and lines["class"] == str(int(prob >= 0.5))
        weights = [float(kv.split("=")[1]) for kv in lines["weights"].split(", ")]
        assert abs(sum(weights) - 1.0) <= 1e-5

    def test_missing_audio_exit_two(self, workdir, trained, capsys):
        r = first_record(workdir)
        code, _ = run("infer", "--checkpoint", trained, "--face", workdir / "data" / r["face_path"],
                      "--pose", workdir / "data" / r["pose_path"])
        assert code == 2 and "--audio" in capsys.readouterr().err

    def test_logit_zero_is_class_one(self, workdir, trained, tmp_path):
        from dfast.training import load_model, save_model

        model, meta = load_model(trained)
        model.head.fc.weight.data[...] = 0.0
        model.head.fc.bias.data[...] = 0.0
        save_model(tmp_path / "zero.ckpt", model)
        r = first_record(workdir)
        _, out = run("infer", "--checkpoint", tmp_path / "zero.ckpt", "--face", workdir / "data" / r["face_path"],
                     "--pose", workdir / "data" / r["pose_path"], "--audio", workdir / "data" / r["audio_path"])
        assert "probability: 0.500000" in out and "class: 1" in out


class TestAblate:
    def test_tables_layout(self, workdir, tmp_path):
        code, _ = run("--config", workdir / "compact.cfg", "ablate", "--manifest", workdir / "data/manifest.jsonl",
                      "--epochs", 1, "--seeds", "0", "--pretrain", "none", "--out", tmp_path)
        assert code == 0
        models, fusion = read_csv(tmp_path / "table_models.csv"), read_csv(tmp_path / "table_fusion.csv")
        assert len(models) == 8 and len(fusion) == 4
        assert list(models[0]) == ["Model", "Accuracy", "AUC", "F1-score", "Sensitivity", "Specificity"]
        assert [r["Fusion Strategy"] for r in fusion] == ["Concat", "Sum", "Learnable Weighted Sum", "Attention Fusion"]
        assert all(np.isfinite(float(r["Accuracy"])) for r in models)
