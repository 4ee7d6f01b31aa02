import json
import os
import wave

import numpy as np
import pytest

from convhead.acoustic import load_features
from convhead.checkpoint import Checkpoint
from convhead.cli import main
from convhead.coeffs import load_manifest, load_sequence
from convhead.synth import load_split

TINY = ["--set", "model.hidden_size=4", "--set", "model.fused_size=4", "--set", "model.proj_size=4",
        "--set", "model.embed_size=2", "--set", "model.ref_size=2", "--set", "model.num_layers=1"]
CORPUS = ["--set", "num_conversations=4", "--set", "turns_per_conversation=3",
          "--set", "frames_min=8", "--set", "frames_max=10", "--set", "val_count=1",
          "--set", "test_count=1"]


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert "extract-features" in capsys.readouterr().out
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["train", "--task", "listener"]) == 1


def test_unknown_override_is_usage_error(tmp_path):
    assert main(["synth-data", "--out", str(tmp_path), "--set", "colour=red"]) == 1
    assert main(["synth-data", "--out", str(tmp_path), "--set", "smoothing=2.0"]) == 1
    assert not os.listdir(tmp_path)


def test_runtime_error_is_exit_two(tmp_path, capsys):
    rc = main(["extract-features", "--audio", str(tmp_path / "missing.wav"), "--out",
               str(tmp_path / "f.vcaf")])
    assert rc == 2
    assert "convhead extract-features: builtins.FileNotFoundError" in capsys.readouterr().err


def test_extract_features(tmp_path):
    sr = 16000
    x = (0.4 * np.sin(2 * np.pi * 300 * np.arange(sr // 2) / sr) * 32767).astype("<i2")
    with wave.open(str(tmp_path / "a.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sr)
        w.writeframes(x.tobytes())
    assert main(["extract-features", "--audio", str(tmp_path / "a.wav"), "--fps", "25",
                 "--out", str(tmp_path / "a.vcaf")]) == 0
    feats = load_features(str(tmp_path / "a.vcaf"))
    assert feats.shape == (12, 45) and np.isfinite(feats).all()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    corpus = str(root / "corpus")
    assert main(["synth-data", "--out", corpus, "--seed", "3"] + CORPUS) == 0
    runs = {}
    for task in ("listener", "talker"):
        runs[task] = str(root / task)
        assert main(["train", "--task", task, "--data", corpus, "--out", runs[task],
                     "--set", "epochs=2", "--seed", "1"] + TINY) == 0
    runs["agent"] = str(root / "agent")
    assert main(["train", "--task", "agent", "--data", corpus, "--out", runs["agent"],
                 "--set", "epochs=2", "--init-listener", os.path.join(runs["listener"], "listener.ckpt"),
                 "--init-talker", os.path.join(runs["talker"], "talker.ckpt")] + TINY) == 0
    return root, corpus, runs


def test_training_outputs(pipeline):
    _, _, runs = pipeline
    for task, out in runs.items():
        cfg = json.load(open(os.path.join(out, "config.json")))
        assert cfg["task"] == task and cfg["epochs"] == 2 and cfg["model"]["hidden_size"] == 4
        lines = [json.loads(l) for l in open(os.path.join(out, "metrics.jsonl"))]
        assert {r["split"] for r in lines} == {"train", "val"}
        ckpt = Checkpoint.load(os.path.join(out, f"{task}.ckpt"))
        assert ckpt.task == task
    assert json.load(open(os.path.join(runs["agent"], "config.json")))["learning_rate"] == 2e-4


def test_evaluate_report(pipeline):
    root, corpus, runs = pipeline
    ckpt = os.path.join(runs["listener"], "listener.ckpt")
    for method in ("mirror", "random", "ckpt:" + ckpt):
        out = str(root / "eval.json")
        assert main(["evaluate", "--manifests", corpus, "--split", "test", "--method", method,
                     "--out", out]) == 0
        report = json.load(open(out))
        assert report["clip_count"] == len(report["clips"]) > 0
        for key in ("ExpFD", "AngleFD", "TransFD"):
            assert report[key] == pytest.approx(np.mean([c[key] for c in report["clips"]]))
            assert np.isfinite(report[key])
    # a listener checkpoint cannot score talker turns
    assert main(["evaluate", "--manifests", corpus, "--method", "ckpt:" + ckpt, "--task", "talker",
                 "--out", str(root / "bad.json")]) == 1


def test_generate_report(pipeline, tmp_path):
    _, corpus, runs = pipeline
    manifest = load_split(corpus, "test")[0]
    ckpt = os.path.join(runs["agent"], "agent.ckpt")
    assert main(["generate", "--manifest", manifest, "--checkpoint", ckpt,
                 "--out-dir", str(tmp_path)]) == 0
    report = json.load(open(tmp_path / "report.json"))
    m = load_manifest(manifest)
    assert len(report["turns"]) == len(m.turns)
    for entry, turn in zip(report["turns"], m.turns):
        seq = load_sequence(str(tmp_path / entry["file"]))
        assert entry["frames"] == len(seq) == len(m.load_turn(turn)[1])
        assert entry["role"] == turn.role_of_P
        assert entry["conditioning"]["vocabulary"] == turn.vocabulary
        assert np.array_equal(seq.data[0], m.load_turn(turn)[1].data[0].astype(np.float32))
    # a listener-only checkpoint lacks the talker and switch groups
    assert main(["generate", "--manifest", manifest, "--checkpoint",
                 os.path.join(runs["listener"], "listener.ckpt"), "--out-dir", str(tmp_path)]) == 1


def test_commands_are_deterministic(tmp_path, monkeypatch):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    monkeypatch.setenv("CONVHEAD_SEED", "17")
    assert main(["synth-data", "--out", a] + CORPUS) == 0
    assert main(["synth-data", "--out", b, "--seed", "17"] + CORPUS) == 0
    for path_a, path_b in zip(load_split(a, "train"), load_split(b, "train")):
        base_a, base_b = os.path.dirname(path_a), os.path.dirname(path_b)
        for name in sorted(os.listdir(base_a)):
            assert open(os.path.join(base_a, name), "rb").read() == \
                open(os.path.join(base_b, name), "rb").read(), name
    runs = []
    for tag in ("r1", "r2"):
        out = str(tmp_path / tag)
        assert main(["train", "--task", "listener", "--data", a, "--out", out,
                     "--set", "epochs=1"] + TINY) == 0
        runs.append(open(os.path.join(out, "listener.ckpt"), "rb").read())
        assert json.load(open(os.path.join(out, "config.json")))["seed"] == 17
    assert runs[0] == runs[1]
