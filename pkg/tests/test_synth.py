import filecmp
import os

import numpy as np
import pytest

from convhead import synth
from convhead.acoustic import load_features
from convhead.coeffs import CoeffSequence, load_manifest, load_sequence, validate_manifest
from convhead.errors import ConfigError, InvalidInputError


def recursion_oracle(feats, coeffs, attitude, cfg):
    """Listener response written from the coupling definition, frame by frame."""
    cp = synth.coupling(cfg)
    gain = cfg.g_exp * (1.0, 0.7, 0.4)[attitude]
    out, state = [], None
    for t in range(len(coeffs)):
        s = coeffs[t]
        x = [0.0] * 70
        for i in range(64):
            x[i] = gain * sum(cp.exp_map[i, j] * s[j] for j in range(64))
        for a in range(3):
            x[64 + a] = -cfg.g_pose * s[64 + a]
        x[64] += cfg.g_energy * feats[t][42]
        for a in range(3):
            x[67 + a] = cfg.g_pose * s[67 + a]
        state = x if state is None else [cfg.smoothing * u + (1 - cfg.smoothing) * v
                                         for u, v in zip(state, x)]
        frame = list(state)
        for i in range(64):
            frame[i] += cp.attitude_bias[attitude][i]
        out.append(frame)
    return np.array(out)


def test_config_validation():
    for bad in ({"smoothing": 1.0}, {"smoothing": 0.0}, {"num_conversations": 0},
                {"frames_min": 10, "frames_max": 5}, {"first_role": 2}, {"colour": "red"},
                {"num_conversations": 3, "test_count": 4}):
        with pytest.raises(ConfigError):
            synth.SynthConfig.from_dict(bad)
    cfg = synth.SynthConfig(seed=3)
    assert synth.SynthConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.g_pose, cfg.g_exp, cfg.g_energy, cfg.smoothing) == (0.3, 0.5, 0.4, 0.8)


def test_speaker_is_seed_determined_and_sized():
    cfg = synth.SynthConfig(frames_min=20, frames_max=30)
    a = synth.synth_speaker(cfg, np.random.default_rng(5))
    b = synth.synth_speaker(cfg, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    assert 20 <= len(a[1]) <= 30 and a[0].shape == (len(a[1]), 45)
    feats, seq = synth.synth_speaker(cfg, np.random.default_rng(6), n_frames=17)
    assert len(seq) == 17 and len(feats) == 17


def test_heavy_smoothing_gives_near_constant_tracks():
    cfg = synth.SynthConfig(smoothing=0.999)
    for seed in range(5):
        _, seq = synth.synth_speaker(cfg, np.random.default_rng(seed), n_frames=200)
        assert np.abs(np.diff(seq.data, axis=0)).max() < 1e-3


def test_mouth_dims_follow_energy():
    cfg = synth.SynthConfig(smoothing=0.3)
    feats, seq = synth.synth_speaker(cfg, np.random.default_rng(0), n_frames=2000)
    mouth = seq.data[:, :synth.MOUTH_DIMS].mean(axis=1)
    assert np.corrcoef(mouth, feats[:, synth.ENERGY_COL])[0, 1] > 0.5


def test_zero_input_neutral_listener_is_zero():
    cfg = synth.SynthConfig()
    out = synth.oracle_listener(np.zeros((10, 45)), np.zeros((10, 70)), 1, cfg)
    assert not out.data.any()


def test_attitudes_differ_by_bias():
    cfg = synth.SynthConfig(seed=2)
    feats, seq = synth.synth_speaker(cfg, np.random.default_rng(1), n_frames=12)
    pos = synth.oracle_listener(feats, seq, 0, cfg).data
    neg = synth.oracle_listener(feats, seq, 2, cfg).data
    assert not np.allclose(pos[:, :64], neg[:, :64])
    np.testing.assert_array_equal(pos[:, 64:], neg[:, 64:])


def test_oracle_matches_independent_recursion():
    rng = np.random.default_rng(3)
    for seed in range(5):
        cfg = synth.SynthConfig(seed=seed, smoothing=rng.uniform(0.1, 0.95))
        feats = rng.normal(size=(15, 45))
        coeffs = rng.normal(size=(15, 70))
        for attitude in range(3):
            got = synth.oracle_listener(feats, CoeffSequence(coeffs), attitude, cfg).data
            np.testing.assert_allclose(got, recursion_oracle(feats, coeffs, attitude, cfg),
                                       rtol=0, atol=1e-9)


def test_oracle_length_mismatch():
    with pytest.raises(InvalidInputError):
        synth.oracle_listener(np.zeros((4, 45)), np.zeros((5, 70)), 0, synth.SynthConfig())


def test_conversation_listener_turns_follow_oracle():
    cfg = synth.SynthConfig(turns_per_conversation=3, frames_min=10, frames_max=12, seed=8)
    turns, _ = synth.synth_conversation(cfg, 0)
    prev_p = None
    for turn in turns:
        talker, listener = ("Q", "P") if turn["role_of_P"] == 0 else ("P", "Q")
        start = None
        if prev_p is not None:
            start = prev_p[listener]
        want = synth.oracle_listener(turn["features"], turn[talker], turn["attitude"], cfg, start)
        np.testing.assert_allclose(turn[listener], want.data, atol=1e-12)
        prev_p = {"P": turn["P"][-1], "Q": turn["Q"][-1]}
    assert [t["role_of_P"] for t in turns] in ([0, 1, 0], [1, 0, 1])


@pytest.fixture(scope="module")
def corpus_pair(tmp_path_factory):
    cfg = synth.SynthConfig(num_conversations=4, turns_per_conversation=3, frames_min=15,
                            frames_max=20, val_count=1, test_count=1, seed=12)
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    return cfg, synth.synth_corpus(cfg, str(a)), synth.synth_corpus(cfg, str(b)), a, b


def test_corpus_validates_and_is_byte_identical(corpus_pair):
    cfg, pa, pb, a, b = corpus_pair
    for path in pa:
        assert validate_manifest(load_manifest(path)) == []
    for root, _, files in os.walk(a):
        for name in files:
            other = os.path.join(b, os.path.relpath(os.path.join(root, name), a))
            assert filecmp.cmp(os.path.join(root, name), other, shallow=False), name


def test_splits(corpus_pair):
    cfg, _, _, a, _ = corpus_pair
    splits = {s: synth.load_split(str(a), s) for s in ("train", "val", "test")}
    assert [len(splits[s]) for s in ("train", "val", "test")] == [2, 1, 1]
    assert splits["test"][0].endswith(os.path.join("conv_0003", "manifest.json"))


def test_corpus_statistics_match_in_memory_generation(corpus_pair):
    cfg, paths, _, _, _ = corpus_pair
    file_beta, file_energy, mem_beta, mem_energy = [], [], [], []
    for c, path in enumerate(paths):
        m = load_manifest(path)
        for turn in m.turns:
            audio, p, q = m.load_turn(turn)
            file_beta += [np.abs(p.beta).ravel(), np.abs(q.beta).ravel()]
            file_energy.append(audio[:, 42])
        turns, _ = synth.synth_conversation(cfg, c)
        for turn in turns:
            mem_beta += [np.abs(turn["P"][:, :64]).ravel(), np.abs(turn["Q"][:, :64]).ravel()]
            mem_energy.append(turn["features"][:, 42])
    assert np.mean(np.concatenate(file_beta)) == pytest.approx(np.mean(np.concatenate(mem_beta)), rel=1e-6)
    assert np.mean(np.concatenate(file_energy)) == pytest.approx(np.mean(np.concatenate(mem_energy)), rel=1e-6)
    assert 0.02 < np.mean(np.concatenate(mem_energy)) < 0.42


def test_turn_labels_match_roles(corpus_pair):
    _, paths, _, _, _ = corpus_pair
    for path in paths:
        m = load_manifest(path)
        for turn in m.turns:
            assert turn.vocabulary == ("dialog_act26" if turn.role_of_P == 1 else "attitude3")
            audio = load_features(m.resolve(turn.audio_feature_path))
            assert len(audio) == len(load_sequence(m.resolve(turn.coeffs_P_path)))
