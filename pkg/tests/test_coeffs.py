import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convhead.coeffs import (ATTITUDES, DIALOG_ACTS, CoeffLayout, CoeffSequence,
                             ConditioningVocabulary, DynamicCoeffs, concat_coeffs, load_manifest,
                             load_sequence, save_sequence, split_coeffs, validate_manifest)
from convhead.errors import FormatError, LayoutError, ManifestError
from convhead.fileformat import encode_matrix
from convhead.synth import SynthConfig, synth_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(num_conversations=2, turns_per_conversation=3, frames_min=12,
                      frames_max=15, seed=4)
    return synth_corpus(cfg, str(out))


def _rewrite(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh)


def test_layout_total():
    assert CoeffLayout().total == 257


def test_split_zeros_and_basis_vector():
    ident, dyn = split_coeffs(np.zeros(257))
    assert not ident.alpha.any() and not dyn.beta.any() and not dyn.pose_trans.any()
    v = np.zeros(257)
    v[80] = 1.0
    ident, dyn = split_coeffs(v)
    assert dyn.beta[0] == 1.0 and dyn.beta.sum() == 1.0
    assert not ident.alpha.any() and not ident.delta.any() and not ident.gamma.any()


def test_split_block_positions():
    v = np.arange(257.0)
    ident, dyn = split_coeffs(v)
    assert ident.alpha[-1] == 79 and dyn.beta[0] == 80 and ident.delta[0] == 144
    assert dyn.pose_angle[0] == 224 and dyn.pose_trans[-1] == 229 and ident.gamma[0] == 230


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_split_concat_round_trip(seed):
    v = np.random.default_rng(seed).normal(size=257) * 10
    assert concat_coeffs(*split_coeffs(v)).tobytes() == v.tobytes()


def test_split_wrong_length():
    with pytest.raises(LayoutError):
        split_coeffs(np.zeros(256))


def test_canonicalize_wraps_angles():
    d = DynamicCoeffs(np.zeros(64), np.array([3 * math.pi / 2, -4.0, 0.5]), np.zeros(3))
    a = d.canonicalize().pose_angle
    assert np.all(np.abs(a) <= math.pi)
    np.testing.assert_allclose(a, [-math.pi / 2, -4.0 + 2 * math.pi, 0.5])


def test_sequence_views_and_frames():
    data = np.arange(140.0).reshape(2, 70)
    seq = CoeffSequence(data)
    assert seq.beta.shape == (2, 64) and seq.pose.shape == (2, 6)
    assert seq[1].pose_trans[-1] == 139.0
    assert CoeffSequence.from_frames(seq.frames) == seq
    with pytest.raises(LayoutError):
        CoeffSequence(np.zeros((3, 69)))
    with pytest.raises(LayoutError):
        CoeffSequence(np.zeros((0, 70)))


def test_vcof_round_trip(tmp_path):
    data = np.random.default_rng(0).normal(size=(17, 70)).astype(np.float32)
    save_sequence(tmp_path / "x.vcof", CoeffSequence(data))
    assert load_sequence(tmp_path / "x.vcof") == CoeffSequence(data)


def test_vcof_errors_name_the_field(tmp_path):
    good = encode_matrix("VCOF", np.zeros((4, 70)))
    path = tmp_path / "bad.vcof"
    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        load_sequence(path)
    path.write_bytes(good[:4] + (2).to_bytes(4, "little") + good[8:])
    with pytest.raises(FormatError, match="version"):
        load_sequence(path)
    path.write_bytes(good[:-5])
    with pytest.raises(FormatError, match=f"expected {len(good)} bytes, got {len(good) - 5}"):
        load_sequence(path)
    path.write_bytes(encode_matrix("VCOF", np.zeros((4, 69))))
    with pytest.raises(FormatError, match="D=69"):
        load_sequence(path)


def test_vocabularies():
    assert ATTITUDES.labels == ("positive", "neutral", "negative")
    assert len(DIALOG_ACTS) == 26 and len(set(DIALOG_ACTS.labels)) == 26
    with pytest.raises(ManifestError):
        ConditioningVocabulary("x", ())
    with pytest.raises(ManifestError):
        ConditioningVocabulary("x", ("a", "a"))


def test_well_formed_manifest_validates(corpus):
    m = load_manifest(corpus[0])
    assert len(m.turns) == 3
    assert validate_manifest(m) == []
    audio, p, q = m.load_turn(m.turns[1])
    assert audio.shape == (len(p), 45) and len(p) == len(q)
    assert m.load_identity("P").alpha.shape == (80,)


def test_manifest_dict_round_trip(corpus):
    m = load_manifest(corpus[1])
    again = type(m).from_dict(m.to_dict(), base_dir=m.base_dir)
    assert again.to_dict() == m.to_dict()


def test_length_mismatch_is_one_violation(corpus, tmp_path):
    m = load_manifest(corpus[0])
    turn = m.turns[1]
    _, p, _ = m.load_turn(turn)
    short = tmp_path / "short.vcof"
    save_sequence(short, CoeffSequence(p.data[:-1]))
    data = m.to_dict()
    data["turns"][1]["coeffs_P_path"] = os.path.relpath(short, m.base_dir)
    found = validate_manifest(data, base_dir=m.base_dir)
    assert [(v.turn, v.rule) for v in found] == [(2, "length-mismatch")]


def test_duplicate_index_is_one_contiguity_violation(corpus):
    m = load_manifest(corpus[0])
    data = m.to_dict()
    data["turns"][2]["turn_index"] = 2
    found = validate_manifest(data, base_dir=m.base_dir)
    assert [(v.turn, v.rule) for v in found] == [(2, "contiguity")]


def test_gap_in_indices(corpus):
    m = load_manifest(corpus[0])
    data = m.to_dict()
    data["turns"][2]["turn_index"] = 5
    assert [v.rule for v in validate_manifest(data, base_dir=m.base_dir)] == ["contiguity"]


def test_missing_files_and_bad_labels_are_reported(corpus):
    m = load_manifest(corpus[0])
    data = m.to_dict()
    data["turns"][0]["audio_feature_path"] = "nope.vcaf"
    data["turns"][1]["conditioning"]["label"] = 99
    data["turns"][2]["role_of_P"] = 7
    rules = {(v.turn, v.rule) for v in validate_manifest(data, base_dir=m.base_dir)}
    assert rules == {(1, "unreadable-file"), (2, "conditioning"), (3, "role")}


@settings(max_examples=200, deadline=None)
@given(st.recursive(st.none() | st.booleans() | st.integers() | st.text(max_size=5),
                    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=8), c, max_size=4),
                    max_leaves=12))
def test_validation_is_total(garbage):
    out = validate_manifest(garbage)
    assert isinstance(out, list) and out
    assert all(v.rule for v in out)


def test_validation_is_total_on_near_manifests(corpus):
    m = load_manifest(corpus[0])
    base = m.to_dict()
    rng = np.random.default_rng(0)
    junk = [None, 3, "x", [], {}, -1, 1.5]
    for _ in range(100):
        data = json.loads(json.dumps(base))
        turn = data["turns"][int(rng.integers(3))]
        key = list(turn)[int(rng.integers(len(turn)))]
        turn[key] = junk[int(rng.integers(len(junk)))]
        assert validate_manifest(data, base_dir=m.base_dir)


def test_load_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")
    _rewrite(tmp_path / "m.json", {"turns": [{}]})
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")
