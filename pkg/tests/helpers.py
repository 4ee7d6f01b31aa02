"""Shared fixtures-as-functions for the test modules."""

import math

import numpy as np

from convhead import model as M
from convhead.training import TurnExample


def reference_signals():
    """Twenty named mono signals covering tones, noise, chirps and edge cases."""
    rng = np.random.default_rng(1234)
    out = []
    for sr in (16000, 22050, 30000, 44100, 48000):
        t = np.arange(int(0.4 * sr)) / sr
        out.append((f"sine440@{sr}", np.sin(2 * np.pi * 440 * t), sr))
        f = 100 + 3000 * t / t[-1]
        chirp = np.sin(2 * np.pi * np.cumsum(f) / sr) * (0.5 + 0.5 * np.sin(2 * np.pi * 3 * t))
        out.append((f"chirp@{sr}", 0.8 * chirp, sr))
        out.append((f"noise@{sr}", np.clip(rng.normal(0, 0.3, len(t)), -1, 1), sr))
    sr = 16000
    n = 8000
    out.append(("silence", np.zeros(n), sr))
    out.append(("dc", np.full(n, 0.5), sr))
    out.append(("alternating", np.where(np.arange(n) % 2, -1.0, 1.0), sr))
    out.append(("impulse", np.eye(1, n, n // 2)[0], sr))
    out.append(("one-hop", rng.uniform(-1, 1, 534), sr))
    return out


def tiny_config(layers=2):
    return M.ModelConfig(hidden_size=2, num_layers=layers, fused_size=3, proj_size=2,
                         embed_size=2, ref_size=2)


def small_config():
    return M.ModelConfig(hidden_size=8, num_layers=2, fused_size=6, proj_size=4,
                         embed_size=3, ref_size=4)


def random_example(rng, role, T, labels=3):
    return TurnExample(rng.normal(size=(T, 45)), 0.5 * rng.normal(size=(T, 70)),
                       0.5 * rng.normal(size=(T, 70)), int(rng.integers(labels)), role)


def finite_difference_check(objective, params, step=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    ``objective(params, need_grad)`` returns ``(loss, grads)``; the relative
    error denominator is floored at 1e-7 so exact zeros compare as absolute.
    """
    _, grads = objective(params, True)
    flat, fg = M.flatten(params), M.flatten(grads)
    worst, where = 0.0, None
    for key, value in flat.items():
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + step
            up = objective(params, False)[0]
            value[idx] = old - step
            down = objective(params, False)[0]
            value[idx] = old
            numeric = (up - down) / (2 * step)
            analytic = fg[key][idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
            if rel > worst:
                worst, where = rel, (key, idx, analytic, numeric)
    return worst, where


def random_agent_params(cfg, rng, alpha=None):
    """Listener, talker and a perturbed switcher with fresh random weights."""
    from convhead.coeffs import ATTITUDES, DIALOG_ACTS
    a = rng.random(2) if alpha is None else (alpha, alpha)
    switch = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in M.init_switch_params(cfg).items()}
    return {"listener": M.init_decoder_params(cfg, len(ATTITUDES), rng),
            "talker": {"stream": M.init_decoder_params(cfg, len(DIALOG_ACTS), rng),
                       "audio": M.init_audio_encoder_params(cfg, len(DIALOG_ACTS), rng),
                       "alpha_beta": np.array([a[0]]), "alpha_p": np.array([a[1]])},
            "switch": switch}


def random_manifests(out_dir, count, seed, frames=(6, 14)):
    """``count`` small synthetic conversations with 1 to 5 turns and random first roles."""
    import os
    from convhead.synth import SynthConfig, synth_corpus
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        cfg = SynthConfig(num_conversations=1, turns_per_conversation=int(rng.integers(1, 6)),
                          frames_min=frames[0], frames_max=frames[1], seed=int(rng.integers(1 << 30)))
        paths += synth_corpus(cfg, os.path.join(str(out_dir), f"m{i:03d}"))
    return paths


def gen_oracle(pred, gt):
    """Generation loss by explicit loops over frames and dims."""
    total = 0.0
    for t in range(1, len(pred)):
        total += math.sqrt(sum((pred[t][k] - gt[t][k]) ** 2 for k in range(64)))
        total += math.sqrt(sum((pred[t][k] - gt[t][k]) ** 2 for k in range(64, 70)))
    return total


def mot_oracle(pred, gt, w1, w2):
    """Motion loss by explicit loops; ``mu`` is the per-frame change mismatch."""
    total = 0.0
    for t in range(1, len(pred)):
        mu = [(pred[t][k] - pred[t - 1][k]) - (gt[t][k] - gt[t - 1][k]) for k in range(70)]
        total += w1 * math.sqrt(sum(v * v for v in mu[:64])) + w2 * math.sqrt(sum(v * v for v in mu[64:]))
    return total


def random_payload(rng, cols):
    rows = int(rng.integers(1, 40))
    values = rng.normal(scale=10.0 ** rng.integers(-3, 4), size=(rows, cols)).astype(np.float32)
    if rng.random() < 0.1:
        values.flat[int(rng.integers(values.size))] = np.float32(-0.0)
    return values


def random_checkpoint_params(rng):
    mc = small_config()
    params = {"listener": M.init_decoder_params(mc, 3, rng),
              "talker": {"stream": M.init_decoder_params(mc, 26, rng),
                         "audio": M.init_audio_encoder_params(mc, 26, rng),
                         "alpha_beta": np.array([rng.random()]),
                         "alpha_p": np.array([rng.random()])},
              "switch": M.init_switch_params(mc)}
    flat = M.flatten(params)
    for k in flat:
        flat[k] = (flat[k] + rng.normal(size=flat[k].shape)).astype(np.float32).astype(np.float64)
    return mc, M.unflatten(flat)
