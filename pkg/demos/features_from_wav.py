"""Turn a WAV file into the 45-column per-frame feature matrix and look at it.

With no argument a two-second test tone with a pause in the middle is
synthesised, written to a temporary WAV, and analysed.

    python demos/features_from_wav.py [path.wav] [--fps 30]
"""

import argparse
import os
import tempfile
import wave

import numpy as np

from convhead import acoustic


def write_test_tone(path, sr=16000):
    t = np.arange(2 * sr) / sr
    x = 0.5 * np.sin(2 * np.pi * 220 * t) * (np.abs(t - 1.0) > 0.25)
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sr)
        w.writeframes((x * 32767).astype("<i2").tobytes())


parser = argparse.ArgumentParser()
parser.add_argument("wav", nargs="?")
parser.add_argument("--fps", type=float, default=30.0)
args = parser.parse_args()

path = args.wav
if path is None:
    path = os.path.join(tempfile.mkdtemp(), "tone.wav")
    write_test_tone(path)
    print("no input given, synthesised", path)

clip = acoustic.read_wav(path)
feats = acoustic.extract_features(clip, args.fps)
print(f"{len(clip.samples) / clip.sample_rate:.2f}s at {clip.sample_rate} Hz -> {len(feats)} frames x {feats.shape[1]} columns")

# columns: 14 MFCC, 14 deltas, 14 delta-deltas, energy, loudness (log energy), zero-crossing rate
energy, loud, zcr = feats[:, 42], feats[:, 43], feats[:, 44]
print("frame  energy   zcr     loudness")
for t in range(0, len(feats), max(1, len(feats) // 12)):
    bar = "#" * int(40 * energy[t] / max(energy.max(), 1e-12))
    print(f"{t:5d}  {energy[t]:.4f}  {zcr[t]:.4f}  {loud[t]:8.2f}  {bar}")

out = os.path.splitext(path)[0] + ".vcaf"
acoustic.save_features(out, feats)
back = acoustic.load_features(out)
print("wrote", out, "| float32 round trip max error", float(np.abs(back - feats).max()))
