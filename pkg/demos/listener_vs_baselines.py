"""Train a small responsive listener on a synthetic corpus and score it
against the Random and Mirror baselines.

The corpus is generated from a known listener response rule, so a model
that learns anything useful should land well below both baselines.
Default sizes finish in about a minute on one core; raise --clips and
--epochs for a closer look.

    python demos/listener_vs_baselines.py --clips 150 --epochs 60
"""

import argparse
import tempfile
import time

from convhead import evaluation, model, synth, training
from convhead.coeffs import load_manifest

parser = argparse.ArgumentParser()
parser.add_argument("--clips", type=int, default=150)
parser.add_argument("--epochs", type=int, default=60)
parser.add_argument("--hidden", type=int, default=64)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

root = tempfile.mkdtemp(prefix="listener_demo_")
test = max(args.clips // 5, 2)
cfg = synth.SynthConfig(num_conversations=args.clips + 2 * test, turns_per_conversation=1,
                        first_role=0, val_count=test, test_count=test, seed=args.seed)
synth.synth_corpus(cfg, root)
splits = {s: [load_manifest(p) for p in synth.load_split(root, s)] for s in ("train", "val", "test")}
print({s: len(v) for s, v in splits.items()}, "clips in", root)

tc = training.TrainingConfig(
    task="listener", epochs=args.epochs, decay_every=max(args.epochs // 3, 1), seed=args.seed,
    model=model.ModelConfig(hidden_size=args.hidden, num_layers=1, fused_size=64, proj_size=32))


def show(records):
    tr, va = records
    if tr["epoch"] % 5 == 0 or tr["epoch"] == args.epochs - 1:
        print(f"  epoch {tr['epoch']:3d}  train {tr['L_total']:8.3f}  val {va['L_total']:8.3f}")


start = time.time()
result = training.train_task(tc, splits["train"], splits["val"], progress=show)
print(f"trained in {time.time() - start:.0f}s, best epoch {result.best_epoch}")

print(f"{'method':<10} {'ExpFD':>8} {'AngleFD':>8} {'TransFD':>8}")
for name, method in (("random", "random"), ("mirror", "mirror"), ("listener", result.checkpoint)):
    r = evaluation.evaluate_run(splits["test"], method)
    print(f"{name:<10} {r.ExpFD:8.3f} {r.AngleFD:8.3f} {r.TransFD:8.3f}")
