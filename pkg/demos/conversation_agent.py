"""Build a two-role conversational agent and watch what happens at role switches.

Steps: generate multi-turn conversations, train a listener and a talker
separately, join them with the role switcher and fine-tune on whole
conversations, then generate one conversation twice. The first run
carries the recurrent state across turns through the switcher. The
second re-initialises it at every switch.

    python demos/conversation_agent.py --epochs 15
"""

import argparse
import os
import tempfile

import numpy as np

from convhead import model, synth, tasks, training
from convhead.coeffs import EXP_DIM, load_manifest

parser = argparse.ArgumentParser()
parser.add_argument("--conversations", type=int, default=30)
parser.add_argument("--epochs", type=int, default=15)
parser.add_argument("--hidden", type=int, default=32)
args = parser.parse_args()

root = tempfile.mkdtemp(prefix="agent_demo_")
synth.synth_corpus(synth.SynthConfig(num_conversations=args.conversations, turns_per_conversation=4,
                                     val_count=3, test_count=3, seed=1), root)
train, val, test = ([load_manifest(p) for p in synth.load_split(root, s)]
                    for s in ("train", "val", "test"))

mc = model.ModelConfig(hidden_size=args.hidden, num_layers=1, fused_size=32, proj_size=16)
ckpts = {}
for task in ("listener", "talker"):
    cfg = training.TrainingConfig(task=task, epochs=args.epochs,
                                  decay_every=max(args.epochs // 3, 1), model=mc)
    ckpts[task] = training.train_task(cfg, train, val).checkpoint
    print(task, "best val loss", round(ckpts[task].meta["best_val_L_total"], 3))

agent_cfg = training.TrainingConfig.for_task("agent", epochs=max(args.epochs // 3, 1), model=mc)
agent = training.train_task(agent_cfg, train, val, init_checkpoints=ckpts).checkpoint
print("agent best val loss", round(agent.meta["best_val_L_total"], 3))

m = test[0]
roles = ["listen" if t.role_of_P == 0 else "talk" for t in m.turns]
print("conversation", os.path.basename(m.base_dir), "roles:", " -> ".join(roles))
for reset in (False, True):
    outs = tasks.generate_conversation(m, agent.params, reset_on_switch=reset)
    print("hard reset" if reset else "switcher  ", end=": ")
    for a, b in zip(outs, outs[1:]):
        pose_a, pose_b = a.data[:, EXP_DIM:], b.data[:, EXP_DIM:]
        # jump into the new turn, then the first generated step inside it
        jump = np.linalg.norm(pose_b[0] - pose_a[-1])
        step = np.linalg.norm(pose_b[1] - pose_b[0])
        print(f"[{jump:.3f} {step:.3f}]", end=" ")
    print()
within = np.mean([np.linalg.norm(np.diff(o.data[:, EXP_DIM:], axis=0), axis=1).mean()
                  for o in tasks.generate_conversation(m, agent.params)])
print(f"typical within-turn pose step: {within:.3f}")
