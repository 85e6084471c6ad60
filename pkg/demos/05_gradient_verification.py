"""Verifying the scorer's gradients against central finite differences.

Every trainable block flows through the hand-written backward pass: the
MLP, both relation attentions, the span-pooling vector, and the width
embedding table. The check perturbs every entry of every block at a small
model size; entries whose perturbation crosses a relu kink or the loss
clamp are excluded (the loss is not differentiable there).
"""

import time

from cscoref.training import gradcheck

start = time.time()
report = gradcheck(mode="intra", seeds=(0,), d=8, d_len=4, d_a=4,
                   hidden=16, n_pairs=6)
print(report.render())
print(f"\n({time.time() - start:.1f}s for every entry of every block, "
      f"eval and dropout modes)")

print("\nand a deliberately corrupted gradient is caught:")
bad = gradcheck(mode="intra", seeds=(0,), d=8, d_len=4, d_a=4, hidden=16,
                n_pairs=6, training_mode_seeds=0, _corrupt_block="W_q_after")
print(bad.render())
