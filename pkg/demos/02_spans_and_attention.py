"""Span representations and relation attention, on paper-sized pieces.

A span is encoded as [first token, last token, attention-pooled tokens,
width feature]. Inference sentences get the same treatment (the "span" is
the whole sentence), and a single-head scaled dot-product attention layer
condenses the up-to-k inference vectors into one vector per relation.
"""

import numpy as np

from cscoref import EmbedderConfig, hash_embed, make_embedder, \
    span_representation
from cscoref.scorer import ModelDims, attend, init_parameters

rng = np.random.default_rng(0)

print("hash embeddings are unit-norm and deterministic:")
v1 = hash_embed("hospitalized", d=8, seed=1)
v2 = hash_embed("hospitalized", d=8, seed=1)
v3 = hash_embed("spent", d=8, seed=1)
print(f"  |v| = {np.linalg.norm(v1):.12f}")
print(f"  same token twice -> identical: {np.array_equal(v1, v2)}")
print(f"  cos(hospitalized, spent) = {float(v1 @ v3):+.4f}\n")

config = EmbedderConfig(provider="hash", d=8, d_len=4, max_width_bucket=4)
embedder = make_embedder(config)
sentence = "the victim was hospitalized overnight".split()
matrix = embedder.embed_sentence(sentence)

w_alpha = rng.standard_normal(8)
width_table = rng.standard_normal((4, 4))
rep = span_representation([matrix], 0, 3, 3, w_alpha, width_table)
print(f"single-token span {'hospitalized'!r}:")
print(f"  start == last == pooled: "
      f"{np.allclose(rep.start, rep.pooled)}")
print(f"  full vector length: {rep.full.shape[0]} (= 3*8 + 4)\n")

rep = span_representation([matrix], 0, 1, 3, w_alpha, width_table)
print(f"three-token span {'victim was hospitalized'!r}:")
print(f"  attention over span tokens: {np.round(rep.weights, 3)}")
print(f"  weights sum: {rep.weights.sum():.12f}\n")

print("relation attention over three inference sentences:")
dims = ModelDims(d=8, d_len=4, d_a=4, h=16, mode="intra",
                 max_width_bucket=4)
params = init_parameters(dims, 0)
inferences = [
    "The ambulance rushed to the scene.",
    "Doctors examined the patient.",
    "Someone watered a plant.",
]
reps = [span_representation([embedder.embed_sentence(s.split())], 0, 0,
                            len(s.split()) - 1, params.w_alpha,
                            params.width_table).full
        for s in inferences]
query = span_representation([matrix], 0, 3, 3, params.w_alpha,
                            params.width_table).full
out = attend(query, reps, params.W_q_before, params.W_k_before)
for sentence, weight in zip(inferences, out.weights):
    print(f"  {weight:.4f}  {sentence}")
print(f"  (weights sum to {out.weights.sum():.9f}; at random "
      f"initialization they are near-uniform, training sharpens them)")

empty = attend(query, [], params.W_q_before, params.W_k_before)
print(f"\nno inferences -> zero vector "
      f"(|v| = {np.linalg.norm(empty.vector):.1f}) and empty weights")
