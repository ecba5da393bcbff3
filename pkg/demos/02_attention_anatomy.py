"""
Anatomy of the key-point attention.

Every grid cell of a pyramid level is a query. The point head scores every
cell as a potential corner, the top-k cells become keys, and each query
mixes the keys' features with softmax weights built from an appearance term
(projected dot product) and a geometric term (a learned read-out of a
sine/cosine embedding of the key-minus-query offset).

This script prints the weights of one query, then checks three properties
by direct computation: rows sum to one, the geometric term ignores a joint
translation of query and keys, and a zero value projection leaves the
features untouched.
"""

import numpy as np

from aerialdet.bvr import BVRHead, grid_positions
from aerialdet.numerics import Tensor, no_grad

rng = np.random.default_rng(0)
head = BVRHead(16, embed_dim=16, rng=rng)
feature = Tensor(rng.standard_normal((1, 16, 8, 8)))

with no_grad():
    enhanced, details = head.forward_with_details(feature, k=6)
keys = details.keys[0]
weights = details.weights[0].data

print("keys (row, col) by corner score:", [tuple(c) for c in keys.cells.tolist()])
print("refined key positions (x, y):")
print(np.round(keys.positions.data, 3))
q = 27
print(f"attention of query cell {divmod(q, 8)} over the keys:", np.round(weights[q], 4))
print(f"row sums: min {weights.sum(axis=1).min():.15f}, max {weights.sum(axis=1).max():.15f}")

attn = head.attention
query_xy = grid_positions(8, 8)[:5]
shift = np.array([123.4, -56.7])
a = attn.geometric_similarity(query_xy, keys.positions.data).data
b = attn.geometric_similarity(query_xy + shift, keys.positions.data + shift).data
print(f"geometric term change under a joint shift of {shift}: {np.abs(a - b).max():.2e}")

attn.value_proj.weight = Tensor(np.zeros(attn.value_proj.weight.shape), requires_grad=True)
with no_grad():
    out = head(feature, k=6)
print("zero value projection returns the input bitwise:", np.array_equal(out.data, feature.data))
