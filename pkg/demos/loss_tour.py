"""
Every loss on one small teacher/student batch
=============================================

"""

import numpy as np

from mdkt import losses as L
from mdkt.autodiff import Tensor

rng = np.random.default_rng(0)
labels = np.repeat(np.arange(4), 2)   # P=4 identities, K=2 clips each
t_emb, s_emb = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))
t_log, s_log = rng.normal(size=(8, 10)), rng.normal(size=(8, 10))

print("cross-entropy      ", L.ce_loss(s_log, labels).item())
print("batch-hard triplet ", L.batch_hard_triplet_loss(s_emb, labels, margin=0.3).item())
print("mutual logits KD   ", L.mutual_kd(t_log, s_log, tau1=10.0).item())
print("pairwise distances ", L.pd_loss(t_emb, s_emb).item())
print("mutual TCL         ", L.mutual_tcl(t_emb, s_emb, labels, tau2=4.0).item())

# triplets are mined in the student embedding: hardest positive, nearest negative
from mdkt.autodiff import pairwise_sq_euclidean
tri = L.batch_hard_triplets(pairwise_sq_euclidean(Tensor(s_emb)), labels)
print("mined (anchor, positive, negative):", list(tri)[:4])

# the two-point distribution behind TCL
for d_ap, d_an in ((0.0, 4.0), (2.0, 2.0), (6.0, 1.0)):
    pair = L.triplet_probability(d_ap, d_an, tau2=4.0)
    print(f"d_ap={d_ap} d_an={d_an}: p={pair.p:.6f}, 1-p={pair.complement:.6f}")

# the combined objective, with its per-term breakdown
teacher = L.NetworkOutput(Tensor(t_emb), Tensor(t_log))
student = L.NetworkOutput(Tensor(s_emb), Tensor(s_log))
result = L.total_objective(teacher, student, labels, L.LossConfig())
for name, value in result.breakdown().items():
    print(f"{name:>5s} {value:.6f}")

# switching a term off removes it from the total
tr_only = L.LossConfig(use_mkd=False, use_pd=False, use_mtcl=False)
print("TR only total", L.total_objective(teacher, student, labels, tr_only).total.item())
