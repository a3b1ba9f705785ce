"""
Ranking, CMC and mAP by hand
============================

"""

import numpy as np

from mdkt import evaluation as E

# one-dimensional "embeddings" keep the distances readable
gallery = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
gallery_ids = [7, 3, 7, 5, 3]
gallery_cams = [0, 1, 1, 0, 0]

query = np.array([[0.2], [3.9]])
query_ids, query_cams = [7, 3], [0, 0]

res = E.rank(query, gallery, query_ids, query_cams, gallery_ids, gallery_cams)
for order, matches in zip(res.orders, res.matches):
    # gallery entry 0 shares identity and camera with query 0, so it is dropped
    print("order", order.tolist(), "hits", matches.astype(int).tolist(),
          "AP", round(E.average_precision(matches), 4))

print("cmc@1", E.cmc(res, 1), "cmc@2", E.cmc(res, 2), "mAP", E.mean_average_precision(res))

# ties go to the lower gallery index
tie = E.rank(np.array([[0.0]]), np.array([[1.0], [-1.0]]), [1], [0], [1, 2], [1, 1])
print("tie order", tie.orders[0].tolist())

# chance level: 6 positives among 158 candidates, random order
rng = np.random.default_rng(0)
flags = np.zeros(158, bool)
flags[:6] = True
print("random-ranking AP ~", np.mean([E.average_precision(rng.permutation(flags)) for _ in range(5000)]))
