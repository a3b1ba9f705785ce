"""
A synthetic multi-camera identity dataset
=========================================

"""

import os
import tempfile

import numpy as np

from mdkt import data as D

# default config: 50 train ids, 20 test ids, 4 cameras, 2 clips each, 8 frames
cfg = D.DatasetConfig()
ds = D.generate(cfg)
print(len(ds.indices(D.TRAIN)), "train clips,", len(ds.indices(D.TEST)), "test clips")
print("frames array", ds.frames.shape)

# train and test identities never overlap
print("shared ids:", ds.identity_set(D.TRAIN) & ds.identity_set(D.TEST))

# how separable is a single frame vs. a whole clip? compare nearest-centroid accuracy
train = ds.indices(D.TRAIN)
ids = ds.identities[train]
centroids = np.stack([ds.frames[train][ids == i].mean(axis=(0, 1)) for i in range(cfg.n_train_ids)])
for name, feats in (("1 frame", ds.frames[train, 0]), ("8 frames", ds.frames[train].mean(axis=1))):
    pred = np.argmin(((feats[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    print(f"{name:>8s}: nearest centroid accuracy {np.mean(pred == ids):.3f}")

# a PK batch: P identities, K clips of each
rng = np.random.default_rng(0)
batch = D.sample_pk_batch(ds, D.BatchSpec(P=4, K=2), rng)
print("batch identities", [c.identity for c in batch])

# teacher sees N frames of a clip, the student M of those same frames
teacher_view = D.subset_views(batch[0], 8, rng)
student_view = D.subset_views(teacher_view, 2, rng)
print("teacher frames", teacher_view.views, "student frames", student_view.views)

# binary round trip
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "data.mdkt")
    D.save(ds, path)
    print("file size", os.path.getsize(path), "bytes, round trip equal:", D.load(path) == ds)
