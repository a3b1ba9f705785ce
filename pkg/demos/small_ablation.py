"""
A tiny ablation suite end to end
================================

The same machinery as ``mdkt ablate`` on a toy config, so it runs in seconds.
"""

import json
import tempfile

from mdkt import ablation
from mdkt import config as C

tiny = C.from_dict({
    "dataset": {"n_train_ids": 8, "n_test_ids": 12, "n_cameras": 3, "frames_per_clip": 4,
                "clips_per_id_per_camera": 1, "latent_dim": 4, "frame_dim": 8},
    "model": {"layer_dims": [8, 16, 8], "n_classes": 8},
    "teacher_train": {"epochs": 5, "steps_per_epoch": 10,
                      "batch_spec": {"P": 4, "K": 2, "teacher_views": 4, "student_views": 2}},
    "train": {"epochs": 3, "steps_per_epoch": 10,
              "batch_spec": {"P": 4, "K": 2, "teacher_views": 4, "student_views": 2}},
})

with tempfile.TemporaryDirectory() as out:
    table, cells = ablation.run_suite("mutual", tiny, seeds=[0, 1], out_dir=out)
    csv_path, json_path = ablation.write_tables("mutual", table, cells, out, tiny.digest(), [0, 1])
    print(open(csv_path).read())
    print("config digest", json.load(open(json_path))["config_digest"])

    # a second call finds every cell on disk and reruns nothing
    again, _ = ablation.run_suite("mutual", tiny, seeds=[0, 1], out_dir=out)
    print("resumed table identical:", again == table)
