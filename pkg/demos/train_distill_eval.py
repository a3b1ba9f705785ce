"""
Teacher training, distillation and retrieval on synthetic clips
===============================================================

Shortened schedules so the script finishes in a few seconds; the defaults
(60 teacher epochs, 30 distillation epochs, 40 steps each) are what the CLI runs.
"""

from mdkt import data as D
from mdkt import evaluation as E
from mdkt import trainer as T

ds = D.generate(D.DatasetConfig())

# stage one: cross-entropy plus triplet loss on full 8-frame clips
teacher, log = T.train_teacher(ds, T.teacher_defaults(epochs=15))
print("teacher loss per epoch", [round(v, 3) for v in log.epoch_means()[::3]])

# stage two: the student starts as a copy; teacher sees 8 frames, student 2 of them
teacher2, student, log = T.distill(teacher, ds, T.TrainConfig(epochs=5))
last = log.records[-1].losses
print("last step terms", {k: round(v, 4) for k, v in last.items()})

# image-to-video: first frame of each test clip against the full clips
for name, net in (("teacher before", teacher), ("teacher after", teacher2), ("student", student)):
    for mode in ("I2V", "V2V"):
        rep = E.evaluate(net, ds, E.EvalProtocol(mode=mode))
        print(f"{name:>14s} {mode}: cmc1 {rep['cmc1']:.3f}  cmc5 {rep['cmc5']:.3f}  mAP {rep['mAP']:.3f}")

# freezing the teacher leaves it bit-identical
frozen, _, _ = T.distill(teacher, ds, T.TrainConfig(epochs=1, freeze_teacher=True))
from mdkt.model import parameters_equal
print("frozen teacher unchanged:", parameters_equal(frozen, teacher))
