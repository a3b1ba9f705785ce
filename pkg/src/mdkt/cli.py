"""Command-line entry point: ``mdkt {gen-data,train-teacher,distill,eval,ablate,grad-check}``.

Exit codes: 0 success, 1 failed gradient check, 2 configuration or usage error,
3 numeric divergence, 4 I/O error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import ablation
from . import config as config_mod
from . import data as data_mod
from . import gradcheck
from . import model as mdl
from . import trainer
from .errors import ConfigError, DivergenceError, FormatError
from .evaluation import NETWORKS, evaluate

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

logger = logging.getLogger("mdkt")


class UserError(Exception):
    """A usage problem reported with exit code 2."""


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig().validate()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, model=replace(cfg.model, init_seed=args.seed),
                      teacher_train=replace(cfg.teacher_train, seed=args.seed),
                      train=replace(cfg.train, seed=args.seed))
    if getattr(args, "freeze_teacher", False):
        cfg = replace(cfg, train=replace(cfg.train, freeze_teacher=True))
    return cfg.validate()


def _run_dir(cfg, args):
    path = cfg.run_dir(getattr(args, "output", None))
    os.makedirs(path, exist_ok=True)
    return path


def _dataset(cfg, run_dir):
    path = os.path.join(run_dir, "dataset.mdkt")
    if os.path.exists(path):
        ds = data_mod.load(path)
        if ds.config == cfg.dataset:
            return ds
        logger.info("dataset file %s does not match the config; regenerating", path)
    ds = data_mod.generate(cfg.dataset)
    data_mod.save(ds, path)
    return ds


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_gen_data(args):
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    ds = data_mod.generate(cfg.dataset)
    path = os.path.join(run_dir, "dataset.mdkt")
    data_mod.save(ds, path)
    config_mod.save(cfg, os.path.join(run_dir, "config.json"))
    summary = {"path": path, "train_clips": len(ds.indices(data_mod.TRAIN)),
               "test_clips": len(ds.indices(data_mod.TEST)),
               "train_ids": cfg.dataset.n_train_ids, "test_ids": cfg.dataset.n_test_ids,
               "frames_per_clip": cfg.dataset.frames_per_clip, "frame_dim": cfg.dataset.frame_dim,
               "config_digest": cfg.digest()}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _final_teacher_path(cfg, run_dir):
    return os.path.join(run_dir, f"teacher-epoch{cfg.teacher_train.epochs}.ckpt")


def cmd_train_teacher(args):
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    ds = _dataset(cfg, run_dir)
    config_mod.save(cfg, os.path.join(run_dir, "config.json"))
    net, log = trainer.train_teacher(ds, cfg.teacher_train, cfg.model, run_dir, cfg.digest())
    print(json.dumps({"checkpoint": _final_teacher_path(cfg, run_dir),
                      "final_epoch_loss": log.epoch_means()[-1], "config_digest": cfg.digest()}, indent=2))
    return EXIT_OK


def cmd_distill(args):
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    ckpt = args.checkpoint or cfg.train.teacher_checkpoint or _final_teacher_path(cfg, run_dir)
    if not os.path.exists(ckpt):
        raise UserError(f"teacher checkpoint not found: {ckpt} (run train-teacher first or pass --checkpoint)")
    ds = _dataset(cfg, run_dir)
    teacher, student, log = trainer.distill(ckpt, ds, cfg.train, run_dir, cfg.digest())
    print(json.dumps({"student": os.path.join(run_dir, f"distill-student-epoch{cfg.train.epochs}.ckpt"),
                      "teacher": os.path.join(run_dir, f"distill-teacher-epoch{cfg.train.epochs}.ckpt"),
                      "final_losses": log.records[-1].losses, "config_digest": cfg.digest()}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_config(args)
    run_dir = _run_dir(cfg, args)
    network = args.network or "student"
    ckpt = args.checkpoint or os.path.join(run_dir, f"distill-{network}-epoch{cfg.train.epochs}.ckpt")
    if not os.path.exists(ckpt):
        raise UserError(f"checkpoint not found: {ckpt}")
    net = mdl.load_checkpoint(ckpt)
    ds = _dataset(cfg, run_dir)
    seed = cfg.train.seed
    reports = [evaluate(net, ds, replace(p, network=network), seed=seed, digest=cfg.digest())
               for p in cfg.eval]
    out = os.path.join(run_dir, f"eval-{network}.json")
    _write_json(out, reports)
    print(json.dumps(reports, indent=2))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _load_config(args)
    base = os.path.join(_run_dir(cfg, args), "ablate")
    first = args.seed if args.seed is not None else cfg.train.seed
    seeds = list(range(first, first + args.seeds))
    table, cells = ablation.run_suite(args.suite, cfg, seeds, base, args.jobs)
    csv_path, json_path = ablation.write_tables(args.suite, table, cells, base, cfg.digest(), seeds)
    for entry in table:
        print(f"{entry['label']:>16s}  I2V cmc1 {entry['i2v_cmc1_mean']:.4f}±{entry['i2v_cmc1_std']:.4f}"
              f"  mAP {entry['i2v_map_mean']:.4f}±{entry['i2v_map_std']:.4f}"
              f"  | V2V cmc1 {entry['v2v_cmc1_mean']:.4f}  mAP {entry['v2v_map_mean']:.4f}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_grad_check(args):
    worst, passed = gradcheck.run_suite(n_seeds=args.seeds)
    for name, err in worst.items():
        status = "PASS" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{status}  {name:32s} max rel err {err:.3e}")
    report = {"passed": passed, "tolerance": gradcheck.TOLERANCE, "max_relative_error": worst}
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        _write_json(os.path.join(args.output, "grad-check.json"), report)
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="mdkt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", metavar="PATH", help="run configuration JSON")
        p.add_argument("--output", metavar="DIR", help="output root (default: config, then $MDKT_OUTPUT_DIR)")
        if seed:
            p.add_argument("--seed", type=int, metavar="N", help="training seed override")
        return p

    common(sub.add_parser("gen-data", help="generate and save the synthetic dataset")).set_defaults(
        func=cmd_gen_data)
    common(sub.add_parser("train-teacher", help="stage 1: teacher with CE + triplet")).set_defaults(
        func=cmd_train_teacher)
    p = common(sub.add_parser("distill", help="stage 2: mutual teacher/student distillation"))
    p.add_argument("--checkpoint", metavar="PATH", help="teacher checkpoint")
    p.add_argument("--freeze-teacher", action="store_true")
    p.set_defaults(func=cmd_distill)
    p = common(sub.add_parser("eval", help="I2V / V2V retrieval report"))
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--network", choices=NETWORKS)
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("ablate", help="run an ablation suite"))
    p.add_argument("--suite", choices=sorted(ablation.SUITES), required=True)
    p.add_argument("--seeds", type=int, default=5, metavar="K", help="number of seeds (default 5)")
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    p.add_argument("--freeze-teacher", action="store_true")
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("grad-check", help="finite-difference check of every loss")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--output", metavar="DIR")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
