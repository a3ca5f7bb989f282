"""Command-line entry point.

Subcommands: gen-data, pretrain, advtrain, attack, measure, certify, probe,
impersonate, report.  Each reads an optional JSON config (``--config``),
applies dotted-path overrides (``--set a.b=value``), fans the global
``--seed`` out to module seeds, and writes its artifacts under ``--out``:
a manifest.json echoing the fully resolved config plus results.json and CSV
files.  Artifacts contain nothing execution-specific, so a run is
byte-reproducible from its manifest alone, for any worker count.

Exit status: 0 on success, 2 for unusable input (unknown flags, unreadable
config, bad values), 1 for invariant violations raised by inner modules.
"""

import argparse
import json
import os
import shutil
import sys

import numpy as np

from . import datasets, reporting, training
from .attacks import AttackConfig, u_pgd
from .encoders import Encoder, EncoderSpec
from .errors import (CheckpointError, ConfigError, DataError, ToolkitError)
from .measures import encode_dataset
from .parallel import resolve_workers
from .probe import PROBE_SECTION_TAG, attach_probe, load_probes
from .reporting import (CERTIFY_CLASSIFIER_DEFAULTS, CERTIFY_ENCODER_DEFAULTS,
                        IMPERSONATE_DEFAULTS, MEASURE_DEFAULTS, PROBE_DEFAULTS,
                        certify_classifier_suite, certify_encoder_suite,
                        consolidated_report, emit_artifacts,
                        impersonation_suite, measure_suite, probe_suite,
                        write_csv, write_json)
from .seeding import derive_seed

DATASET_DEFAULTS = {"side": 16, "channels": 1, "classes": 4,
                    "per_class": 256, "noise": 0.12}
ENCODER_DEFAULTS = {"architecture": "cnn", "input_side": 16, "channels": 1,
                    "hidden": [8, 16], "repr_dim": 32, "normalize": True}
TRAIN_DEFAULTS = {"epochs": 10, "batch_size": 32, "lr": 0.5,
                  "momentum": 0.99, "temperature": 0.2, "queue_size": 256,
                  "loop": "moco-v2", "adversarial_mode": "none",
                  "attack": {"epsilon": 0.1, "alpha": 0.02, "iterations": 5,
                             "mode": "untargeted"}}
ATTACK_CMD_DEFAULTS = {"samples": 8, "attack": {"epsilon": 0.05,
                                                "alpha": 0.001,
                                                "iterations": 10,
                                                "mode": "untargeted"}}
SPLIT_DEFAULT = [0.8, 0.2]


def deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if (key in out and isinstance(out[key], dict)
                and isinstance(value, dict)):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc


def apply_overrides(cfg, pairs):
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-dict")
        node[parts[-1]] = value
    return cfg


def resolve_config(defaults, args):
    cfg = deep_merge(defaults, load_config(args.config))
    return apply_overrides(cfg, args.set)


def write_manifest(args, command, cfg, artifacts):
    manifest = {
        "command": command,
        "seed": args.seed,
        "config": cfg,
        "artifacts": sorted(artifacts),
    }
    write_json(os.path.join(args.out, "manifest.json"), manifest)


def load_dataset(cfg, seed):
    section = cfg.get("dataset", {})
    if "path" in section:
        return datasets.load(section["path"])
    fields = deep_merge(DATASET_DEFAULTS, section)
    fields.setdefault("seed", seed)
    return datasets.generate(datasets.SynthSpec(**fields))


def train_eval_split(dataset, cfg):
    fractions = cfg.get("split", SPLIT_DEFAULT)
    train, eval_ = datasets.split(dataset, fractions,
                                  derive_seed(dataset.spec.seed, "split"))
    return train, eval_


def load_encoder(path):
    try:
        enc, _ = Encoder.load(path, want_sections=True)
    except FileNotFoundError as exc:
        raise ConfigError(f"encoder checkpoint not found: {path}") from exc
    return enc


def require_probe(path, variant):
    for p in load_probes(path):
        if p.variant == variant:
            return p
    raise ConfigError(
        f"checkpoint {path} carries no {variant!r} probe; "
        "run the probe command first")


# -- commands -------------------------------------------------------------


def cmd_gen_data(args):
    cfg = resolve_config({"dataset": {}}, args)
    ds = load_dataset(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.urds")
    datasets.save(ds, path)
    write_json(os.path.join(args.out, "results.json"), {
        "kind": "gen-data",
        "samples": len(ds),
        "classes": ds.spec.classes,
        "spec": ds.spec.to_json_dict(),
    })
    write_manifest(args, "gen-data", cfg,
                   ["dataset.urds", "results.json", "manifest.json"])
    return 0


def _run_training(args, adversarial):
    defaults = {"dataset": {}, "encoder": ENCODER_DEFAULTS,
                "train": TRAIN_DEFAULTS, "base_checkpoint": None}
    cfg = resolve_config(defaults, args)
    ds = load_dataset(cfg, args.seed)

    if cfg.get("base_checkpoint"):
        enc = load_encoder(cfg["base_checkpoint"])
    else:
        fields = dict(cfg["encoder"])
        fields["hidden"] = tuple(fields["hidden"])
        fields.setdefault("seed", derive_seed(args.seed, "encoder"))
        enc = Encoder(EncoderSpec(**fields))

    tfields = dict(cfg["train"])
    tfields["attack"] = AttackConfig(**tfields["attack"])
    tfields.setdefault("seed", derive_seed(args.seed, "train"))
    tcfg = training.TrainConfig(**tfields)
    if adversarial and tcfg.adversarial_mode == "none":
        raise ConfigError("advtrain requires train.adversarial_mode != none")
    if not adversarial and tcfg.adversarial_mode != "none":
        raise ConfigError("pretrain runs with train.adversarial_mode = none")

    if tcfg.loop == "moco-v2":
        trained, history = training.train_moco_v2(enc, ds.images, tcfg)
    else:
        trained, _, history = training.train_moco_v3(enc, ds.images, tcfg)

    os.makedirs(args.out, exist_ok=True)
    trained.save(os.path.join(args.out, "encoder.urre"))
    write_csv(os.path.join(args.out, "loss_log.csv"), ("epoch", "mean_loss"),
              list(enumerate(history)))
    write_json(os.path.join(args.out, "results.json"), {
        "kind": "train",
        "encoder_id": reporting.encoder_id(trained),
        "adversarial_mode": tcfg.adversarial_mode,
        "final_loss": history[-1] if history else None,
        "epochs": tcfg.epochs,
    })
    write_manifest(args, "advtrain" if adversarial else "pretrain", cfg,
                   ["encoder.urre", "loss_log.csv", "results.json",
                    "manifest.json"])
    return 0


def cmd_pretrain(args):
    return _run_training(args, adversarial=False)


def cmd_advtrain(args):
    return _run_training(args, adversarial=True)


def cmd_attack(args):
    cfg = resolve_config(deep_merge(ATTACK_CMD_DEFAULTS,
                                    {"dataset": {}, "encoder_path": None}),
                         args)
    if not cfg.get("encoder_path"):
        raise ConfigError("attack requires encoder_path")
    ds = load_dataset(cfg, args.seed)
    enc = load_encoder(cfg["encoder_path"])
    count = min(int(cfg["samples"]), len(ds))
    acfg = AttackConfig(**deep_merge(cfg["attack"],
                                     {"seed": derive_seed(args.seed, "attack")}))
    records = []
    for i in range(count):
        if acfg.mode == "targeted":
            target_idx = (i + 1) % count
            target = enc.encode(ds.images[target_idx]).data
            res = u_pgd(enc, ds.images[i], acfg, target=target, index_base=i)
        else:
            res = u_pgd(enc, ds.images[i], acfg, index_base=i)
        records.append({
            "sample": i,
            "max_perturbation": float(np.abs(res.adversarial
                                             - ds.images[i]).max()),
            "trajectory": res.trajectory.tolist(),
            "adversarial": res.adversarial.tolist(),
        })
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "results.json"), {
        "kind": "attack",
        "encoder_id": reporting.encoder_id(enc),
        "attack": acfg.to_json_dict(),
        "records": records,
    })
    write_manifest(args, "attack", cfg, ["results.json", "manifest.json"])
    return 0


def cmd_measure(args):
    cfg = resolve_config({"dataset": {}, "encoder_path": None,
                          "measure": MEASURE_DEFAULTS}, args)
    if not cfg.get("encoder_path"):
        raise ConfigError("measure requires encoder_path")
    ds = load_dataset(cfg, args.seed)
    enc = load_encoder(cfg["encoder_path"])
    results, csvs = measure_suite(enc, ds, cfg["measure"],
                                  derive_seed(args.seed, "measure"),
                                  workers=resolve_workers(args.workers))
    emit_artifacts(args.out, results, csvs)
    write_manifest(args, "measure", cfg,
                   ["results.json", "manifest.json", *csvs])
    return 0


def cmd_certify(args):
    kind = args.kind
    defaults = (CERTIFY_CLASSIFIER_DEFAULTS if kind == "classifier"
                else CERTIFY_ENCODER_DEFAULTS)
    cfg = resolve_config({"dataset": {}, "encoder_path": None,
                          "certify": defaults}, args)
    if not cfg.get("encoder_path"):
        raise ConfigError("certify requires encoder_path")
    ds = load_dataset(cfg, args.seed)
    enc = load_encoder(cfg["encoder_path"])
    workers = resolve_workers(args.workers)
    seed = derive_seed(args.seed, "certify", kind)
    if kind == "classifier":
        lin_probe = require_probe(cfg["encoder_path"], "gaussian-noise")
        _, eval_ds = train_eval_split(ds, cfg)
        results, csvs = certify_classifier_suite(enc, lin_probe, eval_ds,
                                                 cfg["certify"], seed, workers)
    else:
        results, csvs = certify_encoder_suite(enc, ds, cfg["certify"], seed,
                                              workers)
    emit_artifacts(args.out, results, csvs)
    write_manifest(args, "certify", cfg,
                   ["results.json", "manifest.json", *csvs])
    return 0


def cmd_probe(args):
    cfg = resolve_config({"dataset": {}, "encoder_path": None,
                          "probe": PROBE_DEFAULTS}, args)
    if not cfg.get("encoder_path"):
        raise ConfigError("probe requires encoder_path")
    ds = load_dataset(cfg, args.seed)
    enc = load_encoder(cfg["encoder_path"])
    train_ds, eval_ds = train_eval_split(ds, cfg)
    results, probes = probe_suite(enc, train_ds, eval_ds, cfg["probe"],
                                  derive_seed(args.seed, "probe"))
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "encoder_with_probes.urre")
    shutil.copyfile(cfg["encoder_path"], ckpt)
    for variant in sorted(probes):
        attach_probe(ckpt, probes[variant])
    write_json(os.path.join(args.out, "results.json"), results)
    write_manifest(args, "probe", cfg,
                   ["encoder_with_probes.urre", "results.json",
                    "manifest.json"])
    return 0


def cmd_impersonate(args):
    cfg = resolve_config({"dataset": {}, "encoder_path": None,
                          "impersonate": IMPERSONATE_DEFAULTS}, args)
    if not cfg.get("encoder_path"):
        raise ConfigError("impersonate requires encoder_path")
    ds = load_dataset(cfg, args.seed)
    enc = load_encoder(cfg["encoder_path"])
    lin_probe = require_probe(cfg["encoder_path"], "standard")
    _, eval_ds = train_eval_split(ds, cfg)
    results, csvs = impersonation_suite(enc, lin_probe, eval_ds,
                                        cfg["impersonate"],
                                        derive_seed(args.seed, "impersonate"),
                                        workers=resolve_workers(args.workers))
    emit_artifacts(args.out, results, csvs)
    write_manifest(args, "impersonate", cfg,
                   ["results.json", "manifest.json", *csvs])
    return 0


def cmd_report(args):
    results = []
    for path in args.inputs:
        target = path
        if os.path.isdir(path):
            target = os.path.join(path, "results.json")
        try:
            with open(target, "r", encoding="utf-8") as fh:
                results.append(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable results file {target}: {exc}")
    header, rows = consolidated_report(results)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "report.csv"), header, rows)
    write_json(os.path.join(args.out, "report.json"), {
        "columns": header,
        "rows": [dict(zip(header, row)) for row in rows],
    })
    write_manifest(args, "report", {"inputs": list(args.inputs)},
                   ["report.csv", "report.json", "manifest.json"])
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "advtrain": cmd_advtrain,
    "attack": cmd_attack,
    "measure": cmd_measure,
    "certify": cmd_certify,
    "probe": cmd_probe,
    "impersonate": cmd_impersonate,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="repr-robust",
        description="Label-free robustness toolkit for representation "
                    "encoders.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=7, help="global seed")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel workers (default: machine parallelism "
                            "or REPR_ROBUST_WORKERS)")
        if name == "report":
            p.add_argument("--inputs", nargs="+", required=True,
                           help="run directories or results.json paths")
        else:
            p.add_argument("--config", default=None, help="JSON config path")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config entry (dotted path)")
        if name == "certify":
            p.add_argument("--kind", choices=("classifier", "encoder"),
                           default="classifier")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not hasattr(args, "set"):
        args.set = None
    if not hasattr(args, "config"):
        args.config = None
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
