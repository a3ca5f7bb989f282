"""Result emission and consolidated reports.

Every artifact is deterministic: JSON is written with sorted keys, CSV cells
use repr-style float formatting, and nothing execution-specific (timestamps,
worker counts, hostnames) is ever embedded.  A consolidated report merges
per-run results.json files into one table with a fixed column schema, one
row per encoder.
"""

import json
import os

import numpy as np

from . import divergences, measures, probe as probe_mod
from .attacks import AttackConfig
from .certification import (SmoothingConfig, average_certified_radius,
                            certified_accuracy_curve, certify_classifier,
                            center_smooth)
from .errors import ConfigError, DataError
from .impersonation import impersonate
from .measures import (build_divergence_distribution, overlap_risk_and_margins,
                       sample_disjoint_pairs, breakaway_scan,
                       targeted_relative_quantiles,
                       untargeted_universal_quantiles, universal_quantile)
from .probe import classifier_fn, top_k_accuracy, train_probe
from .seeding import derive_seed


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_csv(path, header, rows):
    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")


def grid_key(eps, iterations):
    return f"eps{eps}_it{iterations}"


# -- suite runners -------------------------------------------------------------

MEASURE_DEFAULTS = {
    "divergence": "l2",
    "temperature": 1.0,
    "distribution_samples": 1000,
    "d_prime": 200,
    "pairs": 500,
    "alpha": 0.001,
    "untargeted": {"epsilons": [0.05, 0.10], "iterations": [5, 10, 30, 50]},
    "targeted": {"epsilons": [0.05, 0.10], "iterations": [5, 10, 30, 50]},
    "breakaway": {"epsilon": 0.05, "iterations": 25},
    "overlap": {"epsilon": 0.05, "iterations": 10},
}


def encoder_id(enc):
    mode = (enc.provenance or {}).get("adversarial_mode") or "standard"
    if mode == "none":
        mode = "standard"
    if not enc.provenance:
        mode = "untrained"
    return f"{mode}-{probe_mod.encoder_fingerprint(enc)[:8]}"


def measure_suite(enc, dataset, cfg, seed, workers=1):
    """Run the full label-free measure battery; returns (results, csv map)."""
    kind = cfg["divergence"]
    temp = cfg["temperature"]
    images = dataset.images
    n = images.shape[0]
    d_prime_count = min(int(cfg["d_prime"]), n)
    d_prime = np.arange(d_prime_count)
    pair_count = min(int(cfg["pairs"]), n // 2)

    dist = build_divergence_distribution(
        enc, images, min(int(cfg["distribution_samples"]), n), kind, temp,
        workers=workers)

    results = {
        "kind": "measure",
        "encoder_id": encoder_id(enc),
        "provenance": enc.provenance or None,
        "divergence": kind,
        "temperature": temp,
        "distribution": {"samples": dist.sample_count,
                         "pair_count": int(len(dist)),
                         "fingerprint": dist.fingerprint},
    }
    csvs = {}

    uq_rows = []
    uq_medians = {}
    for eps in cfg["untargeted"]["epsilons"]:
        for it in cfg["untargeted"]["iterations"]:
            acfg = AttackConfig(epsilon=eps, alpha=cfg["alpha"], iterations=it,
                                mode="untargeted", divergence=kind,
                                temperature=temp,
                                seed=derive_seed(seed, "uq", eps, it))
            q = untargeted_universal_quantiles(enc, images, d_prime, dist,
                                               acfg, workers=workers)
            uq_medians[grid_key(eps, it)] = float(np.median(q))
            uq_rows.extend((eps, it, int(s), float(v))
                           for s, v in zip(d_prime, q))
    results["untargeted_median_universal_quantile"] = uq_medians
    csvs["untargeted_quantiles.csv"] = (
        ("epsilon", "iterations", "sample", "universal_quantile"), uq_rows)

    pairs = sample_disjoint_pairs(n, pair_count, derive_seed(seed, "pairs"))
    rq_rows = []
    rq_medians = {}
    for eps in cfg["targeted"]["epsilons"]:
        for it in cfg["targeted"]["iterations"]:
            acfg = AttackConfig(epsilon=eps, alpha=cfg["alpha"], iterations=it,
                                mode="targeted", divergence=kind,
                                temperature=temp,
                                seed=derive_seed(seed, "rq", eps, it))
            rq = targeted_relative_quantiles(enc, images, pairs, acfg, kind,
                                             temp, workers=workers)
            rq_medians[grid_key(eps, it)] = float(np.median(rq))
            rq_rows.extend((eps, it, int(i), int(j), float(v))
                           for (i, j), v in zip(pairs, rq))
    results["targeted_median_relative_quantile"] = rq_medians
    csvs["relative_quantiles.csv"] = (
        ("epsilon", "iterations", "source", "target", "relative_quantile"),
        rq_rows)

    bcfg = AttackConfig(epsilon=cfg["breakaway"]["epsilon"], alpha=cfg["alpha"],
                        iterations=cfg["breakaway"]["iterations"],
                        mode="untargeted", divergence=kind, temperature=temp,
                        seed=derive_seed(seed, "breakaway"))
    scan = breakaway_scan(enc, images, d_prime, bcfg, kind, temp, workers)
    results["breakaway"] = scan["risk"].to_json_dict()
    results["nearest_neighbor_accuracy"] = scan["nn_accuracy"]
    results["self_similarity_fraction"] = scan["self_similarity_fraction"]
    csvs["breakaway.csv"] = (
        ("sample", "closer_count", "attacked_self_divergence"),
        [(int(s), int(c), float(d)) for s, c, d in
         zip(d_prime, scan["per_sample_counts"],
             scan["attacked_self_divergence"])])

    ocfg = AttackConfig(epsilon=cfg["overlap"]["epsilon"], alpha=cfg["alpha"],
                        iterations=cfg["overlap"]["iterations"],
                        mode="targeted", divergence=kind, temperature=temp,
                        seed=derive_seed(seed, "overlap"))
    risk, records, summary = overlap_risk_and_margins(
        enc, images, pairs, ocfg, kind, temp, workers)
    results["overlap"] = risk.to_json_dict()
    results["median_adversarial_margin"] = summary["median_margin"]
    results["excluded_pairs"] = summary["excluded_pairs"]
    csvs["margins.csv"] = (
        ("i", "j", "incoming", "outgoing", "clean", "margin", "overlap_event"),
        [(r.i, r.j, r.incoming, r.outgoing, r.clean, r.margin,
          r.incoming < r.outgoing) for r in records])
    return results, csvs


CERTIFY_CLASSIFIER_DEFAULTS = {
    "eval_count": 50,
    "smoothing": {"sigma": 0.25, "n0": 100, "n": 100_000, "alpha": 0.001},
    "radius_grid": {"max": 1.0, "points": 21},
}

CERTIFY_ENCODER_DEFAULTS = {
    "eval_count": 20,
    "smoothing": {"sigma": 0.25, "n0": 10_000, "n": 100_000,
                  "alpha1": 0.005, "alpha2": 0.005},
    "distribution_samples": 1000,
    "divergence": "l2",
}


def certify_classifier_suite(enc, lin_probe, dataset, cfg, seed, workers=1):
    count = min(int(cfg["eval_count"]), len(dataset))
    smoothing = SmoothingConfig(**cfg["smoothing"])
    classify = classifier_fn(lin_probe, enc)
    results_rows = []
    cert_results = []
    correct = []
    for i in range(count):
        x = dataset.images[i]
        label = int(dataset.labels[i])
        res = certify_classifier(
            classify, x, lin_probe.classes,
            smoothing.replace(seed=derive_seed(seed, "certify", i)))
        ok = (not res.abstain) and res.prediction == label
        cert_results.append(res)
        correct.append(res.prediction == label)
        results_rows.append((i, label, res.prediction,
                             res.radius if res.radius is not None else "",
                             res.abstain, ok))
    acr = average_certified_radius(cert_results, correct)
    grid = np.linspace(0.0, cfg["radius_grid"]["max"],
                       int(cfg["radius_grid"]["points"]))
    curve = certified_accuracy_curve(cert_results, correct, grid)
    results = {
        "kind": "certify-classifier",
        "encoder_id": encoder_id(enc),
        "average_certified_radius": float(acr),
        "abstain_rate": float(np.mean([r.abstain for r in cert_results])),
        "smoothing": smoothing.to_json_dict(),
        "eval_count": count,
    }
    csvs = {
        "certified_samples.csv": (
            ("sample", "label", "prediction", "radius", "abstain",
             "certified_correct"), results_rows),
        "certified_accuracy.csv": (
            ("radius", "certified_accuracy"),
            [(float(r), float(c)) for r, c in zip(grid, curve)]),
    }
    return results, csvs


def certify_encoder_suite(enc, dataset, cfg, seed, workers=1):
    count = min(int(cfg["eval_count"]), len(dataset))
    smoothing = SmoothingConfig(**cfg["smoothing"])
    kind = cfg["divergence"]
    dist = build_divergence_distribution(
        enc, dataset.images,
        min(int(cfg["distribution_samples"]), len(dataset)), kind,
        workers=workers)
    rows = []
    quantiles = []
    radii = []
    for i in range(count):
        res = center_smooth(
            lambda b: enc.features(b), dataset.images[i],
            smoothing.replace(seed=derive_seed(seed, "center", i)),
            dist=dist, repr_dim=enc.repr_dim)
        rows.append((i, res.radius if res.radius is not None else "",
                     res.quantile if res.quantile is not None else "",
                     res.abstain))
        if not res.abstain:
            radii.append(res.radius)
            quantiles.append(res.quantile)
    quant_sorted = np.sort(quantiles)
    curve = [(float(q), float((k + 1) / len(quant_sorted)))
             for k, q in enumerate(quant_sorted)]
    results = {
        "kind": "certify-encoder",
        "encoder_id": encoder_id(enc),
        "median_certified_radius": float(np.median(radii)) if radii else None,
        "median_certified_quantile": (float(np.median(quantiles))
                                      if quantiles else None),
        "abstain_rate": float(1.0 - len(radii) / count) if count else 0.0,
        "smoothing": smoothing.to_json_dict(),
        "divergence": kind,
        "eval_count": count,
    }
    csvs = {
        "center_smoothing.csv": (
            ("sample", "radius", "quantile", "abstain"), rows),
        "certified_quantiles.csv": (
            ("quantile", "cumulative_fraction"), curve),
    }
    return results, csvs


PROBE_DEFAULTS = {
    "variants": ["standard", "lowpass", "gaussian-noise"],
    "epochs": 25,
    "lr": 30.0,
    "lr_drop_epochs": [15, 20],
    "batch_size": 64,
    "lowpass_fraction": probe_mod.DEFAULT_LOWPASS_FRACTION,
    "noise_sigma": probe_mod.DEFAULT_NOISE_SIGMA,
}


def probe_suite(enc, train_ds, eval_ds, cfg, seed):
    """Train the probe variants and score top-k accuracy on the eval split."""
    classes = int(train_ds.labels.max()) + 1
    k_top = min(5, classes)
    probes = {}
    accuracy = {}
    for variant in cfg["variants"]:
        p = train_probe(enc, train_ds.images, train_ds.labels, variant,
                        epochs=int(cfg["epochs"]), lr=float(cfg["lr"]),
                        lr_drop_epochs=tuple(cfg["lr_drop_epochs"]),
                        batch_size=int(cfg["batch_size"]),
                        seed=derive_seed(seed, "probe", variant),
                        lowpass_fraction=float(cfg["lowpass_fraction"]),
                        noise_sigma=float(cfg["noise_sigma"]))
        probes[variant] = p
        accuracy[variant] = {
            "top1": top_k_accuracy(p, enc, eval_ds.images, eval_ds.labels, 1,
                                   seed=derive_seed(seed, "eval", variant)),
            f"top{k_top}": top_k_accuracy(
                p, enc, eval_ds.images, eval_ds.labels, k_top,
                seed=derive_seed(seed, "eval", variant)),
        }
    results = {
        "kind": "probe",
        "encoder_id": encoder_id(enc),
        "classes": classes,
        "top_k": k_top,
        "accuracy": accuracy,
    }
    if "standard" in accuracy and "lowpass" in accuracy:
        results["lowpass_gap"] = (accuracy["standard"]["top1"]
                                  - accuracy["lowpass"]["top1"])
    return results, probes


IMPERSONATE_DEFAULTS = {
    "class_a": 0,
    "class_b": 1,
    "pair_count": 100,
    "divergence": "l2",
    "attack": {"epsilon": 0.10, "alpha": 0.01, "iterations": 50},
}


def impersonation_suite(enc, lin_probe, dataset, cfg, seed, workers=1):
    kind = cfg["divergence"]
    acfg = AttackConfig(epsilon=cfg["attack"]["epsilon"],
                        alpha=cfg["attack"]["alpha"],
                        iterations=cfg["attack"]["iterations"],
                        mode="targeted", divergence=kind,
                        seed=derive_seed(seed, "impersonate"))
    a, b = int(cfg["class_a"]), int(cfg["class_b"])
    idx_a = dataset.class_indices(a)
    idx_b = dataset.class_indices(b)
    report = impersonate(enc, classifier_fn(lin_probe, enc),
                         dataset.images[idx_a], a, dataset.images[idx_b], b,
                         cfg=acfg, pair_count=cfg["pair_count"],
                         seed=derive_seed(seed, "pairing"), kind=kind,
                         workers=workers)
    results = {
        "kind": "impersonate",
        "encoder_id": encoder_id(enc),
        "rate_a_to_b": report.rate_a_to_b,
        "rate_b_to_a": report.rate_b_to_a,
        "averaged_rate": report.averaged_rate,
        "pair_count": report.pair_count,
        "probe_queries_during_attack": report.probe_queries_during_attack,
        "attack": report.attack,
    }
    csv_rows = [(p.source_index, p.target_index, p.direction, p.fooled,
                 p.relative_quantile) for p in report.pairs]
    csvs = {"impersonation_pairs.csv": (
        ("source", "target", "direction", "fooled", "relative_quantile"),
        csv_rows)}
    return results, csvs


# -- consolidated report -------------------------------------------------------

FIXED_PREFIX = ("encoder_id", "top1_standard", "top5_standard",
                "top1_lowpass", "top5_lowpass", "lowpass_gap")
FIXED_SUFFIX = ("breakaway_risk", "nn_accuracy", "overlap_risk",
                "median_margin", "avg_certified_radius", "impersonation_rate")


def consolidated_report(results_list):
    """Merge per-run results into one row per encoder.

    Returns (header, rows).  Refuses mixed divergence kinds (the quantile
    columns would not be comparable) and empty input.
    """
    if not results_list:
        raise DataError("no results to report")
    kinds = {r["divergence"] for r in results_list if "divergence" in r}
    if len(kinds) > 1:
        raise ConfigError(
            f"cannot tabulate mixed divergence kinds: {sorted(kinds)}")

    merged = {}
    uq_keys, rq_keys = set(), set()
    for res in results_list:
        row = merged.setdefault(res["encoder_id"], {})
        kind = res.get("kind")
        if kind == "measure":
            row["uq"] = res["untargeted_median_universal_quantile"]
            row["rq"] = res["targeted_median_relative_quantile"]
            uq_keys.update(row["uq"])
            rq_keys.update(row["rq"])
            row["breakaway_risk"] = res["breakaway"]["estimate"]
            row["nn_accuracy"] = res["nearest_neighbor_accuracy"]
            row["overlap_risk"] = res["overlap"]["estimate"]
            row["median_margin"] = res["median_adversarial_margin"]
        elif kind == "probe":
            acc = res["accuracy"]
            top_k = res["top_k"]
            for variant in ("standard", "lowpass"):
                if variant in acc:
                    row[f"top1_{variant}"] = acc[variant]["top1"]
                    row[f"top5_{variant}"] = acc[variant][f"top{top_k}"]
            if "lowpass_gap" in res:
                row["lowpass_gap"] = res["lowpass_gap"]
        elif kind == "certify-classifier":
            row["avg_certified_radius"] = res["average_certified_radius"]
        elif kind == "impersonate":
            row["impersonation_rate"] = res["averaged_rate"]

    header = (list(FIXED_PREFIX)
              + [f"uq_{k}" for k in sorted(uq_keys)]
              + [f"rq_{k}" for k in sorted(rq_keys)]
              + list(FIXED_SUFFIX))
    rows = []
    for enc_id in sorted(merged):
        row = merged[enc_id]
        cells = [enc_id]
        for col in FIXED_PREFIX[1:]:
            cells.append(row.get(col, ""))
        for k in sorted(uq_keys):
            cells.append(row.get("uq", {}).get(k, ""))
        for k in sorted(rq_keys):
            cells.append(row.get("rq", {}).get(k, ""))
        for col in FIXED_SUFFIX:
            cells.append(row.get(col, ""))
        rows.append(cells)
    return header, rows


def emit_artifacts(out_dir, results, csvs):
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "results.json"), results)
    for name, (header, rows) in csvs.items():
        write_csv(os.path.join(out_dir, name), header, rows)
