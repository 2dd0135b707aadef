"""Command-line entry point.

One subcommand per pipeline stage: synth | split | fit | eval | fit-2pl |
inclusion | onboard | diagnose <mode> | cluster | check-props. Results go to
--out as JSON (plus the binary checkpoint/feature formats); a summary JSON is
printed on stdout and progress lines on stderr. Exit codes: 0 success,
2 configuration error, 3 data error.

Options may come from flags or from a --config JSON document with the same
key names; unknown config keys are rejected, explicit flags win, and every
run writes the merged configuration next to its outputs. Seeds are mandatory
for stochastic subcommands so reruns are reproducible; reruns overwrite
outputs with byte-identical content.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import agreement_metrics, kmeans_unit
from .data import (
    load_checkpoint,
    load_features,
    load_responses,
    load_split,
    make_split,
    save_checkpoint,
    save_split,
)
from .engine import TrainConfig, evaluate, train
from .errors import ConfigError, CoverageError, JeirtError
from .geometry import (
    compute_question_geometry,
    cosine_to_mean_stats,
    directional_alignment,
    effective_rank,
    kernel_pca_cosine_2d,
    norm_quantile_accuracy,
    pca_cumulative_variance,
    roc_from_norms,
)
from .irt2pl import Irt2plConfig, correct_set_inclusion, fit_2pl, fit_logloss, saturation_report
from .onboarding import OnboardConfig, append_model, subsample_curve
from .synth import (
    ConeMixture,
    FixedDifficulty,
    LogNormalDifficulty,
    UniformDirections,
    check_ability_shift,
    check_prob_stability,
    check_prop1,
    generate_planted,
    most_opposed_pair,
)

DIAGNOSE_MODES = (
    "norms",
    "roc",
    "alignment",
    "cosine-stats",
    "pca",
    "rank",
    "kpca",
    "opposed",
)


def _log(msg: str) -> None:
    print(f"[jeirt] {msg}", file=sys.stderr)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _parse_floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"cannot parse {what} from {text!r}") from None


def _parse_difficulty(text: str):
    kind, _, rest = str(text).partition(":")
    if kind == "lognormal":
        vals = _parse_floats(rest, "difficulty profile") if rest else (1.0, 0.5)
        if len(vals) != 2:
            raise ConfigError("lognormal difficulty takes median,sigma_log")
        return LogNormalDifficulty(median=vals[0], sigma_log=vals[1])
    if kind == "fixed":
        vals = _parse_floats(rest, "difficulty profile") if rest else (1.0,)
        return FixedDifficulty(value=vals[0])
    raise ConfigError(f"unknown difficulty profile {text!r}")


def _parse_directions(text: str):
    kind, _, rest = str(text).partition(":")
    if kind == "uniform":
        return UniformDirections()
    if kind == "cones":
        vals = _parse_floats(rest, "direction profile") if rest else (2.0, 25.0)
        if len(vals) != 2:
            raise ConfigError("cones direction profile takes count,half_angle_deg")
        return ConeMixture(count=int(vals[0]), half_angle_deg=vals[1])
    raise ConfigError(f"unknown direction profile {text!r}")


# -- option registry ---------------------------------------------------------

# dest -> (flag, type, default, help); default None + dest in REQUIRED means
# the value must arrive via flag or config file.
_SPECS: dict[str, dict] = {
    "synth": {
        "out": (str, None, "output directory"),
        "seed": (int, None, "world seed"),
        "m": (int, None, "number of models"),
        "n": (int, None, "number of questions"),
        "d": (int, None, "embedding dimension"),
        "difficulty": (str, "lognormal:1.0,0.5", "norm profile (lognormal:median,sigma | fixed:v)"),
        "directions": (str, "uniform", "direction profile (uniform | cones:count,half_angle_deg)"),
        "target_mean_prob": (float, 0.45, "average planted probability target"),
        "model_noise": (float, 0.3, "model embedding noise scale around the bias"),
    },
    "split": {
        "responses": (str, None, "responses.jsonl path"),
        "out": (str, None, "output directory"),
        "seed": (int, None, "shuffle seed"),
        "ratios": (str, "0.8,0.1,0.1", "train,val,test fractions"),
        "mode": (str, "record", "record | question"),
    },
    "fit": {
        "responses": (str, None, "responses.jsonl path"),
        "features_manifest": (str, None, "features manifest path"),
        "features_blob": (str, None, "features blob path"),
        "split": (str, None, "split.json path"),
        "out": (str, None, "output directory"),
        "seed": (int, None, "training seed"),
        "d": (int, 8, "embedding dimension"),
        "learning_rate": (float, 1e-3, "Adam learning rate"),
        "batch_size": (int, 256, "mini-batch size"),
        "max_epochs": (int, 100, "epoch cap"),
        "patience": (int, 10, "early-stopping patience (epochs)"),
        "eps_norm": (float, 1e-8, "degenerate-question norm guard"),
    },
    "eval": {
        "responses": (str, None, "responses.jsonl path"),
        "features_manifest": (str, None, "features manifest path"),
        "features_blob": (str, None, "features blob path"),
        "split": (str, None, "split.json path"),
        "checkpoint_manifest": (str, None, "checkpoint manifest path"),
        "checkpoint_blob": (str, None, "checkpoint blob path"),
        "out": (str, None, "output directory"),
        "part": (str, "test", "train | val | test"),
    },
    "fit-2pl": {
        "responses": (str, None, "responses.jsonl path"),
        "out": (str, None, "output directory"),
        "seed": (int, None, "fit seed"),
        "learning_rate": (float, 0.05, "Adam learning rate"),
        "max_epochs": (int, 2000, "full-batch epochs"),
        "l2": (float, 1e-4, "L2 weight on a and b"),
        "p_hi": (float, 0.99, "saturation upper threshold"),
        "p_lo": (float, 0.01, "saturation lower threshold"),
    },
    "inclusion": {
        "responses": (str, None, "responses.jsonl path"),
        "out": (str, None, "output directory"),
    },
    "onboard": {
        "checkpoint_manifest": (str, None, "checkpoint manifest path"),
        "checkpoint_blob": (str, None, "checkpoint blob path"),
        "responses": (str, None, "new model's responses.jsonl"),
        "features_manifest": (str, None, "features manifest path"),
        "features_blob": (str, None, "features blob path"),
        "out": (str, None, "output directory"),
        "seed": (int, None, "subsample seed"),
        "fractions": (str, "0.01,0.05,0.1,0.2,0.4,0.6,0.8,1.0", "training fractions"),
        "learning_rate": (float, 0.05, "Adam learning rate"),
        "max_epochs": (int, 2000, "full-batch epochs"),
        "l2": (float, 1e-4, "L2 weight on the new embedding"),
        "holdout_ratio": (float, 0.2, "held-out share of the new model's records"),
    },
    "diagnose": {
        "checkpoint_manifest": (str, None, "checkpoint manifest path"),
        "checkpoint_blob": (str, None, "checkpoint blob path"),
        "features_manifest": (str, None, "features manifest path"),
        "features_blob": (str, None, "features blob path"),
        "responses": (str, None, "responses.jsonl path"),
        "out": (str, None, "output directory"),
        "bins": (int, 20, "quantile bins (norms mode)"),
        "benchmark": (str, "", "single benchmark (alignment mode; empty = all)"),
        "vectors": (str, "models", "models | questions (pca/rank modes)"),
        "cap": (int, 20000, "kernel matrix size cap (kpca mode)"),
        "within": (str, "", "restrict to one benchmark (opposed mode; empty = all)"),
        "eps_norm": (float, 1e-8, "degenerate-question norm guard"),
    },
    "cluster": {
        "checkpoint_manifest": (str, None, "checkpoint manifest path"),
        "checkpoint_blob": (str, None, "checkpoint blob path"),
        "features_manifest": (str, None, "features manifest path"),
        "features_blob": (str, None, "features blob path"),
        "responses": (str, None, "responses.jsonl path"),
        "out": (str, None, "output directory"),
        "seed": (int, None, "k-means seed"),
        "k": (int, None, "cluster count"),
        "max_iters": (int, 100, "Lloyd iteration cap"),
        "label_field": (str, "subject", "subject | benchmark"),
        "nmi_normalization": (str, "arithmetic", "arithmetic | geometric"),
    },
    "check-props": {
        "seed": (int, None, "trial seed"),
        "trials": (int, 100000, "random trials per bound"),
        "pairs": (int, 1000, "random witness pairs"),
        "out": (str, "", "optional output directory"),
    },
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    name: tuple(dest for dest, (_, default, _h) in spec.items() if default is None)
    for name, spec in _SPECS.items()
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jeirt",
        description="Train, evaluate, and analyze joint-embedding correctness models.",
    )
    parser.add_argument("--version", action="version", version=f"jeirt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in _SPECS.items():
        p = sub.add_parser(name)
        if name == "diagnose":
            p.add_argument("mode", choices=DIAGNOSE_MODES)
        p.add_argument("--config", default=None, help="JSON config document")
        for dest, (typ, _default, helptext) in spec.items():
            p.add_argument(
                "--" + dest.replace("_", "-"),
                dest=dest,
                type=typ,
                default=argparse.SUPPRESS,
                help=helptext,
            )
    return parser


def _resolve_options(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, with strict config keys."""
    spec = _SPECS[command]
    resolved = {dest: default for dest, (_, default, _h) in spec.items()}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        flat = dict(doc)
        # optional nested blocks for the training/onboarding knobs
        for block in ("train", "onboard"):
            if block in flat and isinstance(flat[block], dict):
                nested = flat.pop(block)
                for key, val in nested.items():
                    if key in flat:
                        raise ConfigError(f"config key {key!r} given twice")
                    flat[key] = val
        unknown = set(flat) - set(spec)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        resolved.update(flat)
    for dest in spec:
        if hasattr(args, dest):
            resolved[dest] = getattr(args, dest)
    missing = [d for d in _REQUIRED[command] if resolved.get(d) is None]
    if missing:
        raise ConfigError(
            f"missing required option(s) for {command}: "
            + ", ".join("--" + d.replace("_", "-") for d in missing)
        )
    return resolved


def _prepare_outdir(command: str, opt: dict, extra=None) -> Path | None:
    out = opt.get("out") or None
    if out is None:
        return None
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **opt}
    if extra:
        doc.update(extra)
    _write_json(outdir / "config.resolved.json", doc)
    return outdir


def _load_feature_pair(opt):
    return load_features(opt["features_manifest"], opt["features_blob"])


def _load_checkpoint_pair(opt):
    return load_checkpoint(opt["checkpoint_manifest"], opt["checkpoint_blob"])


# -- subcommand handlers -------------------------------------------------------

def _cmd_synth(opt: dict) -> dict:
    outdir = _prepare_outdir("synth", opt)
    world = generate_planted(
        m=opt["m"],
        n=opt["n"],
        d=opt["d"],
        seed=opt["seed"],
        difficulty_profile=_parse_difficulty(opt["difficulty"]),
        direction_profile=_parse_directions(opt["directions"]),
        target_mean_prob=opt["target_mean_prob"],
        model_noise=opt["model_noise"],
    )
    world.save(outdir)
    _log(f"synth: wrote world ({opt['m']}x{opt['n']}, d={opt['d']}) to {outdir}")
    return {
        "out": str(outdir),
        "records": len(world.dataset.records),
        "bayes_logloss": world.bayes_logloss,
        "mean_prob": world.mean_prob,
        "planted_accuracy": world.planted_accuracy(),
    }


def _cmd_split(opt: dict) -> dict:
    outdir = _prepare_outdir("split", opt)
    ds = load_responses(opt["responses"])
    ratios = _parse_floats(opt["ratios"], "ratios")
    split = make_split(ds, ratios, opt["seed"], mode=opt["mode"])
    save_split(split, outdir / "split.json")
    _log(f"split: {split.train.size}/{split.val.size}/{split.test.size} records")
    return {
        "out": str(outdir),
        "train": int(split.train.size),
        "val": int(split.val.size),
        "test": int(split.test.size),
        "mode": opt["mode"],
    }


def _cmd_fit(opt: dict) -> dict:
    outdir = _prepare_outdir("fit", opt)
    ds = load_responses(opt["responses"])
    feats = _load_feature_pair(opt)
    split = load_split(opt["split"])
    cfg = TrainConfig(
        embed_dim=opt["d"],
        learning_rate=opt["learning_rate"],
        batch_size=opt["batch_size"],
        max_epochs=opt["max_epochs"],
        seed=opt["seed"],
        eps_norm=opt["eps_norm"],
        patience=opt["patience"],
    )
    _log(f"fit: training d={cfg.embed_dim} on {split.train.size} records")
    ckpt = train(ds, split, feats, cfg)
    save_checkpoint(ckpt, outdir / "checkpoint.manifest.json", outdir / "checkpoint.f32")
    _log(f"fit: best epoch {ckpt.train_meta['epoch']} val_loss {ckpt.train_meta['val_loss']:.6f}")
    return {
        "out": str(outdir),
        "best_epoch": ckpt.train_meta["epoch"],
        "val_loss": ckpt.train_meta["val_loss"],
        "models": len(ckpt.model_table.model_ids),
    }


def _cmd_eval(opt: dict) -> dict:
    outdir = _prepare_outdir("eval", opt)
    ds = load_responses(opt["responses"])
    feats = _load_feature_pair(opt)
    split = load_split(opt["split"])
    ckpt = _load_checkpoint_pair(opt)
    report = evaluate(ckpt, ds, split.part(opt["part"]), feats)
    doc = report.to_json()
    doc["part"] = opt["part"]
    _write_json(outdir / "eval.json", doc)
    _log(f"eval: {opt['part']} accuracy {report.overall_accuracy:.4f}")
    return doc


def _cmd_fit_2pl(opt: dict) -> dict:
    outdir = _prepare_outdir("fit-2pl", opt)
    ds = load_responses(opt["responses"])
    cfg = Irt2plConfig(
        learning_rate=opt["learning_rate"],
        max_epochs=opt["max_epochs"],
        seed=opt["seed"],
        l2=opt["l2"],
    )
    _log(f"fit-2pl: {len(ds.model_index)} models x {len(ds.question_index)} items")
    params = fit_2pl(ds, cfg)
    _write_json(
        outdir / "irt2pl.json",
        {"theta": params.theta, "a": params.a, "b": params.b},
    )
    sat = saturation_report(params, ds, p_hi=opt["p_hi"], p_lo=opt["p_lo"])
    _write_json(outdir / "saturation.json", sat)
    neg = sum(1 for v in params.a.values() if v < 0)
    return {
        "out": str(outdir),
        "logloss": fit_logloss(params, ds),
        "negative_discrimination_count": neg,
        "predicted_unanimous_fraction": sat["predicted_unanimous_fraction"],
        "actual_unanimous_fraction": sat["actual_unanimous_fraction"],
    }


def _cmd_inclusion(opt: dict) -> dict:
    outdir = _prepare_outdir("inclusion", opt)
    ds = load_responses(opt["responses"])
    report = correct_set_inclusion(ds)
    doc = report.to_json()
    _write_json(outdir / "inclusion.json", doc)
    defined = report.matrix[~np.isnan(report.matrix)]
    return {
        "out": str(outdir),
        "models": len(report.model_order),
        "defined_entries": int(defined.size),
        "max_ratio": float(defined.max()) if defined.size else None,
    }


def _cmd_onboard(opt: dict) -> dict:
    outdir = _prepare_outdir("onboard", opt)
    ckpt = _load_checkpoint_pair(opt)
    ds = load_responses(opt["responses"])
    feats = _load_feature_pair(opt)
    cfg = OnboardConfig(
        fractions=_parse_floats(opt["fractions"], "fractions"),
        seed=opt["seed"],
        learning_rate=opt["learning_rate"],
        max_epochs=opt["max_epochs"],
        l2=opt["l2"],
        holdout_ratio=opt["holdout_ratio"],
    )
    results = subsample_curve(ckpt, ds.records, feats, cfg)
    rows = [
        {
            "fraction": r.fraction,
            "n_train": r.n_train,
            "n_holdout": r.n_holdout,
            "holdout_accuracy": r.holdout_accuracy,
            "holdout_logloss": r.holdout_logloss,
        }
        for r in results
    ]
    final = results[-1]
    _write_json(outdir / "onboard.json", {"model_id": final.model_id, "curve": rows})
    updated = append_model(ckpt, final.model_id, final.embedding)
    save_checkpoint(
        updated,
        outdir / "checkpoint.onboarded.manifest.json",
        outdir / "checkpoint.onboarded.f32",
    )
    _log(f"onboard: {final.model_id} accuracy {final.holdout_accuracy:.4f} at fraction {final.fraction}")
    return {"out": str(outdir), "model_id": final.model_id, "curve": rows}


def _geometry_for(opt: dict):
    ds = load_responses(opt["responses"])
    feats = _load_feature_pair(opt)
    ckpt = _load_checkpoint_pair(opt)
    tags = ds.question_benchmarks()
    geom = compute_question_geometry(
        ckpt, feats, ds.question_ids, tags, eps_norm=opt.get("eps_norm", 1e-8)
    )
    return ds, feats, ckpt, geom


def _cmd_diagnose(opt: dict, mode: str) -> dict:
    outdir = _prepare_outdir("diagnose", opt, extra={"mode": mode})
    ds, _feats, ckpt, geom = _geometry_for(opt)
    if mode == "norms":
        doc = {"bins": norm_quantile_accuracy(geom, ds, bins=opt["bins"])}
    elif mode == "roc":
        curve = roc_from_norms(geom, ds)
        doc = {"auc": curve.auc, "points": curve.points.tolist()}
    elif mode == "alignment":
        if opt["benchmark"]:
            doc = {"alignment": {opt["benchmark"]: directional_alignment(geom, opt["benchmark"])}}
        else:
            tags = sorted({g.benchmark for g in geom})
            if len(tags) < 2:
                raise ConfigError("alignment needs at least two benchmark tags")
            doc = {"alignment": {t: directional_alignment(geom, t) for t in tags}}
    elif mode == "cosine-stats":
        doc = cosine_to_mean_stats(geom)
    elif mode in ("pca", "rank"):
        if opt["vectors"] == "models":
            mat = ckpt.model_table.vectors.astype(np.float64)
        elif opt["vectors"] == "questions":
            mat = np.stack([g.embedding for g in geom])
        else:
            raise ConfigError(f"--vectors must be models or questions, got {opt['vectors']!r}")
        if mode == "pca":
            doc = {
                "vectors": opt["vectors"],
                "cumulative_variance": pca_cumulative_variance(mat).tolist(),
            }
        else:
            doc = {"vectors": opt["vectors"], "effective_rank": effective_rank(mat)}
    elif mode == "kpca":
        coords = kernel_pca_cosine_2d(geom, cap=opt["cap"])
        doc = {
            "question_ids": [g.question_id for g in geom],
            "benchmarks": [g.benchmark for g in geom],
            "coordinates": coords.tolist(),
        }
    elif mode == "opposed":
        pair = most_opposed_pair(geom, within=opt["within"] or None)
        doc = {
            "question_a": pair.question_a,
            "question_b": pair.question_b,
            "cosine": pair.cosine,
            "exact": pair.exact,
        }
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown diagnose mode {mode!r}")
    _write_json(outdir / f"{mode.replace('-', '_')}.json", doc)
    _log(f"diagnose {mode}: wrote {outdir}")
    summary = {"out": str(outdir), "mode": mode}
    summary.update(doc if isinstance(doc, dict) else {"result": doc})
    return summary


def _cmd_cluster(opt: dict) -> dict:
    outdir = _prepare_outdir("cluster", opt)
    ds, _feats, _ckpt, geom = _geometry_for(opt)
    assign = kmeans_unit(geom, k=opt["k"], seed=opt["seed"], max_iters=opt["max_iters"])
    if opt["label_field"] == "subject":
        raw = ds.question_subjects()
        missing = sorted(q for q, s in raw.items() if s is None)
        if missing:
            raise CoverageError(
                f"{len(missing)} question(s) lack subject labels: "
                + ", ".join(repr(q) for q in missing[:10])
            )
        labels = {q: s for q, s in raw.items()}
    elif opt["label_field"] == "benchmark":
        labels = ds.question_benchmarks()
    else:
        raise ConfigError(f"--label-field must be subject or benchmark, got {opt['label_field']!r}")
    metrics = agreement_metrics(assign, labels, nmi_normalization=opt["nmi_normalization"])
    doc = {
        "k": assign.k,
        "seed": assign.seed,
        "inertia": assign.inertia,
        "iterations": assign.iterations,
        "assignment": assign.assignment,
        "metrics": metrics,
    }
    _write_json(outdir / "cluster.json", doc)
    _log(f"cluster: k={assign.k} inertia {assign.inertia:.4f}")
    return {"out": str(outdir), "k": assign.k, "inertia": assign.inertia, "metrics": metrics}


def _cmd_check_props(opt: dict) -> dict:
    outdir = _prepare_outdir("check-props", opt)
    _log(f"check-props: {opt['trials']} trials per bound, {opt['pairs']} witness pairs")
    report = {
        "rank_swap_witnesses": check_prop1(pairs=opt["pairs"], seed=opt["seed"]),
        "probability_stability": check_prob_stability(opt["trials"], seed=opt["seed"]),
        "ability_shift": check_ability_shift(opt["trials"], seed=opt["seed"]),
    }
    report["violations_total"] = (
        report["rank_swap_witnesses"]["violations"]
        + report["probability_stability"]["violations"]
        + report["probability_stability"]["corollary_violations"]
        + report["ability_shift"]["violations"]
    )
    if outdir is not None:
        _write_json(outdir / "check_props.json", report)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        opt = _resolve_options(command, args)
        if command == "synth":
            summary = _cmd_synth(opt)
        elif command == "split":
            summary = _cmd_split(opt)
        elif command == "fit":
            summary = _cmd_fit(opt)
        elif command == "eval":
            summary = _cmd_eval(opt)
        elif command == "fit-2pl":
            summary = _cmd_fit_2pl(opt)
        elif command == "inclusion":
            summary = _cmd_inclusion(opt)
        elif command == "onboard":
            summary = _cmd_onboard(opt)
        elif command == "diagnose":
            summary = _cmd_diagnose(opt, args.mode)
        elif command == "cluster":
            summary = _cmd_cluster(opt)
        elif command == "check-props":
            summary = _cmd_check_props(opt)
        else:  # pragma: no cover - argparse restricts choices
            raise ConfigError(f"unknown command {command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except JeirtError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"data error: {exc}" + (f" ({name})" if name else ""), file=sys.stderr)
        return 3

    print(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    if command == "check-props" and summary["violations_total"] > 0:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
