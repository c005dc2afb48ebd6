"""Command-line front end: ingest -> fit -> calibrate -> evaluate.

Runs are driven by a JSON config document; every config field can be
overridden by a flag of the same dotted name (e.g. --lp.l2_strength 0.01).
Diagnostics go to stderr; results are written to stdout and to files, and
are byte-identical across reruns with the same inputs and seed.

Exit codes: 0 success, 2 input error, 3 validation error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataset, grood_core, metrics, model_io, plots
from .errors import DataValidationError, InputError, NumericError, OodcalError
from .grood_core import OODPriorConfig
from .linear_probe import LPTrainConfig, lp_score, sweep_l2_strength, train_lp
from .nearest_mean import fit_nm

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

LP_FILE = "lp.gmdl"
NM_FILE = "nm.gmdl"
GROOD_FILE = "grood.gmdl"

DEFAULT_CONFIG = {
    "paths": {"embeddings": None, "manifest": None, "model_dir": None, "out": None},
    "lp": {
        "l2_strength": 1e-3,
        "l2_sweep": False,
        "validation_fraction": 0.1,
        "max_iterations": 1000,
        "gradient_tolerance": 1e-6,
        "l2_normalize_inputs": False,
        "seed": None,
    },
    "ood_prior": {
        "range_quantile": 0.90,
        "range_multiplier": 3.0,
        "mc_samples": 100_000,
        "seed": None,
    },
    "epsilon_grid": None,
    "eval_epsilons": [0.01, 0.05, 0.10, 0.20],
    "seed": 0,
}

# dotted config name -> parser for the CLI override string
_FIELD_PARSERS = {
    "paths.embeddings": str,
    "paths.manifest": str,
    "paths.model_dir": str,
    "paths.out": str,
    "lp.l2_strength": float,
    "lp.l2_sweep": lambda s: s.lower() in ("1", "true", "yes"),
    "lp.validation_fraction": float,
    "lp.max_iterations": int,
    "lp.gradient_tolerance": float,
    "lp.l2_normalize_inputs": lambda s: s.lower() in ("1", "true", "yes"),
    "lp.seed": int,
    "ood_prior.range_quantile": float,
    "ood_prior.range_multiplier": float,
    "ood_prior.mc_samples": int,
    "ood_prior.seed": int,
    "epsilon_grid": lambda s: [float(v) for v in s.split(",")],
    "eval_epsilons": lambda s: [float(v) for v in s.split(",")],
    "seed": int,
}

# convenience flags aliasing common dotted fields
_SHORTHAND = {
    "embeddings": "paths.embeddings",
    "manifest": "paths.manifest",
    "model_dir": "paths.model_dir",
    "out": "paths.out",
    "seed": "seed",
}


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _get_dotted(doc: dict, dotted: str):
    node = doc
    for key in dotted.split("."):
        if not isinstance(node, dict) or key not in node:
            return None
        node = node[key]
    return node


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: invalid JSON ({exc})") from exc
        for dotted in _FIELD_PARSERS:
            value = _get_dotted(user, dotted)
            if value is not None:
                _set_dotted(cfg, dotted, value)
    for dotted in _FIELD_PARSERS:
        value = getattr(args, dotted.replace(".", "__"), None)
        if value is not None:
            _set_dotted(cfg, dotted, value)
    for flag, dotted in _SHORTHAND.items():
        value = getattr(args, flag, None)
        if value is not None:
            _set_dotted(cfg, dotted, value)
    return cfg


def _lp_config(cfg: dict) -> LPTrainConfig:
    lp = cfg["lp"]
    seed = lp["seed"] if lp["seed"] is not None else cfg["seed"]
    return LPTrainConfig(
        l2_strength=float(lp["l2_strength"]),
        max_iterations=int(lp["max_iterations"]),
        gradient_tolerance=float(lp["gradient_tolerance"]),
        seed=int(seed),
        l2_normalize_inputs=bool(lp["l2_normalize_inputs"]),
    )


def _ood_config(cfg: dict) -> OODPriorConfig:
    prior = cfg["ood_prior"]
    seed = prior["seed"] if prior["seed"] is not None else cfg["seed"]
    return OODPriorConfig(
        range_quantile=float(prior["range_quantile"]),
        range_multiplier=float(prior["range_multiplier"]),
        mc_samples=int(prior["mc_samples"]),
        seed=int(seed),
    )


def _epsilon_grid(cfg: dict) -> np.ndarray:
    if cfg["epsilon_grid"] is None:
        return grood_core.default_epsilon_grid()
    return np.asarray(cfg["epsilon_grid"], dtype=np.float64)


def _require_path(cfg: dict, dotted: str, what: str) -> Path:
    value = _get_dotted(cfg, dotted)
    if not value:
        raise InputError(f"missing {what}: set {dotted} or the matching flag")
    return Path(value)


def _load_split(cfg: dict):
    embeddings = dataset.load_embeddings(_require_path(cfg, "paths.embeddings", "embeddings path"))
    manifest = dataset.load_manifest(_require_path(cfg, "paths.manifest", "manifest path"))
    return dataset.apply_split(embeddings, manifest)


def _emit(text: str, out_path: Path | None, filename: str) -> None:
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / filename).write_text(text)
    sys.stdout.write(text)


def _out_dir(cfg: dict) -> Path | None:
    value = _get_dotted(cfg, "paths.out")
    return Path(value) if value else None


def cmd_fit(cfg: dict) -> int:
    id_train, _, _ = _load_split(cfg)
    model_dir = _require_path(cfg, "paths.model_dir", "model output directory")
    model_dir.mkdir(parents=True, exist_ok=True)

    lp_config = _lp_config(cfg)
    sweep_result = None
    if cfg["lp"]["l2_sweep"]:
        best, scores = sweep_l2_strength(
            id_train, lp_config,
            validation_fraction=float(cfg["lp"]["validation_fraction"]),
        )
        sweep_result = {"chosen": best, "accuracy": {str(k): v for k, v in scores.items()}}
        lp_config = LPTrainConfig(
            l2_strength=best,
            max_iterations=lp_config.max_iterations,
            gradient_tolerance=lp_config.gradient_tolerance,
            seed=lp_config.seed,
            l2_normalize_inputs=lp_config.l2_normalize_inputs,
        )

    lp_model = train_lp(id_train, lp_config)
    nm_model = fit_nm(id_train, l2_normalize_inputs=lp_config.l2_normalize_inputs)
    model = grood_core.fit_grood(
        lp_model, nm_model, id_train,
        ood_config=_ood_config(cfg),
        epsilon_grid=_epsilon_grid(cfg),
    )

    model_io.save_linear_probe(model_dir / LP_FILE, lp_model)
    model_io.save_nearest_mean(model_dir / NM_FILE, nm_model)
    model_io.save_grood(model_dir / GROOD_FILE, model)

    grid = model.epsilon_grid
    summary = {
        "classes": model.class_count,
        "dim": lp_model.dim,
        "train_records": len(id_train),
        "lp": {
            "converged": lp_model.converged,
            "final_gradient_norm": lp_model.final_gradient_norm,
            "l2_strength": lp_model.train_config.l2_strength,
            "sweep": sweep_result,
        },
        "ood_prior": {"sigma_lp": model.ood.sigma_lp, "sigma_nm": model.ood.sigma_nm},
        "class_gaussians": [
            {
                "class": g.class_index,
                "mean": g.mean.tolist(),
                "cov": g.cov.tolist(),
                "degenerate": g.degenerate,
            }
            for g in model.class_gaussians
        ],
        "epsilon_grid": {"min": float(grid[0]), "max": float(grid[-1]), "size": int(grid.size)},
        "model_files": [LP_FILE, NM_FILE, GROOD_FILE],
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_calibrate(cfg: dict) -> int:
    model_dir = _require_path(cfg, "paths.model_dir", "model directory")
    model = model_io.load_grood(model_dir / GROOD_FILE)
    ood_config = _ood_config(cfg)
    grid = _epsilon_grid(cfg)
    strategies = grood_core.calibrate(model.class_gaussians, model.ood, grid, ood_config)
    model = grood_core.GroodModel(
        class_gaussians=model.class_gaussians,
        ood=model.ood,
        strategies=tuple(strategies),
        lp_model=model.lp_model,
        nm_model=model.nm_model,
        calibration_config=ood_config,
        class_names=model.class_names,
    )
    model_io.save_grood(model_dir / GROOD_FILE, model)
    summary = {
        "classes": model.class_count,
        "epsilon_grid": {"min": float(grid[0]), "max": float(grid[-1]), "size": int(grid.size)},
        "mc_samples": ood_config.mc_samples,
        "seed": ood_config.seed,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_model_and_queries(cfg: dict):
    model_dir = _require_path(cfg, "paths.model_dir", "model directory")
    model = model_io.load_grood(model_dir / GROOD_FILE)
    embeddings = dataset.load_embeddings(
        _require_path(cfg, "paths.embeddings", "embeddings path"))
    if embeddings.dim != model.lp_model.dim:
        raise DataValidationError(
            f"embedding dim {embeddings.dim} != model dim {model.lp_model.dim}")
    return model, embeddings


def cmd_score(cfg: dict) -> int:
    model, embeddings = _load_model_and_queries(cfg)
    scores = grood_core.calibrated_score(model, embeddings.vectors)
    lines = [f"{i}\t{s!r}" for i, s in enumerate(scores.tolist())]
    _emit("index\tscore\n" + "\n".join(lines) + "\n", _out_dir(cfg), "scores.tsv")
    return EXIT_OK


def cmd_decide(cfg: dict, epsilon: float) -> int:
    model, embeddings = _load_model_and_queries(cfg)
    verdicts = grood_core.decide(model, embeddings.vectors, epsilon)
    scores = grood_core.calibrated_score(model, embeddings.vectors)
    names = model.class_names or {}
    lines = []
    for i, (v, s) in enumerate(zip(verdicts.tolist(), scores.tolist())):
        label = "OOD" if v < 0 else names.get(v, f"class_{v}")
        lines.append(f"{i}\t{label}\t{s!r}")
    _emit("index\tverdict\tscore\n" + "\n".join(lines) + "\n", _out_dir(cfg), "decisions.tsv")
    return EXIT_OK


def _scored_samples(model, id_test):
    scores = grood_core.calibrated_score(model, id_test.vectors)
    preds = grood_core.predict_class(model, id_test.vectors)
    return [
        metrics.ScoredSample(score=float(s), true_label=int(t), predicted_label=int(p))
        for s, t, p in zip(scores, id_test.labels, preds)
    ]


def cmd_evaluate(cfg: dict) -> int:
    model_dir = _require_path(cfg, "paths.model_dir", "model directory")
    model = model_io.load_grood(model_dir / GROOD_FILE)
    _, id_test, ood_test = _load_split(cfg)
    if len(id_test) == 0:
        raise DataValidationError("id_test split is empty")
    if len(ood_test) == 0:
        raise DataValidationError("ood_test split is empty")
    if id_test.dim != model.lp_model.dim:
        raise DataValidationError(
            f"embedding dim {id_test.dim} != model dim {model.lp_model.dim}")
    if id_test.class_count != model.class_count:
        raise DataValidationError(
            f"split has {id_test.class_count} classes, model has {model.class_count}")

    id_samples = _scored_samples(model, id_test)
    ood_scores = grood_core.calibrated_score(model, ood_test.vectors)
    report = metrics.build_report(id_samples, ood_scores, cfg["eval_epsilons"])

    out = _out_dir(cfg)
    _emit(report.to_json(), out, "report.json")
    if out is not None:
        with open(out / "rejection.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "threshold", "rejection_rate"])
            writer.writerows(report.rejection_csv_rows())
        roc = metrics.roc_curve_points([s.score for s in id_samples], ood_scores)
        with open(out / "roc.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            writer.writerows(roc)
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    """Mis-calibration tables and figures: raw max-logit vs calibrated."""
    model_dir = _require_path(cfg, "paths.model_dir", "model directory")
    model = model_io.load_grood(model_dir / GROOD_FILE)
    _, id_test, ood_test = _load_split(cfg)
    if len(id_test) == 0:
        raise DataValidationError("id_test split is empty")
    out = _out_dir(cfg)
    if out is None:
        raise InputError("report needs an output directory: set paths.out or --out")
    out.mkdir(parents=True, exist_ok=True)

    eval_epsilons = [float(e) for e in cfg["eval_epsilons"]]
    raw_scores = lp_score(model.lp_model, id_test.vectors)
    cal_scores = grood_core.calibrated_score(model, id_test.vectors)
    labels = id_test.labels

    # shared raw thresholds chosen so the pooled rejection rate matches each
    # target; calibrated scores are thresholded at the target itself
    sorted_raw = np.sort(raw_scores)
    raw_taus = [
        float(sorted_raw[grood_core.nearest_rank(eps, sorted_raw.size) - 1])
        for eps in eval_epsilons
    ]

    def class_curves(scores, taus):
        samples = [
            metrics.ScoredSample(score=float(s), true_label=int(t), predicted_label=-1)
            for s, t in zip(scores, labels)
        ]
        return metrics.per_class_rejection_curve(samples, taus)

    raw_curves = class_curves(raw_scores, raw_taus)
    cal_curves = class_curves(cal_scores, eval_epsilons)

    with open(out / "miscalibration.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_type", "target_rate", "threshold", "class", "rejection_rate"])
        for i, eps in enumerate(eval_epsilons):
            for k in sorted(raw_curves):
                writer.writerow(["raw_max_logit", eps, raw_taus[i], k,
                                 raw_curves[k][i][1]])
            for k in sorted(cal_curves):
                writer.writerow(["calibrated", eps, eps, k, cal_curves[k][i][1]])

    plots.save_rejection_figure(out / "miscalibration.png", raw_curves, cal_curves)
    if len(ood_test) > 0:
        ood_scores = grood_core.calibrated_score(model, ood_test.vectors)
        roc = metrics.roc_curve_points(cal_scores, ood_scores)
        with open(out / "roc.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            writer.writerows(roc)
        plots.save_roc_figure(out / "roc.png", roc,
                              metrics.auroc(cal_scores, ood_scores))
    summary = {
        "out_dir": str(out),
        "files": sorted(p.name for p in out.iterdir()),
        "eval_epsilons": eval_epsilons,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodcal",
        description="Calibrated OOD detection over embedding files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("fit", "train LP/NM, fit Gaussians, calibrate, write model files"),
        ("calibrate", "re-run calibration on an existing model with a new grid"),
        ("score", "calibrated scores for an embedding file"),
        ("decide", "calibrated ID/OOD verdicts at a chosen epsilon"),
        ("evaluate", "metric report for the id_test/ood_test split"),
        ("report", "mis-calibration tables and figures"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON config document")
        cmd.add_argument("--embeddings", help="embedding .gemb file")
        cmd.add_argument("--manifest", help="split manifest JSON")
        cmd.add_argument("--model-dir", dest="model_dir", help="model directory")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--seed", type=int, help="master RNG seed")
        if name == "decide":
            cmd.add_argument("--epsilon", type=float, required=True,
                             help="target ID false-rejection rate")
        for dotted, parse in _FIELD_PARSERS.items():
            if dotted in ("seed",):
                continue
            cmd.add_argument(f"--{dotted}", dest=dotted.replace(".", "__"),
                             type=parse, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            cfg = load_config(args)
            if args.command == "fit":
                return cmd_fit(cfg)
            if args.command == "calibrate":
                return cmd_calibrate(cfg)
            if args.command == "score":
                return cmd_score(cfg)
            if args.command == "decide":
                return cmd_decide(cfg, args.epsilon)
            if args.command == "evaluate":
                return cmd_evaluate(cfg)
            if args.command == "report":
                return cmd_report(cfg)
            raise InputError(f"unknown command {args.command}")
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DataValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OodcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
