"""Command-line entry point: ``clinaudit <subcommand> [options]``.

Every subcommand accepts ``--input``, ``--out``, ``--seed`` and ``--config``
(a YAML file whose keys are option names; explicit flags win).  Each run
writes ``report.json`` plus CSV/JSON-lines artifacts into ``--out``.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import attacks, calibration, dca, explain, fairness, federated, metrics, privacy, validation
from .data import Dataset, load_csv, make_folds, split_holdout, write_csv
from .errors import ClinAuditError, DataError, NumericError
from .models import Architecture, ActivationSpec, Model, TrainConfig, predict_proba, train, train_tree
from .predictions import PredictionSet, load_predictions
from .report import SCHEMA_VERSION, EvaluationReport, merge_reports

OUT_ENV = "CLINAUDIT_OUT"
DEFAULT_OUT = "clinaudit-out"

logger = logging.getLogger("clinaudit")


class UsageError(ClinAuditError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- argument groups


def _common(p):
    p.add_argument("--input", help="input CSV")
    p.add_argument("--out", default=os.environ.get(OUT_ENV, DEFAULT_OUT),
                   help=f"output directory (default ${OUT_ENV} or {DEFAULT_OUT})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="YAML file of option defaults")
    p.add_argument("--label-column", default="label")
    p.add_argument("--group-column", default="group")
    p.add_argument("--impute", choices=["error", "mean"], default="error")


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="trained model JSON (skips training where applicable)")
    g.add_argument("--model-kind", choices=["logistic", "mlp", "tree"], default="logistic")
    g.add_argument("--hidden", default="16", help="comma-separated hidden widths for mlp")
    g.add_argument("--activation", choices=["relu", "softplus"], default="relu")
    g.add_argument("--beta", type=float, default=1.0, help="softplus sharpness")
    g.add_argument("--lr", type=float, default=0.1)
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--weight-decay", type=float, default=0.0)
    g.add_argument("--max-depth", type=int, default=3)
    g.add_argument("--min-leaf", type=int, default=1)


def _dp_args(p):
    g = p.add_argument_group("differential privacy")
    g.add_argument("--dp", action="store_true", help="train with DP-SGD")
    g.add_argument("--clip", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--steps", type=int, default=None)
    g.add_argument("--dp-epsilon", type=float, default=1.0, help="per-step epsilon recorded for composition")
    g.add_argument("--dp-delta", type=float, default=0.0, help="per-step delta recorded for composition")


def _prediction_args(p):
    p.add_argument("--score-column", default="score")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clinaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"clinaudit report schema {SCHEMA_VERSION}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="hold-out / k-fold / LOOCV / nested CV / external validation")
    _common(p)
    _model_args(p)
    p.add_argument("--mode", choices=["holdout", "kfold", "loocv", "nested", "external"], default="kfold")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--grid", default="0,0.001,0.01,0.1", help="weight-decay grid for nested CV")
    p.add_argument("--inner-k", type=int, default=3)
    p.add_argument("--external", help="external cohort CSV (mode=external)")
    p.add_argument("--metrics", default="accuracy,auc,log_loss,sensitivity,specificity")

    p = sub.add_parser("calibrate", help="calibration curve, alpha/beta, ECE, recalibration")
    _common(p)
    _prediction_args(p)
    p.add_argument("--model", help="model JSON; --input is then a dataset CSV")
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)
    p.add_argument("--binning", choices=["equal_width", "equal_frequency"], default="equal_width")

    p = sub.add_parser("dca", help="decision curve analysis")
    _common(p)
    _prediction_args(p)
    p.add_argument("--model", help="model JSON; --input is then a dataset CSV")
    p.add_argument("--comparator", action="append", default=[], help="0/1 column of a binary test (repeatable)")
    p.add_argument("--grid-start", type=float, default=0.01)
    p.add_argument("--grid-stop", type=float, default=0.99)
    p.add_argument("--grid-step", type=float, default=0.01)

    p = sub.add_parser("fairness", help="group metrics, parity and fairness gaps")
    _common(p)
    _prediction_args(p)
    p.add_argument("--model", help="model JSON; --input is then a dataset CSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)

    p = sub.add_parser("explain", help="permutation importance, exact Shapley, surrogate fidelity")
    _common(p)
    _model_args(p)
    p.add_argument("--method", choices=["permutation", "shapley", "surrogate"], default="permutation")
    p.add_argument("--metric", default="auc")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--instance", type=int, default=0, help="row index explained by shapley")
    p.add_argument("--background-size", type=int, default=100)
    p.add_argument("--surrogate-depth", type=int, default=3)

    p = sub.add_parser("train", help="train a model (optionally with DP-SGD)")
    _common(p)
    _model_args(p)
    _dp_args(p)
    p.add_argument("--test", help="held-out CSV to score the trained model on")

    p = sub.add_parser("fedsim", help="federated averaging simulation")
    _common(p)
    _model_args(p)
    _dp_args(p)
    p.add_argument("--scenario", help="YAML scenario defining the federation config")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--local-epochs", type=int, default=1)
    p.add_argument("--partition", choices=["iid", "label-skew"], default="iid")
    p.add_argument("--dropout", type=float, default=0.0)

    p = sub.add_parser("attack", help="membership inference and evasion attacks")
    p.add_argument("kind", choices=["mia", "fgsm", "pgd", "zoo"])
    _common(p)
    _model_args(p)
    _dp_args(p)
    p.add_argument("--shadows", type=int, default=4)
    p.add_argument("--attack-features", choices=["confidence", "loss", "both"], default="both")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--lower", type=float, default=None, help="domain lower bound")
    p.add_argument("--upper", type=float, default=None, help="domain upper bound")

    p = sub.add_parser("report", help="merge report JSON files")
    _common(p)
    p.add_argument("reports", nargs="+")
    return parser


# ---------------------------------------------------------------- helpers


def _config_echo(args) -> dict:
    skip = {"out", "config", "func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _arch(args) -> Architecture:
    if args.model_kind == "logistic":
        return Architecture()
    hidden = tuple(int(h) for h in str(args.hidden).split(",") if h.strip())
    return Architecture(hidden, ActivationSpec(args.activation, args.beta))


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       weight_decay=args.weight_decay, seed=args.seed)


def _priv(args) -> privacy.PrivacySpec:
    return privacy.PrivacySpec(epsilon=args.dp_epsilon, delta=args.dp_delta, clip=args.clip,
                               sigma=args.sigma, steps=args.steps)


def _load(args, path=None) -> Dataset:
    path = path or args.input
    if not path:
        raise UsageError("--input is required")
    return load_csv(path, args.label_column, args.group_column, args.impute)


def _fit(args, ds: Dataset) -> tuple[Model, list[dict]]:
    if args.model_kind == "tree":
        return train_tree(ds, args.max_depth, args.min_leaf), []
    if getattr(args, "dp", False):
        return privacy.dp_sgd_train(ds, _arch(args), _train_cfg(args), _priv(args))
    return train(ds, _arch(args), _train_cfg(args)), []


def _predictions(args, extra_columns=()) -> PredictionSet:
    if getattr(args, "model", None):
        ds = _load(args)
        return PredictionSet(ds.labels, predict_proba(Model.load(args.model), ds.features), ds.group)
    if not args.input:
        raise UsageError("--input is required")
    return load_predictions(args.input, args.label_column, args.score_column, args.group_column, extra_columns)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------- subcommands


def cmd_validate(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("validate", _config_echo(args), args.seed)
    names = [m for m in args.metrics.split(",") if m]
    ds = _load(args)
    arch, cfg = _arch(args), _train_cfg(args)
    fit = None
    if args.model_kind == "tree":
        fit = lambda d: train_tree(d, args.max_depth, args.min_leaf)  # noqa: E731

    if args.mode == "holdout":
        train_ds, test_ds = split_holdout(ds, args.train_fraction, args.stratified, args.seed)
        model = fit(train_ds) if fit else train(train_ds, arch, cfg)
        p = predict_proba(model, test_ds.features)
        rep.metrics = {n: metrics.score(n, test_ds.labels, p) for n in names}
        rep.metrics["error_bound_delta_0.05"] = metrics.holdout_error_bound(test_ds.n, 0.05)
        rep.tables["split"] = {"n_train": train_ds.n, "n_test": test_ds.n,
                               "train_positives": int(train_ds.labels.sum()),
                               "test_positives": int(test_ds.labels.sum())}
        return rep
    if args.mode == "external":
        if not args.external:
            raise UsageError("--external is required for mode=external")
        model = Model.load(args.model) if args.model else (fit(ds) if fit else train(ds, arch, cfg))
        external = _load(args, args.external)
        result = validation.evaluate_external(model, external, names)
        internal = {n: metrics.score(n, ds.labels, predict_proba(model, ds.features)) for n in names}
        rep.metrics = {"external": result["metrics"], "internal": internal,
                       "external_calibration_alpha": result["calibration_alpha"],
                       "external_calibration_beta": result["calibration_beta"]}
        rep.warnings += result.get("warnings", [])
        return rep

    mode = "loocv" if args.mode == "loocv" else ("stratified" if args.stratified else "plain")
    folds_csv, fold_tables = [], []
    for r in range(args.repeats):
        seed = args.seed + r
        plan = make_folds(ds, args.k, mode, seed)
        if args.mode == "nested":
            grid = [{"weight_decay": float(v)} for v in args.grid.split(",") if v.strip()]
            res = validation.nested_cross_validate(ds, arch, grid, plan, args.inner_k, cfg, names)
            cv = res.cv
            rep.tables.setdefault("chosen", []).append(res.chosen)
        else:
            cv = validation.cross_validate(ds, arch, cfg, plan, names, fit=fit)
        counts = plan.class_counts(ds.labels)
        for row, c in zip(cv.rows, counts):
            fold_tables.append({"repeat": r, **row, **c})
        rep.metrics[f"repeat_{r}"] = {"mean": cv.mean, "sd": cv.sd, "pooled_auc": cv.pooled_auc}
    rep.tables["folds"] = fold_tables
    all_means = {n: [row[n] for row in fold_tables if row[n] is not None] for n in names}
    rep.metrics["mean"] = {n: (float(np.mean(v)) if v else None) for n, v in all_means.items()}
    folds_csv = out / "cv_folds.csv"
    _write_rows(folds_csv, fold_tables)
    rep.curves["folds"] = folds_csv.name
    return rep


def cmd_calibrate(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("calibrate", _config_echo(args), args.seed)
    preds = _predictions(args)
    cr = calibration.calibration_report(preds.y, preds.p, args.bins, args.binning)
    rep.metrics = {"alpha": cr.alpha, "beta": cr.beta, "ece": cr.ece, "n": preds.n,
                   "events": int(preds.y.sum())}
    rep.tables["bins"] = cr.bins.rows()
    rep.warnings += cr.warnings
    try:
        rep.tables["recalibration"] = calibration.recalibrate(preds.y, preds.p).to_dict()
    except ClinAuditError as exc:
        rep.warnings.append(f"recalibration unavailable: {exc}")
    path = out / "calibration_curve.csv"
    cr.bins.to_csv(path)
    rep.curves["calibration"] = path.name
    return rep


def cmd_dca(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("dca", _config_echo(args), args.seed)
    preds = _predictions(args, tuple(args.comparator))
    grid = dca.default_grid(args.grid_start, args.grid_stop, args.grid_step)
    curve = dca.decision_curve(preds.y, preds.p, grid, {c: preds.extra[c] for c in args.comparator})
    path = out / "decision_curve.csv"
    curve.to_csv(path)
    rep.curves["decision_curve"] = path.name
    rep.metrics = {"prevalence": curve.prevalence, "n": preds.n,
                   "max_nb_model": float(curve.nb_model.max()),
                   "thresholds_model_beats_both": int(np.sum((curve.nb_model > curve.nb_treat_all)
                                                             & (curve.nb_model > 0)))}
    return rep


def cmd_fairness(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("fairness", _config_echo(args), args.seed)
    preds = _predictions(args)
    if preds.group is None:
        raise DataError(f"fairness needs a {args.group_column!r} column")
    fr = fairness.fairness_report(preds.y, preds.p, preds.group, args.threshold, args.bins)
    doc = fr.to_dict()
    rep.metrics = {k: doc[k] for k in ("spd", "independence_gap", "separation_gap", "sufficiency_gap",
                                       "tpr_gap", "fpr_gap")}
    rep.tables = {"groups": doc["groups"], "calibration": doc["calibration"]}
    rep.warnings += doc["warnings"]
    return rep


def cmd_explain(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("explain", _config_echo(args), args.seed)
    ds = _load(args)
    model = Model.load(args.model) if args.model else _fit(args, ds)[0]
    if args.method == "permutation":
        attr = explain.permutation_importance(model, ds, args.metric, args.repeats, args.seed)
    elif args.method == "shapley":
        if not 0 <= args.instance < ds.n:
            raise UsageError("--instance out of range")
        rng = np.random.default_rng(args.seed)
        bg = ds.subset(np.sort(rng.permutation(ds.n)[:min(args.background_size, ds.n)]))
        attr = explain.shapley_exact(model, ds.features[args.instance], bg)
        rep.metrics["prediction"] = float(predict_proba(model, ds.features[args.instance]))
        rep.metrics["background_mean"] = float(np.mean(predict_proba(model, bg.features)))
    else:
        surrogate = explain.fit_tree_surrogate(model, ds, args.surrogate_depth, max(args.min_leaf, 1))
        rep.metrics = {"fidelity": explain.surrogate_fidelity(model, surrogate, ds),
                       "parsimony_leaves": explain.surrogate_parsimony(surrogate)}
        surrogate.save(out / "surrogate.json")
        rep.curves["surrogate"] = "surrogate.json"
        return rep
    path = out / "attributions.csv"
    attr.to_csv(path)
    rep.curves["attributions"] = path.name
    rep.tables["attribution"] = attr.to_dict()
    return rep


def cmd_train(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("train", _config_echo(args), args.seed)
    ds = _load(args)
    model, log = _fit(args, ds)
    model.save(out / "model.json")
    rep.curves["model"] = "model.json"
    p = predict_proba(model, ds.features)
    rep.metrics["train"] = {n: metrics.score(n, ds.labels, p) for n in ("accuracy", "auc", "log_loss")}
    PredictionSet(ds.labels, p, ds.group).to_csv(out / "train_predictions.csv")
    rep.curves["train_predictions"] = "train_predictions.csv"
    if args.dp:
        privacy.write_audit_log(log, out / "dp_audit.jsonl")
        rep.curves["dp_audit"] = "dp_audit.jsonl"
        eps, delta = privacy.compose_privacy([(args.dp_epsilon, args.dp_delta)] * len(log))
        rep.metrics["dp"] = {"steps": len(log), "clip": args.clip, "sigma": args.sigma,
                             "basic_composition_epsilon": eps, "basic_composition_delta": delta,
                             "max_clipped_norm": max((e["max_clipped_norm"] for e in log), default=0.0)}
        rep.warnings.append("basic composition is a loose upper bound on the privacy loss")
    if args.test:
        test = _load(args, args.test)
        pt = predict_proba(model, test.features)
        rep.metrics["test"] = {n: metrics.score(n, test.labels, pt) for n in ("accuracy", "auc", "log_loss")}
        PredictionSet(test.labels, pt, test.group).to_csv(out / "test_predictions.csv")
        rep.curves["test_predictions"] = "test_predictions.csv"
    return rep


def cmd_fedsim(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport("fedsim", _config_echo(args), args.seed)
    ds = _load(args)
    if args.scenario:
        doc = yaml.safe_load(Path(args.scenario).read_text(encoding="utf-8")) or {}
        fed = federated.FederationConfig.from_dict(doc)
    else:
        fed = federated.FederationConfig(args.clients, args.rounds, args.fraction, args.local_epochs,
                                         args.partition, privacy=_priv(args) if args.dp else None,
                                         dropout=args.dropout, seed=args.seed)
    rep.config["federation"] = fed.to_dict()
    model, records = federated.fedavg_run(ds, fed, _arch(args), _train_cfg(args))
    federated.write_round_log(records, out / "rounds.jsonl")
    model.save(out / "model.json")
    rep.curves.update({"rounds": "rounds.jsonl", "model": "model.json"})
    rep.metrics = {"final": records[-1].metrics if records else {}, "rounds": len(records)}
    rep.tables["rounds"] = [r.to_dict() for r in records]
    return rep


def cmd_attack(args, out: Path) -> EvaluationReport:
    rep = EvaluationReport(f"attack {args.kind}", _config_echo(args), args.seed)
    ds = _load(args)
    if args.kind == "mia":
        rng = np.random.default_rng(args.seed)
        perm = rng.permutation(ds.n)
        m = ds.n // 4
        if m < 2:
            raise DataError("dataset too small for a membership inference split")
        members, nonmembers, pool = ds.subset(perm[:m]), ds.subset(perm[m:2 * m]), ds.subset(perm[2 * m:])
        if args.model:
            raise UsageError("mia trains its own target; --model is not accepted")
        target, _ = _fit(args, members)
        setup = attacks.MiaSetup(target, _arch(args), _train_cfg(args), args.shadows, args.attack_features, args.seed)
        res = attacks.mia_shadow_attack(setup, members, nonmembers, pool, target_train_ids=members.row_ids)
        rep.metrics = {"auc": res.auc, "advantage": res.advantage, "n_members": members.n}
        rep.tables["attack"] = res.to_dict()
        return rep
    model = Model.load(args.model) if args.model else _fit(args, ds)[0]
    bounds = None
    if args.lower is not None or args.upper is not None:
        bounds = (-np.inf if args.lower is None else args.lower, np.inf if args.upper is None else args.upper)
    if args.kind == "zoo" and ds.n > 200:
        rep.warnings.append("zoo attack limited to the first 200 rows")
        ds = ds.subset(np.arange(200))
    res = attacks.evasion_attack(model, ds, args.kind, args.eps, args.alpha, args.iters, bounds, args.h)
    rep.metrics = {"success_rate": res.success_rate,
                   "max_linf": float(np.max(np.abs(res.adversarial - ds.features))) if ds.n else 0.0}
    rep.tables["attack"] = res.to_dict()
    write_csv(ds.with_features(res.adversarial), out / "adversarial.csv")
    rep.curves["adversarial"] = "adversarial.csv"
    return rep


def cmd_report(args, out: Path) -> EvaluationReport:
    reports = [EvaluationReport.read(p) for p in args.reports]
    merged = merge_reports(reports, args.seed)
    merged.config["merge_inputs"] = [str(p) for p in args.reports]
    return merged


COMMANDS = {"validate": cmd_validate, "calibrate": cmd_calibrate, "dca": cmd_dca, "fairness": cmd_fairness,
            "explain": cmd_explain, "train": cmd_train, "fedsim": cmd_fedsim, "attack": cmd_attack,
            "report": cmd_report}


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(1)
    if args.config:
        try:
            doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise DataError("config file must hold a mapping of option names to values")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        defaults = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(defaults) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rep = COMMANDS[args.command](args, out)
        path = rep.write(out / "report.json")
        print(path)
        return 0
    except SystemExit as exc:
        # argparse exits on --help/--version and on malformed flags
        return exc.code if isinstance(exc.code, int) else 1
    except UsageError as exc:
        print(f"clinaudit: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"clinaudit: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"clinaudit: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"clinaudit: usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
