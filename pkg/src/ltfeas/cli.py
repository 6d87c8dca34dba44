"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/IO error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .astro import load_catalog, save_catalog
from .augment import AdasynParams, adasyn
from .datagen import (FEASIBLE, TransferScenario, generate_dataset,
                      lambert_grid_search, read_dataset, synth_catalog)
from .errors import CatalogMiss, LtfeasError, NumericalFailure
from .features import (apply_scaler, build_feature_matrix, scenario_features,
                       read_feature_csv, write_feature_csv, Scaler, FEATURE_NAMES)
from .hyperopt import save_trials
from .metrics import report, roc_curve, write_report, write_roc_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        if "." in k:
            head, sub = k.split(".", 1)
            out.setdefault(head, {})[sub] = _json_value(v)
        else:
            out[k] = _json_value(v)
    return out


def _config(args, **flags):
    """Config file, then --set overrides, then explicit flags (flags win)."""
    overrides = _parse_set(args.set)
    for k, v in flags.items():
        if v is not None:
            if isinstance(v, dict) and isinstance(overrides.get(k), dict):
                overrides[k] = {**overrides[k], **v}
            else:
                overrides[k] = v
    try:
        return pipeline.load_config(args.config, overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, json.JSONDecodeError):
            raise
        raise UsageError(str(exc)) from None


def _emit(obj):
    print(json.dumps(obj, indent=1, default=float))


# --- subcommands --------------------------------------------------------------


def cmd_catalog_synth(args):
    cfg = _config(args, seed=args.seed)
    bodies = synth_catalog(args.n, cfg.seed)
    save_catalog(bodies, args.out)
    _emit({"bodies": len(bodies), "seed": cfg.seed, "out": str(args.out)})


def cmd_gen(args):
    cfg = _config(args, catalog=args.catalog, seed=args.seed, workers=args.workers)
    if cfg.catalog is None:
        raise UsageError("gen needs --catalog (or catalog in the config)")
    catalog = load_catalog(cfg.catalog)

    def progress(k, total):
        if args.verbose:
            print(f"\r{k}/{total}", end="", file=sys.stderr, flush=True)

    stats = generate_dataset(catalog, args.n, cfg.workers, cfg.seed, args.out,
                             solve_opts=cfg.solve_options, grid_step_days=cfg.grid_step_days,
                             progress=progress, physics=cfg.physics_obj)
    if args.verbose:
        print(file=sys.stderr)
    _emit({**stats, "n": args.n, "seed": cfg.seed})


def cmd_features(args):
    cfg = _config(args, catalog=args.catalog, dataset=args.dataset)
    if cfg.catalog is None or cfg.dataset is None:
        raise UsageError("features needs --dataset and --catalog")
    X, y = build_feature_matrix(read_dataset(cfg.dataset), load_catalog(cfg.catalog))
    write_feature_csv(args.out, FEATURE_NAMES, X, y)
    _emit({"rows": int(X.shape[0]), "columns": int(X.shape[1]), "feasible": int(y.sum())})


def _load_features(cfg, path):
    path = path or cfg.features
    if path is None:
        raise UsageError("a feature CSV is required (--features)")
    names, X, y = read_feature_csv(path)
    if X.shape[0] == 0:
        raise ValueError(f"{path}: no rows")
    return names, X, y


def _ranked(cfg, sp, ranking_path):
    if ranking_path:
        with open(ranking_path) as fh:
            ranked = json.load(fh)["names"]
        missing = set(ranked) - set(sp.names)
        if missing:
            raise ValueError(f"ranking names not in the feature file: {sorted(missing)[:5]}")
        return ranked
    return pipeline.rank_features(sp.X_tr, sp.y_tr, sp.names, cfg)[1]


def cmd_importance(args):
    cfg = _config(args, features=args.features, seed=args.seed, n_trees=args.n_trees,
                  workers=args.workers)
    names, X, y = _load_features(cfg, None)
    sp = pipeline.make_split(names, X, y, cfg)
    imp, ranked = pipeline.rank_features(sp.X_tr, sp.y_tr, sp.names, cfg)
    out = {"names": ranked, "importance": [float(imp[names.index(n)]) for n in ranked],
           "seed": cfg.seed, "config": cfg.to_json()}
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=1)
    _emit({"top": ranked[: min(10, len(ranked))], "out": str(args.out)})


def cmd_augment(args):
    cfg = _config(args, seed=args.seed, adasyn_k=args.k, adasyn_beta=args.beta)
    names, X, y = _load_features(cfg, args.features)
    Xa, ya = adasyn(X, y, AdasynParams(k=cfg.adasyn_k, beta=cfg.adasyn_beta, seed=cfg.seed))
    write_feature_csv(args.out, names, Xa, ya)
    _emit({"rows_in": int(y.size), "rows_out": int(ya.size), "synthetic": int(ya.size - y.size)})


def _hp_from(args, cfg):
    if getattr(args, "hp", None):
        with open(args.hp) as fh:
            hp = json.load(fh)
        # accept a trials file and take the best trial
        if isinstance(hp, list):
            ok = [t for t in hp if t.get("value") is not None]
            if not ok:
                raise ValueError(f"{args.hp}: no successful trial")
            hp = max(ok, key=lambda t: t["value"])["config"]
        return {**cfg.hyper, **hp}
    return cfg.hyper


def cmd_train(args):
    cfg = _config(args, features=args.features, seed=args.seed, top_k=args.top_k,
                  max_epochs=args.max_epochs, workers=args.workers)
    names, X, y = _load_features(cfg, None)
    sp = pipeline.make_split(names, X, y, cfg)
    ranked = _ranked(cfg, sp, args.ranking)
    cols = pipeline.columns(sp.names, ranked, min(cfg.top_k, len(ranked)))
    scaler, Xtr, ytr, Xva, _ = pipeline.scaled(sp, cols, augment=args.augment, cfg=cfg, seed=cfg.seed)
    model = pipeline.train_model(args.model, Xtr, ytr, Xva, sp.y_va, cfg, hp=_hp_from(args, cfg))
    scaler_out = Path(args.scaler_out or Path(args.out).with_name(Path(args.out).stem + ".scaler.json"))
    scaler.save(scaler_out)
    if args.model == "dnn":
        model.scaler_ref = str(scaler_out)
    pipeline.save_any_model(model, args.out)
    rep = pipeline.eval_metrics(model, Xva, sp.y_va)
    _emit({"model": args.model, "out": str(args.out), "scaler": str(scaler_out),
           "val_accuracy": rep["accuracy"], "val_auc": rep["auc"], "n_train": int(ytr.size)})


def cmd_tune(args):
    cfg = _config(args, features=args.features, seed=args.seed, top_k=args.top_k,
                  tune_budget=args.budget, tune_init=args.init, tune_batch=args.batch,
                  tune_objective=args.objective, tune_restarts=args.restarts,
                  gp_restarts=args.gp_restarts, max_epochs=args.max_epochs)
    names, X, y = _load_features(cfg, None)
    sp = pipeline.make_split(names, X, y, cfg)
    ranked = _ranked(cfg, sp, args.ranking)
    cols = pipeline.columns(sp.names, ranked, min(cfg.top_k, len(ranked)))
    _, Xtr, ytr, Xva, _ = pipeline.scaled(sp, cols)

    def log(t):
        if args.verbose:
            print(f"trial {t.index} (run {t.restart}): {t.value} ({t.wall_time:.1f}s)", file=sys.stderr)

    best, history = pipeline.tune((Xtr, ytr, Xva, sp.y_va), cfg, log)
    save_trials(history, args.out)
    _emit({"best": None if best is None else {"config": best.config, "value": best.value},
           "trials": len(history), "out": str(args.out)})


def _model_columns(scaler: Scaler, names):
    pos = {n: j for j, n in enumerate(names)}
    missing = [n for n in scaler.names if n not in pos]
    if missing:
        raise ValueError(f"feature file lacks columns required by the scaler: {missing[:5]}")
    return [pos[n] for n in scaler.names]


def cmd_eval(args):
    cfg = _config(args, features=args.features, seed=args.seed)
    names, X, y = _load_features(cfg, None)
    scaler = Scaler.load(args.scaler)
    model = pipeline.load_any_model(args.model)
    if args.split == "test":
        sp = pipeline.make_split(names, X, y, cfg)
        X, y = sp.X_te, sp.y_te
    Z = apply_scaler(scaler, X[:, _model_columns(scaler, names)])
    p = pipeline.predict_pos(model, Z)
    rep = report(y, p)
    rep.update({"seed": cfg.seed, "split": args.split, "config": cfg.to_json()})
    write_report(rep, args.out)
    roc_path = Path(args.roc or Path(args.out).with_name("roc.csv"))
    if 0 < y.sum() < y.size:
        write_roc_csv(*roc_curve(p, y), roc_path)
    _emit({k: rep[k] for k in ("counts", "accuracy", "precision", "recall", "f1", "f10", "auc")})


def cmd_predict(args):
    cfg = _config(args, catalog=args.catalog)
    if cfg.catalog is None:
        raise UsageError("predict needs --catalog")
    catalog = load_catalog(cfg.catalog)
    for b in (args.body1, args.body2):
        if b not in catalog:
            raise CatalogMiss(f"body {b} is not in the catalog")
    tof_ini, dv = args.tof_ini, args.lambert_dv
    if tof_ini is None or dv is None:
        tof_ini, dv = lambert_grid_search(catalog[args.body1], catalog[args.body2], args.epoch,
                                          cfg.grid_step_days)
    scen = TransferScenario(args.body1, args.body2, args.epoch, args.m0, args.tof, tof_ini, dv)
    values = scenario_features(scen, catalog)
    scaler = Scaler.load(args.scaler)
    model = pipeline.load_any_model(args.model)
    Z = apply_scaler(scaler, values[None, _model_columns(scaler, FEATURE_NAMES)])
    p = float(pipeline.predict_pos(model, Z)[0])
    _emit({"body1_id": args.body1, "body2_id": args.body2, "epoch_mjd": args.epoch,
           "m0_kg": args.m0, "tof_days": args.tof, "tof_ini_days": tof_ini, "lambert_dv_kms": dv,
           "p_feasible": p, "prediction": FEASIBLE if p >= 0.5 else "infeasible"})


def cmd_experiment(args):
    cfg = _config(args, features=args.features, seed=args.seed, out_dir=args.out_dir,
                  workers=args.workers)
    names, X, y = _load_features(cfg, None)
    out = pipeline.run_experiment(cfg, args.name, names, X, y)
    if isinstance(out, list):
        _emit({"experiment": args.name, "rows": len(out), "out_dir": cfg.out_dir})
    else:
        _emit({"experiment": args.name, "accuracy": out["accuracy"], "auc": out["auc"],
               "out_dir": cfg.out_dir})


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (JSON value; nested as physics.isp=3000)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ltfeas", description="Low-thrust transfer feasibility pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cat = sub.add_parser("catalog", help="catalog utilities")
    cat_sub = cat.add_subparsers(dest="catalog_command", required=True, parser_class=_Parser)
    s = cat_sub.add_parser("synth", parents=[common], help="synthesize a main-belt-like catalog")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_catalog_synth)

    s = sub.add_parser("gen", parents=[common], help="generate labelled transfers")
    s.add_argument("--catalog")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("features", parents=[common], help="build the 103-column feature CSV")
    s.add_argument("--dataset")
    s.add_argument("--catalog")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("importance", parents=[common], help="rank features on the training split")
    s.add_argument("--features")
    s.add_argument("--n-trees", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_importance)

    s = sub.add_parser("augment", parents=[common], help="ADASYN-oversample a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", parents=[common], help="train a classifier on the training split")
    s.add_argument("--model", choices=pipeline.MODEL_KINDS, default="dnn")
    s.add_argument("--features")
    s.add_argument("--ranking", help="importance JSON; ranked on the training split when omitted")
    s.add_argument("--top-k", type=int)
    s.add_argument("--hp", help="hyperparameter JSON object or trials file")
    s.add_argument("--augment", action="store_true", help="ADASYN on the training split")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--scaler-out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune", parents=[common], help="Bayesian optimization of the DNN")
    s.add_argument("--features")
    s.add_argument("--ranking")
    s.add_argument("--top-k", type=int)
    s.add_argument("--budget", type=int)
    s.add_argument("--init", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--restarts", type=int, help="independent BO runs, reseeded as seed + r")
    s.add_argument("--gp-restarts", type=int, help="starts of the GP hyperparameter fit")
    s.add_argument("--objective", choices=("accuracy", "f10"))
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("eval", parents=[common], help="evaluate a model with its scaler")
    s.add_argument("--model", required=True)
    s.add_argument("--scaler", required=True)
    s.add_argument("--features")
    s.add_argument("--split", choices=("test", "all"), default="test")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--roc")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="feasibility probability of one scenario")
    s.add_argument("--catalog")
    s.add_argument("--body1", type=int, required=True)
    s.add_argument("--body2", type=int, required=True)
    s.add_argument("--epoch", type=float, required=True, help="departure epoch (MJD)")
    s.add_argument("--m0", type=float, required=True, help="initial mass (kg)")
    s.add_argument("--tof", type=float, required=True, help="time of flight (days)")
    s.add_argument("--tof-ini", type=float, help="impulsive time of flight (days)")
    s.add_argument("--lambert-dv", type=float, help="impulsive delta-v (km/s)")
    s.add_argument("--model", required=True)
    s.add_argument("--scaler", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("experiment", parents=[common], help="run one experiment")
    s.add_argument("name", choices=pipeline.EXPERIMENTS)
    s.add_argument("--features")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"ltfeas: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"ltfeas: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, LtfeasError) as exc:
        print(f"ltfeas: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
