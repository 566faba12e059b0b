"""Command-line interface: convert, train, crossval, explain."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import DataFormatError, Normalizer, load_dataset, write_canonical_csv
from .graph import parse_eta
from .interpret import collect_explanations, write_explanation_csv, write_heatmap
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainedModel, run_cross_validation, train_one_model

FORMATS = ("canonical", "svmlight-bags")


class ConfigError(ValueError):
    pass


def _eta_arg(text):
    try:
        return parse_eta(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _data_flags(p, required=True):
    p.add_argument("--data", required=required, help="dataset path")
    p.add_argument("--format", choices=FORMATS, default="canonical", help="dataset format")


def _model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--pool", choices=("diffpool", "attention"), default="diffpool", help="graph aggregation")
    g.add_argument("--eta", type=_eta_arg, default="INF", help="edge threshold: number, INF, or percentile pNN")
    g.add_argument("--clusters", type=int, choices=(1, 2), default=1, help="clusters C")
    g.add_argument("--readout", choices=("max", "concat"), default="max", help="readout for C=2")
    g.add_argument("--ds-weight", type=float, default=0.5, help="deep-supervision loss weight")
    g.add_argument("--lp-weight", type=float, default=0.5, help="link-prediction loss weight")
    g.add_argument("--lp-raw", action="store_true", help="do not divide the link loss by K^2")
    g.add_argument("--ds-pool", choices=("max", "mean"), default="max", help="node pooling for DS heads")
    g.add_argument("--embed-dim", type=int, default=None, help="node embedding width (default: input dim)")
    g.add_argument("--self-loops", action="store_true", help="keep A_mm = 1 for eta > 0")
    g.add_argument("--cluster-input", choices=("V", "Z"), default="V", help="input of the cluster GNN")
    g.add_argument("--no-sage-bias", action="store_true", help="drop the bias of SAGE layers")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=None, help="seed (falls back to $MILGRAPH_SEED, then 1)")
    g.add_argument("--epochs", type=int, default=50, help="training epochs")
    g.add_argument("--batch-size", type=int, default=128, help="bags per optimiser step")
    g.add_argument("--lr", type=float, default=3e-4, help="peak learning rate")
    g.add_argument("--weight-decay", type=float, default=1e-3, help="decoupled weight decay")
    g.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw", help="optimiser")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="milgraph", description="Graph neural networks for multiple instance learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a dataset to canonical CSV", formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="train on a whole dataset and save a checkpoint", formatter_class=fmt)
    p.add_argument("--config", help="key=value file; flags override it")
    _data_flags(p)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")

    p = sub.add_parser("crossval", help="repeated stratified k-fold cross-validation", formatter_class=fmt)
    p.add_argument("--config", help="key=value file; flags override it")
    _data_flags(p)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--folds", type=int, default=10, help="folds per repeat")
    p.add_argument("--repeats", type=int, default=1, help="CV repeats")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.add_argument("--out", default="cv_out", help="report directory")

    p = sub.add_parser("explain", help="export assignment / attention heatmaps", formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--bags", default=None, help="comma-separated bag ids (default: all)")
    p.add_argument("--out", default="explain_out", help="output directory")
    p.add_argument("--stretch", action="store_true", help="min-max contrast stretch per bag")
    return parser


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from ``--config``; unknown keys are errors."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    path = pre.parse_known_args(argv)[0].config
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if not path or command not in ("train", "crossval"):
        return parser.parse_args(argv)
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in read_config_file(path).items():
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        value = action.type(raw) if action.type else raw
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config key {key!r}: {raw!r} not in {list(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)
    # argparse treats required options as missing even with a default
    for key in defaults:
        actions[key].required = False
    return parser.parse_args(argv)


def resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MILGRAPH_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MILGRAPH_SEED must be an integer, got {env!r}") from None
    return 1


def model_config_from_args(args):
    try:
        return _model_config(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _model_config(args):
    return ModelConfig(
        pool=args.pool,
        eta=parse_eta(args.eta),
        clusters=args.clusters,
        readout=args.readout,
        ds_weight=args.ds_weight,
        lp_weight=args.lp_weight,
        lp_normalize=not args.lp_raw,
        ds_pool=args.ds_pool,
        embed_dim=args.embed_dim,
        self_loops=args.self_loops,
        cluster_input=args.cluster_input,
        sage_bias=not args.no_sage_bias,
    ).validate()


def train_config_from_args(args):
    try:
        return _train_config(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=resolve_seed(args),
        repeats=getattr(args, "repeats", 1),
        folds=getattr(args, "folds", 10),
        optimizer=args.optimizer,
        jobs=getattr(args, "jobs", 1),
    ).validate()


def _echo(command, **sections):
    print(f"config {command}: " + json.dumps(sections, sort_keys=True, default=str))


def cmd_convert(args):
    ds = load_dataset(args.data, args.format)
    write_canonical_csv(ds, args.out)
    print(ds.summary())
    return 0


def cmd_train(args):
    mcfg, tcfg = model_config_from_args(args), train_config_from_args(args)
    _echo("train", data=args.data, format=args.format, checkpoint=args.checkpoint,
          model=mcfg.to_dict(), train=vars(tcfg))
    ds = load_dataset(args.data, args.format)
    model = train_one_model(ds.bags, mcfg, tcfg, ds.n_classes, key=(0, 0))
    save_checkpoint(
        args.checkpoint,
        model.params,
        mcfg,
        normalizer=model.normalizer.to_dict(),
        eta=model.eta if model.eta != float("inf") else "INF",
        train_config=vars(tcfg),
        dataset=ds.name,
    )
    acc = float((model.predict(ds.bags) == ds.labels).mean())
    print(f"trained {ds.summary()} final_loss={model.curve[-1]:.6f} train_acc={acc:.4f}")
    return 0


def cmd_crossval(args):
    mcfg, tcfg = model_config_from_args(args), train_config_from_args(args)
    _echo("crossval", data=args.data, format=args.format, out=args.out, model=mcfg.to_dict(), train=vars(tcfg))
    ds = load_dataset(args.data, args.format)
    report = run_cross_validation(ds, mcfg, tcfg)
    report_path, folds_path = report.write(args.out)
    print(f"mean_acc {report.acc_mean:.4f} ± {report.acc_std:.4f}  f1 {report.f1_mean:.4f}")
    print(f"wrote {report_path} and {folds_path}")
    return 0


def load_trained(path):
    params, mcfg, doc = load_checkpoint(path)
    eta = doc["eta"]
    eta = float("inf") if eta == "INF" else float(eta)
    return TrainedModel(params, mcfg, Normalizer.from_dict(doc["normalizer"]), eta)


def cmd_explain(args):
    if not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    _echo("explain", data=args.data, format=args.format, checkpoint=args.checkpoint, bags=args.bags,
          out=args.out, stretch=args.stretch)
    model = load_trained(args.checkpoint)
    ds = load_dataset(args.data, args.format)
    bags = ds.bags
    if args.bags:
        wanted = [b.strip() for b in args.bags.split(",") if b.strip()]
        by_id = {b.id: b for b in ds.bags}
        missing = [b for b in wanted if b not in by_id]
        if missing:
            raise ConfigError(f"unknown bag ids: {', '.join(missing)}")
        bags = [by_id[b] for b in wanted]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = collect_explanations(model, bags)
    for rec in records:
        write_heatmap(rec, out / f"{rec.bag_id}.pgm", stretch=args.stretch)
    write_explanation_csv(records, out / "explanations.csv")
    print(f"wrote {len(records)} {records[0].kind if records else ''} records to {out}")
    return 0


COMMANDS = {"convert": cmd_convert, "train": cmd_train, "crossval": cmd_crossval, "explain": cmd_explain}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except (ConfigError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
