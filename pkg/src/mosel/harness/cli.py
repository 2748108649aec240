"""Command line interface: ``mosel generate | train | eval | inspect | report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from mosel import __version__, chansim
from mosel.estimators import DEFAULT_RHO, DEFAULT_XI
from mosel.harness import pipeline as pl
from mosel.harness.config import ConfigError, read_config
from mosel.neuralnet import TrainConfig, TrainingDiverged, load_model, save_model

log = logging.getLogger("mosel")

CARRIER_PRESETS = {"baseband": chansim.BASEBAND, "updown": chansim.UPLINK_DOWNLINK}


def carriers(text: str) -> tuple[float, ...]:
    text = text.strip()
    if text in CARRIER_PRESETS:
        return CARRIER_PRESETS[text]
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad carrier list {text!r}") from None


def _add_generate(sub):
    p = sub.add_parser("generate", help="simulate a dataset and its features")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--samples-per-class", type=int, default=3000)
    p.add_argument("--l-max", type=int, default=5)
    p.add_argument("--m-antennas", type=int, default=8)
    p.add_argument("--n-sub", type=int, default=100)
    p.add_argument("--k-smooth", type=int, default=50)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--carriers-hz", type=carriers, default=chansim.BASEBAND,
                   help="comma separated carrier list, or 'baseband' / 'updown'")
    p.add_argument("--n-common", type=int, default=50, help="rows N of the feature matrix G")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_generate)


def _add_train(sub):
    p = sub.add_parser("train", help="train the proposed network or the ECNet baseline")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--method", choices=("proposed", "ecnet"), default="proposed")
    p.add_argument("--ecnet-input", choices=pl.ECNET_INPUTS, default="siso")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--split-fraction", type=float, default=pl.DEFAULT_SPLIT)
    p.add_argument("--init-model", type=Path, help="resume from a saved model")
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    p.add_argument("--loss-csv", type=Path, help="default: <out>.loss.csv")
    p.set_defaults(func=cmd_train)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a method on the test split")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--method", choices=pl.METHODS, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--xi", type=float, default=DEFAULT_XI)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--split-fraction", type=float, default=pl.DEFAULT_SPLIT)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_eval)


def _add_inspect(sub):
    p = sub.add_parser("inspect", help="per-sample trace of inputs and method outputs")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--sample-id", type=int, required=True)
    p.add_argument("--proposed-model", type=Path)
    p.add_argument("--ecnet-model", type=Path)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--out", type=Path, help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_inspect)


def _add_report(sub):
    p = sub.add_parser("report", help="merge evaluation reports into one table")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--names", help="comma separated column names")
    p.add_argument("--out", type=Path, help="CSV file to write")
    p.set_defaults(func=cmd_report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosel", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--config", type=Path, help="flat key = value file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_generate, _add_train, _add_eval, _add_inspect, _add_report):
        add(sub)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    values = read_config(known.config)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(command)
    if sp is None:
        return
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("func", "help"):
            raise ConfigError(f"{known.config}: unknown key {key!r} for '{command}'")
        conv = action.type or str
        defaults[key] = conv(raw)
        action.required = False
    sp.set_defaults(**defaults)


def cmd_generate(args) -> int:
    cfg = chansim.SimConfig(
        m_antennas=args.m_antennas, n_sub=args.n_sub, k_smooth=args.k_smooth, l_max=args.l_max,
        samples_per_class=args.samples_per_class, snr_db=args.snr_db,
        carriers_hz=args.carriers_hz, seed=args.seed,
    )
    total = cfg.l_max * cfg.samples_per_class

    def progress(k):
        if k % 500 == 0 or k == total:
            log.info("simulated %d/%d samples", k, total)

    ds, ft = pl.generate(cfg, args.out, n_common=args.n_common, progress=progress)
    features = pl.load_features(ft)
    counts = np.bincount(features.model_order, minlength=cfg.l_max + 1)[1:]
    print(f"dataset:  {ds}  ({len(features)} samples)")
    print(f"features: {ft}")
    print("class counts: " + ", ".join(f"L={l}: {c}" for l, c in enumerate(counts, start=1)))
    print(f"G shape: {features.arrays['g'].shape[1]}x{features.arrays['g'].shape[2]}  "
          f"SISO g shape: {features.arrays['g_siso'].shape[1]}x1  mode sizes: {features.meta['mode_sizes']}")
    return 0


def cmd_train(args) -> int:
    features = pl.load_features(args.features)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)

    def on_epoch(epoch, loss):
        log.info("epoch %d  loss %.6f", epoch, loss)

    model, history, state, extra = pl.train_on(
        features, args.method, cfg, ecnet_input=args.ecnet_input, split=args.split_fraction,
        init_from=args.init_model, callback=on_epoch,
    )
    extra["features_sha256"] = pl.sha256(args.features)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, model, extra, state)
    loss_csv = args.loss_csv or args.out.with_name(args.out.name + ".loss.csv")
    pl.write_loss_csv(loss_csv, history, first_epoch=state.epoch - len(history) + 1)
    print(f"model: {args.out}  epochs run: {len(history)}  final loss: {history[-1] if history else float('nan'):.6f}")
    print(f"loss log: {loss_csv}")
    return 0


def cmd_eval(args) -> int:
    features = pl.load_features(args.features)
    model = extra = None
    digests = {"features_sha256": pl.sha256(args.features)}
    if args.model is not None and args.method != "large":
        model, extra, _ = load_model(args.model)
        digests["model_sha256"] = pl.sha256(args.model)
    report, test_idx, pred = pl.evaluate(
        features, args.method, model, extra, xi=args.xi, rho=args.rho,
        split=args.split_fraction, digests=digests,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json())
    (args.out / "report.csv").write_text(report.to_csv())
    with open(args.out / "predictions.csv", "w") as fh:
        fh.write("sample,true_order,estimated_order\n")
        for i, p in zip(test_idx, pred):
            fh.write(f"{i},{features.model_order[i]},{p}\n")
    header, rows = pl.merge_reports([report])
    print(pl.format_table(header, rows))
    print(f"overestimation rate: {report.overestimation_rate:.4f}  (n_test = {report.n_test})")
    return 0


def cmd_inspect(args) -> int:
    features = pl.load_features(args.features)
    proposed = ecnet = None
    if args.proposed_model is not None:
        proposed = load_model(args.proposed_model)[0]
    if args.ecnet_model is not None:
        m, extra, _ = load_model(args.ecnet_model)
        ecnet = (m, extra)
    text = pl.inspect_sample(features, args.sample_id, proposed, ecnet, rho=args.rho)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return 0


def cmd_report(args) -> int:
    reports = [pl.EvalReport.from_json(p.read_text()) for p in args.reports]
    names = args.names.split(",") if args.names else None
    if names is not None and len(names) != len(reports):
        raise pl.HarnessError("--names must give one name per report")
    header, rows = pl.merge_reports(reports, names)
    if args.out is not None:
        lines = [",".join(header)]
        lines += [",".join(c if isinstance(c, str) else repr(c) for c in r) for r in rows]
        args.out.write_text("\n".join(lines) + "\n")
    print(pl.format_table(header, rows))
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (ConfigError, OSError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"mosel: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (pl.HarnessError, TrainingDiverged, ValueError, OSError, KeyError) as exc:
        print(f"mosel: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
