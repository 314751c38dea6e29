"""``gain-impute`` command line.

Exit codes: 0 success, 1 a check failed, 2 bad input or configuration,
3 training diverged.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path


from . import data, evaluation, gain, gradcheck, oracle
from .config import ConfigError, RunConfig, load_config
from .nn_core import make_rng

log = logging.getLogger("gainimpute")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------------

def _write_tokens(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _companion(out: Path, tag: str) -> Path:
    return out.with_name(f"{out.stem}.{tag}{out.suffix or '.csv'}")


def _run_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key, attr in (("seed", "seed"), ("out_dir", "out_dir"), ("missing_token", "missing_token"),
                      ("dataset", "dataset"), ("ground_truth", "ground_truth"), ("label_column", "label_column"),
                      ("iterations", "iterations"), ("mcar_rate", "rate"), ("repeats", "repeats"),
                      ("folds", "folds"), ("variant", "variant"), ("n_draws", "draws")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = str(v)
    return load_config(args.config, overrides)


def _seeds(rc: RunConfig) -> list[int]:
    return [rc.train.seed + i for i in range(rc.repeats)]


def _read(path: str, missing_token: str) -> tuple[list[str], list[list[str]], data.Dataset]:
    header, body = data.read_table(path)
    return header, body, data.parse_tokens(header, body, missing_token, where=path)


def _load_problem(rc: RunConfig, seeds: list[int], need_truth: bool):
    """Raw (unnormalized) datasets, one per seed, plus labels if configured."""
    if rc.dataset is None:
        raise UsageError("no dataset given (set `dataset` or pass --dataset)")
    _, _, ds = _read(rc.dataset, rc.missing_token)
    if rc.ground_truth is not None:
        _, _, truth = _read(rc.ground_truth, rc.missing_token)
        if truth.names != ds.names or truth.values.shape != ds.values.shape:
            raise UsageError("ground truth does not match the dataset's shape/columns")
        if (truth.mask != 1).any():
            raise UsageError("ground truth file has missing cells")
        ds = data.Dataset(truth.values, ds.mask, truth.features, truth.values.copy())
    labels = None
    if rc.label_column is not None:
        ds, labels = ds.drop(rc.label_column)
    complete = not (ds.mask == 0).any()
    if complete and rc.mcar_rate > 0:
        datasets = [data.introduce_mcar(ds, rc.mcar_rate, make_rng(s, "mask"), exact=rc.exact_mcar) for s in seeds]
    else:
        if need_truth and ds.ground_truth is None:
            raise UsageError("dataset has missing cells but no ground truth (set `ground_truth`)")
        datasets = [ds] * len(seeds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        datasets = [data.normalize(d_)[0] for d_ in datasets]
    return datasets, labels


# -- commands -----------------------------------------------------------------------------

def cmd_mask(args) -> int:
    rate = 0.2 if args.rate is None else args.rate
    seed = 0 if args.seed is None else args.seed
    token = args.missing_token or ""
    header, body, ds = _read(args.input, token)
    if (ds.mask == 0).any():
        raise UsageError(f"{args.input}: input must be fully observed")
    try:
        masked = data.introduce_mcar(ds, rate, make_rng(seed, "mask"), exact=args.exact)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = [[tok if masked.mask[i, j] else token for j, tok in enumerate(row)] for i, row in enumerate(body)]
    _write_tokens(out, header, rows)
    data.save_mask(masked, _companion(out, "mask"))
    _write_tokens(_companion(out, "truth"), header, body)
    print(f"masked {int((masked.mask == 0).sum())} of {masked.mask.size} cells "
          f"({masked.missing_fraction:.4f}) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    (datasets, _) = _load_problem(rc, [rc.train.seed], need_truth=False)
    ds = datasets[0]
    model = gain.train(ds, rc.train, log_every=max(rc.train.iterations // 10, 1))
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gain.save_model(model, out / "model.json")
    gain.save_history(model, out / "loss_history.csv")
    print(f"trained {rc.train.iterations} iterations on {ds.n}x{ds.d}; model -> {out / 'model.json'}")
    return EXIT_OK


def cmd_impute(args) -> int:
    model = gain.load_model(args.model)
    token = args.missing_token or ""
    header, body, ds = _read(args.input, token)
    draws = 1 if args.draws is None else args.draws
    seed = 0 if args.seed is None else args.seed
    try:
        completed = gain.impute(model, ds, make_rng(seed, "impute"), draws)
    except data.DataError as exc:
        raise UsageError(f"{args.input}: {exc}") from None
    out = Path(args.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    for k, c in enumerate(completed):
        rows = [[tok if ds.mask[i, j] else data.format_value(c.values[i, j]) for j, tok in enumerate(row)]
                for i, row in enumerate(body)]
        _write_tokens(out / f"imputed_{k}.csv", header, rows)
    print(f"wrote {draws} imputed file(s) to {out}")
    return EXIT_OK


def _emit(rep: evaluation.MetricsReport, rc: RunConfig, name: str) -> None:
    # wall time goes to stdout only so reruns write byte-identical reports
    wall = rep.metadata.pop("wall_time_s", None)
    rep.metadata.update({f"run.{line.split(' = ')[0]}": line.split(" = ", 1)[1] for line in rc.to_lines()})
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write(out / name)
    print(rep.table())
    print(f"report -> {out / name}" + (f" ({wall}s)" if wall else ""))


def cmd_evaluate(args) -> int:
    rc = _run_config(args)
    seeds = _seeds(rc)
    datasets, labels = _load_problem(rc, seeds, need_truth=True)
    rep = evaluation.evaluate(datasets, rc.train, seeds, rc.folds, labels,
                              evaluation.LogisticConfig(ridge=rc.ridge),
                              evaluation.LogisticConfig(ridge=rc.congeniality_ridge) if labels is not None else None)
    _emit(rep, rc, "report.txt")
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    seeds = _seeds(rc)
    datasets, _ = _load_problem(rc, seeds, need_truth=True)
    rep = evaluation.run_ablation(datasets, rc.train, seeds)
    _emit(rep, rc, "ablation.txt")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    checks = gradcheck.run_gradcheck(seed=args.seed or 0, corrupt=args.inject_fault)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        if not c.passed or args.verbose:
            print(c.line())
    print(f"gradcheck: {len(checks) - len(failed)}/{len(checks)} passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_oracle(args) -> int:
    ok = True
    for name, toy in (("correlated", oracle.correlated_toy()), ("copy", oracle.copy_toy()),
                      ("marginal", oracle.marginal_toy())):
        table = oracle.bayes_oracle(toy)
        bad = table.endpoint_violations()
        net = oracle.fit_discriminator(toy, seed=args.seed or 0)
        mae, n = oracle.compare_to_oracle(net, table)
        passed = not bad and mae < 0.05
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {len(table.entries)} (x_hat, h) cells, "
              f"endpoint violations {len(bad)}, trained-D MAE {mae:.4f} over {n} hidden components")
        for line in bad[:5]:
            print("   ", line)
    return EXIT_OK if ok else EXIT_CHECK


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="64-bit base seed")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--missing-token", dest="missing_token", help="cell text meaning 'missing' (default empty)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--dataset")
    run.add_argument("--ground-truth", dest="ground_truth")
    run.add_argument("--label-column", dest="label_column")
    run.add_argument("--iterations", type=int)
    run.add_argument("--rate", type=float, help="MCAR rate applied to fully observed data")
    run.add_argument("--repeats", type=int, help="number of seeds")
    run.add_argument("--folds", type=int)
    run.add_argument("--variant", choices=gain.VARIANTS)

    p = argparse.ArgumentParser(prog="gain-impute", description="Generative adversarial imputation for tabular data")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mask", parents=[common], help="hide cells completely at random")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--rate", type=float)
    s.add_argument("--exact", action="store_true", help="hide exactly round(rate * cells)")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train", parents=[common, run], help="train a model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("impute", parents=[common], help="fill missing cells with a trained model")
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("--draws", type=int)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("evaluate", parents=[common, run], help="cross-validated RMSE/AUROC/congeniality")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common, run], help="train all ablation variants")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--inject-fault", action="store_true", help="corrupt one analytic gradient (negative control)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("oracle", parents=[common], help="compare a trained discriminator with the exact posterior")
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.verbose:
        logging.getLogger("gainimpute").setLevel(logging.INFO)
    try:
        return args.func(args)
    except gain.TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, data.DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
