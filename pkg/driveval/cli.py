import argparse
import dataclasses
import json
import logging
import os
import sys

from . import __version__
from .analysis import correlate_study, read_records, write_report
from .config import config_hash, resolve_output_dir
from .dataset import Cameras, collect, conditions, read_dataset, write_dataset
from .docstrings import (
    _doc_cli_description,
    _doc_cmd_collect,
    _doc_cmd_correlate,
    _doc_cmd_eval_offline,
    _doc_cmd_eval_online,
    _doc_cmd_report,
    _doc_cmd_study,
    _doc_cmd_town,
    _doc_cmd_train,
    _doc_run_command,
)
from .errors import ArtifactIoError, DrivevalError
from .offline_metrics import OfflineParams, evaluate_offline, offline_metric_names
from .online_eval import aggregate_online, make_suite, read_suite, run_suite, write_results, write_suite
from .policy import ExpertPolicy, make_perturbed, parse_perturbation, perturbation_to_dict
from .study import StudyConfig, base_model_id, run_study, town_conditions, training_town
from .trainer import (
    FeatureDepth,
    Loss,
    RegressorPolicy,
    TrainConfig,
    data_distributions,
    fit_regressor,
    regularization_settings,
    regularization_tiers,
)
from .world import build_town, read_town

logger = logging.getLogger(__name__)

_log_format = "%(asctime)s\t%(name)s\t%(levelname)s\t%(message)s"


def setup_logging(verbose=False, quiet=False):
    """
    Configure the ``driveval`` logger: messages go to standard error. The level is DEBUG
    with ``verbose``, WARNING with ``quiet`` and otherwise ``DRIVEVAL_LOG_LEVEL`` or INFO.
    """
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = os.environ.get("DRIVEVAL_LOG_LEVEL", None) or "INFO"
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    pkg_logger = logging.getLogger("driveval")
    pkg_logger.setLevel(level)
    if not any(getattr(h, "_driveval_handler", False) for h in pkg_logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_log_format))
        handler._driveval_handler = True
        pkg_logger.addHandler(handler)


# ======================================================================================
#                               Argument types


def _perturbation_arg(text):
    try:
        return parse_perturbation(text)
    except (TypeError, ValueError) as ex:
        raise argparse.ArgumentTypeError(str(ex)) from ex


def _filter_arg(text):
    metric, _, fraction = text.partition(":")
    if metric not in offline_metric_names:
        expected = list(offline_metric_names)
        raise argparse.ArgumentTypeError(f"unknown offline metric {metric!r}, expected one of {expected}")
    try:
        fraction = float(fraction) if fraction else 0.5
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid keep fraction in {text!r}") from None
    if not 0 < fraction <= 1:
        raise argparse.ArgumentTypeError(f"keep fraction must be in the range (0, 1]: {fraction!r}")
    return metric, fraction


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"value must be positive: {text!r}")
    return value


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed (default 0).")
    common.add_argument("--jobs", type=int, default=1, help="Number of parallel worker processes.")
    common.add_argument("--out", default=None, help="Output directory (default: $DRIVEVAL_OUT or ./driveval-out).")
    group = common.add_mutually_exclusive_group()
    group.add_argument("-v", "--verbose", action="store_true", help="Print debug messages.")
    group.add_argument("-q", "--quiet", action="store_true", help="Print warnings and errors only.")

    parser = argparse.ArgumentParser(
        prog="driveval", description=_doc_cli_description, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, doc):
        return sub.add_parser(name, parents=[common], help=doc.strip().split("\n")[0], description=doc)

    def add_policy(p):
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--policy", choices=["expert"], help="Built-in policy.")
        source.add_argument("--model", help="Trained model file (JSON).")
        p.add_argument("--perturb", type=_perturbation_arg, default=None, help="Perturbation, e.g. noise:0.1")

    p = add("town", _doc_cmd_town)
    p.add_argument("--town", default="A", help="Town id (A or B).")

    p = add("collect", _doc_cmd_collect)
    p.add_argument("--town", default="A", help="Town id or town file.")
    p.add_argument("--hours", type=_positive_float, required=True, help="Amount of driving in hours.")
    p.add_argument("--cameras", choices=[c.value for c in Cameras], default=Cameras.ONE.value)
    p.add_argument("--noise", action="store_true", help="Inject steering noise in 10%% of the episodes.")
    p.add_argument("--condition", choices=sorted(conditions), default=None)
    p.add_argument("--name", default="dataset", help="File name of the dataset (without extension).")

    p = add("train", _doc_cmd_train)
    p.add_argument("--data", required=True, help="Training dataset (CSV).")
    p.add_argument("--loss", choices=[v.value for v in Loss], default=Loss.L2.value)
    p.add_argument("--regularization", choices=list(regularization_tiers), default="mild")
    p.add_argument("--balancing", action="store_true")
    p.add_argument("--depth", choices=[v.value for v in FeatureDepth], default=FeatureDepth.STANDARD.value)
    p.add_argument("--hours", type=_positive_float, default=None, help="Use only the first hours of the data.")
    p.add_argument("--distribution", choices=data_distributions, default=None)
    p.add_argument("--name", default="model", help="File name of the model (without extension).")

    p = add("eval-offline", _doc_cmd_eval_offline)
    add_policy(p)
    p.add_argument("--data", required=True, help="Validation dataset (CSV).")
    p.add_argument("--T", dest="window", type=int, default=OfflineParams.T, help="Cumulative window in steps.")
    p.add_argument("--sigma", type=float, default=OfflineParams.sigma, help="Quantization threshold.")
    p.add_argument("--alpha", type=float, default=OfflineParams.alpha, help="Relative error threshold.")
    p.add_argument("--name", default="offline_report")

    p = add("eval-online", _doc_cmd_eval_online)
    add_policy(p)
    p.add_argument("--town", default="A", help="Town id or town file.")
    p.add_argument("--condition", choices=sorted(conditions), default=None)
    p.add_argument("--trials", type=int, default=None, help="Number of trials (default 25).")
    p.add_argument("--suite", default=None, help="Suite file; a suite is generated from the seed if omitted.")
    p.add_argument("--name", default="online_report")

    p = add("study", _doc_cmd_study)
    p.add_argument("--config", default=None, help="Study configuration (TOML).")

    p = add("correlate", _doc_cmd_correlate)
    p.add_argument("--in", dest="records", required=True, help="Study records (JSON lines).")
    p.add_argument("--filter-best", type=_filter_arg, default=None, metavar="METRIC[:FRACTION]")
    p.add_argument("--name", default="correlation")

    p = add("report", _doc_cmd_report)
    p.add_argument("--in", dest="records", required=True, help="Study records (JSON lines).")
    p.add_argument("--training-town", default=training_town)
    p.add_argument("--keep", type=float, default=0.5, help="Fraction of the best models kept in filtered plots.")
    p.add_argument("--base", default=None, help=f"Base model of the selection groups (default {base_model_id}).")

    return parser


# ======================================================================================
#                               Commands


def _seed(args):
    return 0 if args.seed is None else args.seed


def _command_hash(args):
    settings = {k: v for k, v in vars(args).items() if k not in ("out", "jobs", "verbose", "quiet")}
    if settings.get("perturb") is not None:
        settings["perturb"] = perturbation_to_dict(settings["perturb"])
    return config_hash(json.loads(json.dumps(settings, default=str)))


def _write_json(path, obj):
    try:
        with open(path, "w") as f:
            json.dump(obj, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write {str(path)!r}: {ex}") from ex


def _load_town(name, seed):
    if name.endswith(".json"):
        return read_town(name)
    return build_town(name, seed=seed)


def _load_policy(args):
    policy = ExpertPolicy() if args.policy == "expert" else RegressorPolicy.load(args.model)
    if args.perturb is not None:
        policy = make_perturbed(policy, args.perturb, _seed(args))
    return policy


def _cmd_town(args, out_dir, digest):
    town = build_town(args.town, seed=_seed(args))
    path = out_dir / f"town_{town.town_id}.json"
    _write_json(path, dict(town.to_dict(), config_hash=digest))
    return path


def _cmd_collect(args, out_dir, digest):
    town = _load_town(args.town, _seed(args))
    condition = args.condition or town_conditions.get(town.town_id, "clear")
    dataset = collect(town, args.hours, args.cameras, args.noise, condition, _seed(args))
    dataset.manifest["config_hash"] = digest
    path = out_dir / f"{args.name}.csv"
    write_dataset(dataset, path)
    logger.info("Dataset of %d samples written to %s", len(dataset), path)
    return path


def _cmd_train(args, out_dir, digest):
    dataset = read_dataset(args.data)
    distribution = args.distribution
    if distribution is None:
        noise = "+noise" if dataset.manifest.get("noise") else ""
        distribution = dataset.manifest.get("cameras", "1cam") + noise
    config = TrainConfig(
        loss=args.loss,
        balancing=args.balancing,
        feature_depth=args.depth,
        data_hours=args.hours or max(dataset.hours, 1e-9),
        data_distribution=distribution,
        seed=_seed(args),
        **regularization_settings(args.regularization),
    )
    model = fit_regressor(dataset, config)
    model.diagnostics["config_hash"] = digest
    path = out_dir / f"{args.name}.json"
    model.save(path)
    return path


def _cmd_eval_offline(args, out_dir, digest):
    policy = _load_policy(args)
    params = OfflineParams(T=args.window, sigma=args.sigma, alpha=args.alpha)
    report = evaluate_offline(policy, read_dataset(args.data), params)
    path = out_dir / f"{args.name}.json"
    _write_json(path, dict(report.to_dict(), policy=policy.describe(), config_hash=digest))
    return path


def _cmd_eval_online(args, out_dir, digest):
    town = _load_town(args.town, _seed(args))
    if args.suite is not None:
        suite = read_suite(town, args.suite)
        if args.trials is not None:
            suite = suite[: args.trials]
    else:
        condition = args.condition or town_conditions.get(town.town_id, "clear")
        suite = make_suite(town, args.trials or 25, _seed(args), condition=condition)
        write_suite(town, suite, out_dir / f"{args.name}.suite.json")
    policy = _load_policy(args)
    results = run_suite(town, policy, suite, jobs=args.jobs)
    write_results(results, out_dir / f"{args.name}.episodes.jsonl")
    report = aggregate_online(results)
    path = out_dir / f"{args.name}.json"
    _write_json(path, {"report": report.to_dict(), "policy": policy.describe(), "config_hash": digest})
    return path


def _cmd_study(args, out_dir, digest):
    config = StudyConfig.from_file(args.config) if args.config else StudyConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    run_study(config, out_dir, jobs=args.jobs)
    return out_dir / "study.jsonl"


def _cmd_correlate(args, out_dir, digest):
    records = read_records(args.records)
    metric, fraction = args.filter_best or (None, None)
    report = correlate_study(records, keep_fraction=fraction, filter_metric=metric)
    path = out_dir / f"{args.name}.json"
    _write_json(path, dict(report.to_dict(), config_hash=digest))
    return path


def _cmd_report(args, out_dir, digest):
    records = read_records(args.records)
    ids = {r.model_id for r in records}
    base = args.base or (base_model_id if base_model_id in ids else None)
    write_report(records, out_dir, keep_fraction=args.keep, training_town=args.training_town, base=base)
    _write_json(out_dir / "report.manifest.json", {"records": args.records, "config_hash": digest})
    return out_dir


_commands = {
    "town": _cmd_town,
    "collect": _cmd_collect,
    "train": _cmd_train,
    "eval-offline": _cmd_eval_offline,
    "eval-online": _cmd_eval_online,
    "study": _cmd_study,
    "correlate": _cmd_correlate,
    "report": _cmd_report,
}


def run_command(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return ex.code if isinstance(ex.code, int) else 2

    setup_logging(args.verbose, args.quiet)
    out_dir = resolve_output_dir(args.out)
    try:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as ex:
            raise ArtifactIoError(f"Failed to create output directory {str(out_dir)!r}: {ex}") from ex
        path = _commands[args.command](args, out_dir, _command_hash(args))
    except (DrivevalError, ValueError) as ex:
        print(f"driveval: error: {ex}", file=sys.stderr)
        return 1
    logger.info("Command %r completed: %s", args.command, path)
    return 0


run_command.__doc__ = _doc_run_command


def main():
    sys.exit(run_command())
