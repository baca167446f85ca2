import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._defaults import default_master_seed, default_suite_trials, default_validation_hours
from ._version import __version__
from .analysis import StudyRecord, write_records
from .config import config_hash, load_config, substream_seed
from .dataset import Cameras, collect, get_condition, validation_suite
from .docstrings import _doc_run_study
from .errors import ArtifactIoError, ConfigError
from .offline_metrics import OfflineParams, evaluate_offline
from .online_eval import aggregate_online, make_suite, run_suite
from .policy import (
    EpisodeBias,
    ExpertPolicy,
    OUNoise,
    Quantize,
    TurnFlip,
    WhiteNoise,
    make_perturbed,
    perturbation_from_dict,
    perturbation_to_dict,
)
from .trainer import TrainConfig, fit_regressor, regularization_settings, regularization_tiers
from .world import build_town

logger = logging.getLogger(__name__)

# Each town is evaluated in its own weather condition.
town_conditions = {"A": "clear", "B": "soft_rain_sunset"}
training_town = "A"


@dataclass(frozen=True)
class ModelEntry:
    """
    One model of the study family: a trained regressor (``train`` and ``regularization``)
    or the expert with a steering perturbation (``perturbation``).
    """

    model_id: str
    kind: str
    train: TrainConfig = None
    regularization: str = None
    perturbation: object = None

    def __post_init__(self):
        if self.kind == "regressor":
            if self.train is None or self.regularization not in regularization_tiers:
                raise ConfigError(f"Regressor {self.model_id!r} needs training settings and a regularization tier")
        elif self.kind == "perturbed":
            if self.perturbation is None:
                raise ConfigError(f"Perturbed expert {self.model_id!r} needs a perturbation")
        else:
            raise ConfigError(f"Unknown model kind {self.kind!r} of model {self.model_id!r}")

    def describe(self):
        if self.kind == "perturbed":
            return {"kind": self.kind, "perturbation": perturbation_to_dict(self.perturbation)}
        config = self.train.to_dict()
        return {
            "kind": self.kind,
            "data_hours": config["data_hours"],
            "data_distribution": config["data_distribution"],
            "balancing": config["balancing"],
            "loss": config["loss"],
            "regularization": self.regularization,
            "feature_depth": config["feature_depth"],
            "seed": config["seed"],
        }

    @classmethod
    def from_dict(cls, entry_dict):
        entry = dict(entry_dict)
        try:
            model_id, kind = entry.pop("id"), entry.pop("kind")
        except KeyError as ex:
            raise ConfigError(f"Model entry {entry_dict!r} has no {ex.args[0]!r}") from None
        try:
            if kind == "perturbed":
                return cls(model_id, kind, perturbation=perturbation_from_dict(entry.pop("perturbation")))
            tier = entry.pop("regularization", "none")
            train = TrainConfig(**regularization_settings(tier), **entry)
            return cls(model_id, kind, train=train, regularization=tier)
        except (KeyError, TypeError, ValueError) as ex:
            raise ConfigError(f"Invalid model entry {model_id!r}: {ex}") from ex


def _regressor(hours, distribution, *, balancing=False, loss="L2", tier="mild", depth="standard"):
    model_id = f"reg-{hours:g}h-{distribution}-{'bal' if balancing else 'nobal'}-{loss}-{tier}-{depth}"
    train = TrainConfig(
        loss=loss,
        balancing=balancing,
        feature_depth=depth,
        data_hours=hours,
        data_distribution=distribution,
        **regularization_settings(tier),
    )
    return ModelEntry(model_id, "regressor", train=train, regularization=tier)


def _perturbed(spec):
    args = ",".join(f"{v:g}" for v in asdict(spec).values())
    return ModelEntry(f"expert-{type(spec).__name__}-{args}", "perturbed", perturbation=spec)


def default_family():
    """
    The default study family of 45 models: 31 trained regressors and 14 perturbed experts.

    The regressors cover every data amount with every training distribution, and
    one-factor-at-a-time variations of balancing, loss, regularization and feature depth
    around a three-camera and a single-camera base model.
    """
    family = []
    for hours in (0.05, 0.2, 1.0, 4.0):
        for distribution in ("1cam", "1cam+noise", "3cam", "3cam+noise"):
            family.append(_regressor(hours, distribution))
    for distribution in ("3cam+noise", "1cam"):
        family.append(_regressor(1.0, distribution, balancing=True))
        family.append(_regressor(1.0, distribution, loss="L1"))
        for tier in ("none", "high", "high+aug"):
            family.append(_regressor(1.0, distribution, tier=tier))
        for depth in ("shallow", "deep"):
            family.append(_regressor(1.0, distribution, depth=depth))
    family.append(_regressor(1.0, "3cam+noise", balancing=True, loss="L1"))

    perturbations = (
        [WhiteNoise(std) for std in (0.05, 0.1, 0.2, 0.3)]
        + [EpisodeBias(m) for m in (0.05, 0.1, 0.2, 0.8)]
        + [OUNoise(1.0, 0.1), OUNoise(1.0, 0.3)]
        + [TurnFlip(0.5), TurnFlip(1.0)]
        + [Quantize(0.1), Quantize(0.25)]
    )
    family.extend(_perturbed(spec) for spec in perturbations)
    return family


base_model_id = "reg-1h-3cam+noise-nobal-L2-mild-standard"


@dataclass(frozen=True)
class StudyConfig:
    seed: int = default_master_seed
    trials: int = default_suite_trials
    towns: tuple = ("A", "B")
    validation_hours: float = default_validation_hours
    offline: OfflineParams = field(default_factory=OfflineParams)
    family: tuple = field(default_factory=lambda: tuple(default_family()))

    def __post_init__(self):
        object.__setattr__(self, "towns", tuple(self.towns))
        object.__setattr__(self, "family", tuple(self.family))
        if not self.family:
            raise ConfigError("The model family is empty")
        ids = [m.model_id for m in self.family]
        if len(set(ids)) != len(ids):
            raise ConfigError("Model ids in the study family are not unique")
        unknown = [t for t in self.towns if t not in town_conditions]
        if unknown or not self.towns:
            raise ConfigError(f"Invalid study towns {self.towns!r}. Supported: {sorted(town_conditions)}")
        if self.trials < 1:
            raise ConfigError(f"Number of trials must be positive: {self.trials!r}")
        if not self.validation_hours > 0:
            raise ConfigError(f"Validation data amount must be positive: {self.validation_hours!r}")

    def to_dict(self):
        return {
            "seed": self.seed,
            "trials": self.trials,
            "towns": list(self.towns),
            "validation_hours": self.validation_hours,
            "offline": asdict(self.offline),
            "models": [dict(id=m.model_id, **m.describe()) for m in self.family],
        }

    @property
    def config_hash(self):
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, config_dict):
        study = dict(config_dict.get("study", {}))
        family_name = study.pop("family", "default")
        if family_name != "default":
            raise ConfigError(f"Unknown model family {family_name!r}")
        kwargs = {}
        if "models" in config_dict:
            kwargs["family"] = tuple(ModelEntry.from_dict(m) for m in config_dict["models"])
        try:
            if "offline" in config_dict:
                kwargs["offline"] = OfflineParams(**config_dict["offline"])
        except ValueError as ex:
            raise ConfigError(f"Invalid offline metric parameters: {ex}") from ex
        return cls(**study, **kwargs)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(load_config(path))


# ======================================================================================
#                               Study runner

# Shared read-only inputs of the model evaluations in the current process.
_context = {}


def _init_worker(context):
    _context.clear()
    _context.update(context)


def _build_policy(entry, index):
    if entry.kind == "perturbed":
        seed = substream_seed(_context["seed"], "perturb", index)
        return make_perturbed(ExpertPolicy(), entry.perturbation, seed)
    return fit_regressor(_context["training"][entry.train.data_distribution], entry.train)


def _evaluate_model(args):
    index, entry = args
    policy = _build_policy(entry, index)
    offline, online = {}, {}
    for town_id, town in _context["towns"].items():
        offline[town_id] = {
            variant: evaluate_offline(policy, dataset, _context["offline"]).to_dict()["metrics"]
            for variant, dataset in _context["validation"][town_id].items()
        }
        results = run_suite(town, policy, _context["suites"][town_id])
        online[town_id] = aggregate_online(results).to_dict()
    logger.info("Evaluated model %d: %s", index, entry.model_id)
    return StudyRecord(model_id=entry.model_id, config=entry.describe(), offline=offline, online=online)


def prepare_study(config):
    """
    Build the shared inputs of a study: towns, training data, validation sets and
    benchmark suites. All random streams are derived from the master seed.
    """
    seed = config.seed
    towns = {t: build_town(t, seed=substream_seed(seed, "town", n)) for n, t in enumerate(config.towns)}
    context = {"seed": seed, "towns": towns, "offline": config.offline, "training": {}}

    regressors = [m for m in config.family if m.kind == "regressor"]
    if regressors:
        hours = max(m.train.data_hours for m in regressors)
        train_town = towns.get(training_town)
        if train_town is None:
            train_town = build_town(training_town, seed=substream_seed(seed, "town", "train"))
        condition = get_condition(town_conditions[training_town])
        logger.info("Collecting %g h of training data in town %s", hours, training_town)
        clean = collect(train_town, hours, Cameras.THREE, False, condition, substream_seed(seed, "train", 0))
        noisy = collect(train_town, hours, Cameras.THREE, True, condition, substream_seed(seed, "train", 1))
        context["training"] = {
            "1cam": clean.central(),
            "1cam+noise": noisy.central(),
            "3cam": clean,
            "3cam+noise": noisy,
        }

    context["validation"] = {
        t: validation_suite(
            town, town_conditions[t], config.validation_hours, substream_seed(seed, "validation", n)
        )
        for n, (t, town) in enumerate(towns.items())
    }
    context["suites"] = {
        t: make_suite(town, config.trials, substream_seed(seed, "suite", n), condition=town_conditions[t])
        for n, (t, town) in enumerate(towns.items())
    }
    return context


def run_study(config, out_dir, *, jobs=1):
    out_dir = Path(out_dir)
    context = prepare_study(config)
    tasks = list(enumerate(config.family))
    if jobs is None or jobs <= 1:
        _init_worker(context)
        records = [_evaluate_model(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(context,)) as executor:
            records = list(executor.map(_evaluate_model, tasks))

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_records(records, out_dir / "study.jsonl")
        manifest = {
            "version": __version__,
            "config": config.to_dict(),
            "config_hash": config.config_hash,
            "models": len(records),
        }
        with open(out_dir / "study.manifest.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write study results to {str(out_dir)!r}: {ex}") from ex
    logger.info("Study of %d models written to %s", len(records), out_dir)
    return records


run_study.__doc__ = _doc_run_study
