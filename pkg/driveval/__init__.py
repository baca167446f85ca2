from ._version import __version__  # noqa: F401

from .dataset import Condition, Dataset, collect, read_dataset, validation_suite, write_dataset  # noqa: F401, E402
from .offline_metrics import OfflineParams, OfflineReport, evaluate_offline  # noqa: F401, E402
from .online_eval import EpisodeSpec, aggregate_online, make_suite, run_episode, run_suite  # noqa: F401, E402
from .policy import ExpertPolicy, Observation, Policy, make_perturbed  # noqa: F401, E402
from .trainer import RegressorPolicy, TrainConfig, fit_regressor  # noqa: F401, E402
from .vehicle import Action, Pose, VehicleState, step_vehicle  # noqa: F401, E402
from .world import Command, build_town, plan_route  # noqa: F401, E402
