import functools

import numpy as np

from driveval.analysis import StudyRecord
from driveval.dataset import Dataset
from driveval.online_eval import EpisodeResult, InfractionEvent, InfractionKind, Termination
from driveval.policy import feature_names
from driveval.world import build_town


@functools.lru_cache(maxsize=None)
def get_town(town_id):
    """
    Towns are immutable, so a single instance per process is shared by the tests.
    """
    return build_town(town_id)


def make_dataset(steering, *, features=None, commands=None, speed=None, sequence_id=None, step_index=None):
    """
    Central-viewpoint dataset built from arrays. Missing columns get simple defaults:
    zero features, the ``Continue`` command, speed 5 m/s and a single sequence.
    """
    steering = np.asarray(steering, dtype=float)
    n = len(steering)
    features = np.zeros((n, len(feature_names))) if features is None else np.asarray(features, dtype=float)
    commands = np.zeros(n, dtype=int) if commands is None else np.asarray(commands)
    speed = np.full(n, 5.0) if speed is None else np.asarray(speed, dtype=float)
    sequence_id = np.zeros(n, dtype=int) if sequence_id is None else np.asarray(sequence_id)
    step_index = np.arange(n) if step_index is None else np.asarray(step_index)
    labels = np.column_stack([steering, np.full(n, 0.2), np.zeros(n)])
    return Dataset(
        sequence_id=sequence_id,
        step_index=step_index,
        viewpoint=np.zeros(n, dtype=int),
        perturbed=np.zeros(n, dtype=bool),
        command=commands,
        speed=speed,
        features=features,
        labels=labels,
        manifest={"format": "driveval-dataset/1", "cameras": "1cam", "samples": n},
    )


def make_result(*, success=True, completion=1.0, km=0.5, n_infractions=0):
    infractions = [InfractionEvent(InfractionKind.OFF_ROAD, float(n), (0.0, 0.0)) for n in range(n_infractions)]
    return EpisodeResult(
        success=success,
        completion=completion,
        distance_driven=km,
        infractions=infractions,
        termination=Termination.GOAL if success else Termination.TIMEOUT,
    )


def make_record(model_id, *, offline=None, online=None, config=None, town="A", variant="1cam"):
    """
    Study record with the given offline metric values (``{metric: value}``) and online
    metric values (``{metric: value}``) in one town and validation variant.
    """
    offline = offline if offline is not None else {"mse": 0.1}
    online = online if online is not None else {"success_rate": 0.5}
    return StudyRecord(
        model_id=model_id,
        config=config or {},
        offline={town: {variant: dict(offline)}},
        online={town: dict(online)},
    )
