import pytest

from .common import get_town


@pytest.fixture
def town_a():
    return get_town("A")


@pytest.fixture
def town_b():
    return get_town("B")


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """
    Temporary output directory, also exported as ``DRIVEVAL_OUT``.
    """
    path = tmp_path / "out"
    monkeypatch.setenv("DRIVEVAL_OUT", str(path))
    return path
