import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def tmp_csv(tmp_path):
    return tmp_path / "data.csv"
