import pytest

from attackcorr.pipeline import RunConfig, bundled, prepare, read_alerts


@pytest.fixture(scope="session")
def mini_path():
    return bundled("mini.yaml")


@pytest.fixture(scope="session")
def case_path():
    return bundled("case_study.yaml")


@pytest.fixture(scope="session")
def case_alerts():
    return read_alerts(bundled("case_study_alerts.txt"))


@pytest.fixture(scope="session")
def case_model():
    return prepare(RunConfig(timings=False))


@pytest.fixture(scope="session")
def case_model_unpinned():
    return prepare(RunConfig(timings=False, pin_risks=False))
