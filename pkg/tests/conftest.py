import pytest

from audit_kit.evaluate import evaluate
from audit_kit.fixture import build_fixture, generate_reference_model


@pytest.fixture(scope="session")
def model1():
    """Scale-1 reference model (no audit sheet) and its schema."""
    return generate_reference_model(1)


@pytest.fixture(scope="session")
def fixture1():
    """Scale-1 reference model with the audit sheet injected."""
    return build_fixture(1)


@pytest.fixture(scope="session")
def fixture10():
    """Scale-10 reference model with the audit sheet injected."""
    return build_fixture(10)


@pytest.fixture(scope="session")
def eval1(fixture1):
    wb, _schema = fixture1
    return evaluate(wb)


@pytest.fixture(scope="session")
def eval10(fixture10):
    wb, _schema = fixture10
    return evaluate(wb)
