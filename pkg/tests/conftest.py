from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def demo_project() -> Path:
    return FIXTURES / "demo_project"
