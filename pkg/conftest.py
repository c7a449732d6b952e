import logging

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale runs (1000 frames, 20-seed Monte-Carlo)")


@pytest.fixture(autouse=True)
def isolated_user_dir(tmp_path_factory, monkeypatch):
    """Logs and the first-run config copy go to a throwaway directory; env overrides are cleared."""
    home = tmp_path_factory.mktemp("user_data")
    monkeypatch.setenv("LOOPCLOSURE_HOME", str(home))
    monkeypatch.delenv("LOOPCLOSURE_CONFIG", raising=False)
    monkeypatch.delenv("LOOPCLOSURE_THREADS", raising=False)

    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield home
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)
