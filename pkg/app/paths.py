import os
from pathlib import Path


def get_app_dir():
    """Returns the base directory of the application."""
    return Path(__file__).parent.parent


def get_user_data_dir():
    """Returns the user data directory (logs, default outputs)."""
    override = os.getenv("LOOPCLOSURE_HOME")
    user_data = Path(override) if override else get_app_dir() / "user_data"
    user_data.mkdir(parents=True, exist_ok=True)
    return user_data


def get_log_file():
    return get_user_data_dir() / "logs" / "app.log"


def get_example_config_path():
    return get_app_dir() / "config.example.toml"
