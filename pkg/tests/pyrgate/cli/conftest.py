import pytest
from pyrgate.config import dump_config


@pytest.fixture
def config_file(tmp_path, tiny_config):
    """Write a configuration to a TOML file and return its path."""
    def write(**changes):
        path = tmp_path / "run.toml"
        path.write_text(dump_config(tiny_config.replace(**changes)))
        return path
    return write
