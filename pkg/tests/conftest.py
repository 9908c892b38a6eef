"""Test configuration and fixtures."""
import logging
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

import config
from app import create_cli
from logging_config import _HANDLER_FLAG
from path_analysis import load_path
from protocol import parse_protocol
from utils.builtins import load_builtin

PROTOCOL_DIR = Path(__file__).resolve().parent.parent / 'protocols'


@pytest.fixture(autouse=True)
def testing_config():
    """Run every test under the testing configuration."""
    config.use_config(config.TestingConfig)
    yield config.TestingConfig
    config.reset_config()


@pytest.fixture
def work_dir(tmp_path):
    """Scratch directory for logs and output files."""
    path = tmp_path / 'work'
    path.mkdir()
    yield path
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def cli(work_dir):
    """The command group with logs kept in the scratch directory."""
    yield create_cli({'LOG_DIR': str(work_dir / 'logs'), 'LOG_LEVEL': 'WARNING', 'THREADS': 1,
                      'TESTING': True})
    # Console handlers point at the runner's closed streams once a test ends
    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        if getattr(handler, _HANDLER_FLAG, False):
            root_logger.removeHandler(handler)
            handler.close()


@pytest.fixture
def runner():
    """A CLI runner keeping stdout and stderr apart."""
    return CliRunner(mix_stderr=False)


@pytest.fixture
def simple():
    return load_builtin('simple')


@pytest.fixture
def broken():
    return load_builtin('broken')


@pytest.fixture
def example1():
    return load_builtin('example1')


@pytest.fixture
def example2():
    return load_builtin('example2')


@pytest.fixture
def surgery_protocol():
    return load_builtin('surgery')


@pytest.fixture
def surgery_path_file():
    return PROTOCOL_DIR / 'surgery_example.path'


@pytest.fixture
def surgery_window(surgery_protocol, surgery_path_file):
    """The worked surgery window: 490 transitions from 100 agents in each state."""
    return load_path(surgery_protocol, surgery_path_file)


@pytest.fixture
def dense_text():
    """Three-state protocol in which every state stays common."""
    return """
states: x y z
init: x = rest
leader: x
transition: x x -> y z
transition: y z -> x x
"""


@pytest.fixture
def dense(dense_text):
    return parse_protocol(dense_text, name='dense')
