import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]  # repository root
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))  # add ROOT to PATH


@pytest.fixture
def scenario(tmp_path):
    # Write a scenario YAML into tmp_path and return its path
    from utils.general import yaml_save

    def write(name='scenario', **cfg):
        f = tmp_path / f'{name}.yaml'
        yaml_save(f, cfg)
        return f

    return write
