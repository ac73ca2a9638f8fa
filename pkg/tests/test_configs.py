"""The shipped configs must parse, validate, and match the documented schema."""

import json
from pathlib import Path

import pytest

from homog.harness import load_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
CONFIGS = sorted(p for p in CONFIG_DIR.glob("*.json") if p.name != "schema.json")


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_config_loads(path):
    cfg = load_config(path)
    assert cfg.digest()


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_config_matches_schema(path):
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((CONFIG_DIR / "schema.json").read_text())
    jsonschema.validate(json.loads(path.read_text()), schema)
