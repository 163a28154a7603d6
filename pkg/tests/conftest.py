import os
import sys
from pathlib import Path

import numpy as np
import pytest

from dpfair import data as dataio

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get(dataio.DATA_DIR_ENV, ROOT / "data"))

TINY_SCHEMA = {
    "name": "tiny",
    "d": 4,
    "continuous": ["age"],
    "categorical": {"color": ["red", "green", "blue"]},
    "sensitive": {"column": "sex", "positive": ["M"], "negative": ["F"]},
    "label": {"column": "y", "positive": ["yes"], "negative": ["no"]},
    "missing_values": ["?", ""],
}

TINY_CSV = """age,color,sex,y
30,red,M,yes
40,green,F,no
50,blue,F,yes
60,red,M,no
"""


def dataset_path(name: str) -> Path:
    return DATA_DIR / dataio._DATASET_FILES[name]


def needs_dataset(name: str):
    return pytest.mark.skipif(not dataset_path(name).is_file(), reason=f"{name} CSV not present")


@pytest.fixture
def tiny_schema():
    return dataio.Schema.from_dict(TINY_SCHEMA)


@pytest.fixture
def tiny_csv(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text(TINY_CSV)
    return p


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def adult_raw():
    if not dataset_path("adult").is_file():
        pytest.skip("adult CSV not present")
    return dataio.load_csv(dataset_path("adult"), dataio.shipped_schema("adult"))


@pytest.fixture(scope="session")
def credit_raw():
    if not dataset_path("credit_card").is_file():
        pytest.skip("credit card CSV not present")
    return dataio.load_csv(dataset_path("credit_card"), dataio.shipped_schema("credit_card"))


def write_synthetic_csv(path, n=600, seed=0):
    """Tiny-schema CSV where the label depends on age and the groups differ in base rate."""
    rng = np.random.default_rng(seed)
    sex = rng.random(n) < 0.5
    age = rng.normal(40, 10, n) + 8 * sex
    color = rng.choice(["red", "green", "blue"], n)
    y = (age + rng.normal(0, 5, n) > 45).astype(int)
    lines = ["age,color,sex,y"]
    lines += [f"{a:.2f},{c},{'M' if s else 'F'},{'yes' if t else 'no'}" for a, c, s, t in zip(age, color, sex, y)]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def synthetic_env(tmp_path):
    """A synthetic dataset plus its schema file and an experiment config using both."""
    import json

    csv = write_synthetic_csv(tmp_path / "tiny.csv")
    schema = tmp_path / "tiny.json"
    schema.write_text(json.dumps(TINY_SCHEMA))
    cfg = {
        "dataset": "tiny",
        "data_path": str(csv),
        "schema": str(schema),
        "dpsgd": {"noise_multiplier": 1.0, "learning_rate": 0.5, "epochs": 5, "batch_size": 16},
        "eps2": 0.5,
        "eps3": 0.5,
        "target_epsilon": 6.0,
        "target_delta": 1e-5,
        "repetitions": 3,
        "master_seed": 4,
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    return {"csv": csv, "schema": schema, "config": cfg, "config_path": cfg_path, "dir": tmp_path}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
