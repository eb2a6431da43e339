import numpy as np
import pytest
from hypothesis import settings

from countarf.arf import ArfParams, fit_arf
from countarf.evalbench.dgp import DgpSpec, dgp_sample
from countarf.forest import ForestParams, fit_forest
from countarf.tabular import CATEGORICAL, Dataset, Feature, FeatureSchema

settings.register_profile("default", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cassini():
    spec = DgpSpec("cassini")
    train = dgp_sample(spec, 1000, seed=11)
    data = dgp_sample(spec, 1000, seed=12)
    predictor = fit_forest(train, train.target, ForestParams(num_trees=30), seed=0)
    arf = fit_arf(Dataset(data.schema, data.X), ArfParams(num_trees=20), seed=0, predictor=predictor)
    return spec, Dataset(data.schema, data.X), predictor, arf


@pytest.fixture(scope="session")
def mixed():
    """Three continuous and two categorical features with a simple label rule."""
    rng = np.random.default_rng(5)
    n = 600
    schema = FeatureSchema(
        (
            Feature("a"),
            Feature("b"),
            Feature("c"),
            Feature("colour", CATEGORICAL, ("red", "green", "blue")),
            Feature("flag", CATEGORICAL, ("no", "yes")),
        ),
        target="y",
    )
    colour = rng.integers(0, 3, n)
    flag = rng.integers(0, 2, n)
    a = rng.normal(colour, 1.0)
    b = rng.normal(0.0, 1.0, n) + flag
    c = rng.uniform(-1, 1, n)
    y = ((a + b > 1.5) | (colour == 2)).astype(float)
    X = np.column_stack([a, b, c, colour, flag])
    d = Dataset(schema, X, y)
    predictor = fit_forest(d, y, ForestParams(num_trees=25), seed=1)
    arf = fit_arf(Dataset(schema, X), ArfParams(num_trees=15), seed=1, predictor=predictor)
    return Dataset(schema, X), predictor, arf


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
