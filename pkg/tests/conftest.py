import numpy as np
import pytest

from interimpute.data import Dataset, ModelFormula, VariableSpec


def toy_specs(z_kind="binary"):
    return (
        VariableSpec("y", "binary", "outcome"),
        VariableSpec("z", z_kind),
        VariableSpec("x", "binary", "exposure"),
        VariableSpec("xz", z_kind, "derived-interaction", parents=("x", "z")),
    )


def toy_formula():
    return ModelFormula("y", ("z", "x"), (("x", "z"),))


def make_toy_dataset(n=400, missing=0.25, seed=5, z_kind="binary", beta_xz=0.9):
    """Small incomplete dataset with a genuine interaction, for engine tests."""
    rng = np.random.default_rng(seed)
    z = (rng.random(n) < 0.4).astype(float) if z_kind == "binary" \
        else rng.normal(0.0, 1.0, n)
    x = (rng.random(n) < 0.45).astype(float)
    eta = -0.8 + 0.6 * z + 0.7 * x + beta_xz * x * z
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    values = np.column_stack([y, z, x, x * z])
    mask = np.ones_like(values, dtype=bool)
    drop = rng.random(n) < missing
    mask[drop, 2] = False
    mask[drop, 3] = False
    return Dataset(toy_specs(z_kind), values, mask)


@pytest.fixture
def toy_dataset():
    return make_toy_dataset()
