import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from matchcal.population import FinitePopulation, HmtParams, generate_hmt, stratify_equal_x_total

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def hmt_pop():
    """Default gamma population with five equal-X-total strata."""
    return stratify_equal_x_total(generate_hmt(HmtParams(), 12345), 5)


@pytest.fixture
def small_pop():
    x = np.arange(1.0, 11.0)
    return FinitePopulation(x=x, y=2.0 * x + 1.0, stratum=np.r_[np.ones(5), 2 * np.ones(5)].astype(int))


def write_two_group(directory, n_missing=5):
    """Two-group microdata file plus a pipeline spec; returns the spec path.

    250 covered units with z=1 and y=2, 30 covered and 220 uncovered units
    with z=0 (y=1 and y=1.1), and ``n_missing`` rows with z coded 9.
    """
    rows = ["z,y,web,dw,fw"]
    rows += ["1,2,1,1,1"] * 250 + ["0,1,1,1,1"] * 30 + ["0,1.1,0,1,1"] * 220
    rows += ["9,5,1,1,1"] * n_missing
    data = directory / "two_group.csv"
    data.write_text("\n".join(rows) + "\n")
    spec = {
        "data": "two_group.csv",
        "schema": {
            "covariates": [{"name": "z", "kind": "categorical", "levels": ["0", "1"], "missing": ["9"]}],
            "responses": ["y"],
            "design_weight": "dw",
            "final_weight": "fw",
        },
        "web": {"column": "web", "value": "1"},
        "n": 100,
        "M": 280,
        "calibration": ["z"],
        "replicates": 20,
        "seed": 3,
    }
    path = directory / "spec.json"
    import json

    path.write_text(json.dumps(spec))
    return path
