import json

import numpy as np
import pytest

from conftest import write_two_group
from matchcal.dataset import Covariate, DatasetSchema, interaction_design, load_dataset
from matchcal.errors import ParameterError, ParseError, SchemaError
from matchcal.pipeline import PipelineSpec, pipeline_json, run_pipeline


def _schema(**kw):
    return DatasetSchema.from_dict(kw)


def test_three_row_passthrough(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,w\n1.5,2,10\n-3,4,20\n0,6e1,30\n")
    ds = load_dataset(p, _schema(covariates=[{"name": "a"}], responses=["b"], final_weight="w"))
    np.testing.assert_array_equal(ds.x[:, 0], [1.5, -3.0, 0.0])
    np.testing.assert_array_equal(ds.responses["b"], [2.0, 4.0, 60.0])
    np.testing.assert_array_equal(ds.final_weight, [10.0, 20.0, 30.0])
    assert ds.n_dropped == 0 and ds.x_names == ["a"]


def test_three_level_dummies_with_merge(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("r\n1\n2\n3\n4\n2\n")
    cov = {"name": "r", "kind": "categorical", "levels": ["1", "2", "3"], "merge": {"4": "3"}}
    ds = load_dataset(p, _schema(covariates=[cov]))
    assert ds.x_names == ["r=2", "r=3"]
    np.testing.assert_array_equal(ds.x, [[0, 0], [1, 0], [0, 1], [0, 1], [1, 0]])
    np.testing.assert_array_equal(ds.design(["r"])[:, 0], 1.0)


def test_missing_codes_drop_rows(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.integers(1, 5, 100).astype(str)
    bad = [3, 10, 11, 40, 77, 98]
    vals[bad] = "9"
    ys = rng.normal(size=100).round(3).astype(str)
    ys[50] = "NA"
    p = tmp_path / "d.csv"
    p.write_text("k,y\n" + "".join(f"{a},{b}\n" for a, b in zip(vals, ys)))
    schema = _schema(
        covariates=[{"name": "k", "kind": "categorical", "levels": ["1", "2", "3", "4"], "missing": ["9"]}],
        responses=[{"name": "y", "missing": ["NA"]}],
    )
    ds = load_dataset(p, schema)
    assert ds.n_rows == 93 and ds.n_dropped == 7
    assert 52 not in ds.lines and 5 not in ds.lines  # file lines of rows 50 and 3


def test_unknown_level_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("r\n1\n2\n7\n")
    with pytest.raises(SchemaError, match="line 4"):
        load_dataset(p, _schema(covariates=[{"name": "r", "kind": "categorical", "levels": ["1", "2"]}]))


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a\n1\nx1\n")
    with pytest.raises(ParseError, match="line 3"):
        load_dataset(p, _schema(covariates=[{"name": "a"}]))


def test_schema_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,w\n1,0\n")
    with pytest.raises(SchemaError, match="missing columns"):
        load_dataset(p, _schema(covariates=[{"name": "b"}]))
    with pytest.raises(SchemaError, match="positive"):
        load_dataset(p, _schema(covariates=[{"name": "a"}], final_weight="w"))
    with pytest.raises(SchemaError):
        Covariate(name="c", kind="categorical", levels=["1"])


def test_cut_source_and_interactions(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("age,s\n20,1\n70,2\n65,1\n")
    schema = _schema(
        covariates=[
            {"name": "old", "source": "age", "cut": 65},
            {"name": "age"},
            {"name": "s", "kind": "categorical", "levels": ["2", "1"]},
        ]
    )
    ds = load_dataset(p, schema)
    np.testing.assert_array_equal(ds.design(["old"], intercept=False)[:, 0], [0, 1, 1])
    np.testing.assert_array_equal(interaction_design(ds, [("old", "s")]), [[1, 0], [1, 0], [1, 1]])


def test_two_group_pipeline_matches_closed_form(tmp_path):
    spec = PipelineSpec.from_json(write_two_group(tmp_path))
    s = run_pipeline(spec, threads=1)["y"]
    # truth (250*2 + 30*1 + 220*1.1)/500; matched units: 30 with y=1, 70 with y=2;
    # calibrating to equal z totals weights the two groups equally
    assert s.truth == pytest.approx(1.544)
    for est in ("M1", "M2"):
        assert s.estimators[est].mean_point - s.truth == pytest.approx(0.156, rel=1e-9)
    for est in ("MC1", "MC2", "DR1"):
        assert s.estimators[est].mean_point - s.truth == pytest.approx(-0.044, rel=1e-9)
        assert s.estimators[est].emp_variance == 0.0
    assert s.config["rows_dropped"] == 5
    doc = json.loads(pipeline_json({"y": s}))
    assert doc["responses"]["y"]["schema_version"] == 1


def test_pipeline_size_checks(tmp_path):
    spec = PipelineSpec.from_json(write_two_group(tmp_path))
    spec.M = 400
    with pytest.raises(ParameterError):
        run_pipeline(spec)
    with pytest.raises(ParameterError):
        PipelineSpec.from_dict({"nope": 1})


def test_pipeline_threads_do_not_change_results(tmp_path):
    spec = PipelineSpec.from_json(write_two_group(tmp_path))
    spec.replicates = 6
    a = pipeline_json(run_pipeline(spec, threads=1))
    b = pipeline_json(run_pipeline(spec, threads=3))
    assert a == b


def test_full_coverage_matched_mean_is_sample_mean(tmp_path):
    rng = np.random.default_rng(2)
    z = rng.integers(0, 2, 300)
    y = 1.0 + 2.0 * z
    rows = ["z,y,web,dw,fw"] + [f"{a},{b},1,1,1" for a, b in zip(z, y)]
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    spec = PipelineSpec(
        data=str(tmp_path / "d.csv"),
        schema={
            "covariates": [{"name": "z", "kind": "categorical", "levels": ["0", "1"]}],
            "responses": ["y"],
            "design_weight": "dw",
            "final_weight": "fw",
        },
        web={"column": "web", "value": "1"},
        n=40,
        M=300,
        calibration=["z"],
        replicates=200,
    )
    s = run_pipeline(spec)["y"]
    # every sampled unit finds a panel twin with the same z, hence the same y
    se = np.sqrt(s.estimators["M1"].emp_variance / 200)
    assert abs(s.estimators["M1"].mean_point - s.truth) < 3 * se
    assert abs(s.estimators["MC1"].mean_point - s.truth) < 1e-12
