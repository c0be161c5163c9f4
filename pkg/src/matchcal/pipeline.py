"""Replicated matching study on a real (or synthetic) microdata file.

Each replicate draws a simple random sample of ``n`` from the full file as
the probability sample and ``M`` from the covered (e.g. web) subset as the
panel, propensity-matches them, and estimates weighted means of every
response with all matched, calibrated and doubly robust estimators.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calibrate import calibrate_weights
from .dataset import DatasetSchema, LoadedDataset, interaction_design, load_dataset
from .errors import ParameterError, SchemaError
from .estimators import dr_weights, matched_suite
from .matching import propensity_match
from .montecarlo import assemble_summary, default_threads, run_replicates
from .rng import derive
from .sampling import DesignSample, srs
from .variance import ESTIMATOR_VARIANCES

PIPELINE_KINDS = ("M1", "M2", "MC1", "MC2", "DR1", "DR2")


@dataclass
class PipelineSpec:
    """Settings for :func:`run_pipeline`.

    ``web`` selects the covered subset as ``{"column": name, "value": v}``;
    the column is read raw (as text). ``calibration`` and ``propensity`` list
    covariate names from the schema. ``dr2_pairs`` lists covariate pairs
    whose products form the second doubly robust propensity model; leave it
    empty to skip that estimator.
    """

    data: str
    schema: dict
    web: dict
    n: int
    M: int
    calibration: list
    propensity: Optional[list] = None
    dr2_pairs: list = field(default_factory=list)
    responses: Optional[list] = None
    replicates: int = 100
    seed: int = 1
    sigma_tilde2: float = 1.0
    sigma_star2: float = 1.0
    weighted_propensity_match: bool = False

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineSpec":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ParameterError(f"unknown pipeline fields: {sorted(extra)}")
        spec = cls(**d)
        if base_dir is not None and not Path(spec.data).is_absolute():
            spec.data = str(Path(base_dir) / spec.data)
        return spec

    @classmethod
    def from_json(cls, path) -> "PipelineSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=Path(path).parent)

    def dataset_schema(self) -> DatasetSchema:
        schema = DatasetSchema.from_dict(self.schema)
        if self.web["column"] not in schema.keep:
            schema.keep.append(self.web["column"])
        if schema.design_weight is None or schema.final_weight is None:
            raise SchemaError("the pipeline needs both a design weight and a final weight column")
        return schema

    def to_dict(self) -> dict:
        return asdict(self)


def _variance_plan() -> dict:
    plan = {}
    for est, dist in ESTIMATOR_VARIANCES:
        plan.setdefault(est, []).append(dist)
    return plan


def pipeline_replicate(spec: PipelineSpec, ds: LoadedDataset, prep: dict, b: int) -> dict:
    """One replicate: returns response -> {"points", "variances"} on the mean scale."""
    rs = derive(spec.seed, 1, b)
    n_full = ds.n_rows
    p_idx = np.sort(srs(n_full, spec.n, derive(rs, 0)))
    web_idx = prep["web_idx"]
    panel_idx = np.sort(web_idx[srs(web_idx.shape[0], spec.M, derive(rs, 1))])

    scale = n_full / spec.n
    w_tilde = scale * ds.final_weight[p_idx]
    w_pi = scale * ds.design_weight[p_idx] * prep["f_nr"]
    donor = DesignSample(unit_ids=p_idx, pi=1.0 / w_pi, stratum=np.ones(spec.n, dtype=np.int64), greg_weight=w_tilde)

    prop_x = prep["prop_x"]
    sk = propensity_match(
        prop_x[p_idx],
        w_pi if spec.weighted_propensity_match else None,
        prop_x[panel_idx],
    )
    calib = prep["calib"]
    target = prep["target"]

    # doubly robust weights do not depend on the response
    sub = np.sort(panel_idx[srs(spec.M, spec.n, derive(rs, 2))])
    dr = {}
    for kind, design in prep["dr_designs"].items():
        odds, _ = dr_weights(design[p_idx], w_pi, design[sub])
        dr[kind] = calibrate_weights(odds, calib[sub], target, spec.sigma_star2).weights

    out = {}
    for resp in prep["responses"]:
        y = ds.responses[resp]
        reports = matched_suite(
            sk,
            donor,
            calib[p_idx],
            calib[panel_idx],
            y[panel_idx],
            target,
            sigma_tilde2=spec.sigma_tilde2,
            sigma_star2=spec.sigma_star2,
            variances=_variance_plan(),
        )
        points, variances = {}, {}
        for est, rep in reports.items():
            points[est] = rep.mean
            for dist, v in rep.mean_variances().items():
                variances[f"{est}:{dist}"] = v
        for kind, w in dr.items():
            points[kind] = float(w @ y[sub]) / float(w.sum())
        out[resp] = {"points": points, "variances": variances}
    return out


def prepare(spec: PipelineSpec, ds: LoadedDataset) -> dict:
    """Quantities shared by every replicate."""
    col = spec.web["column"]
    web = (ds.extra[col] == str(spec.web["value"])).to_numpy()
    web_idx = np.flatnonzero(web)
    if not (1 < spec.n <= spec.M <= web_idx.shape[0]):
        raise ParameterError(f"need 1 < n <= M <= web subset size, got n={spec.n}, M={spec.M}, web={web_idx.shape[0]}")
    if spec.n > ds.n_rows:
        raise ParameterError(f"n={spec.n} exceeds the {ds.n_rows} usable rows")
    calib = ds.design(spec.calibration, intercept=True)
    propensity = spec.propensity if spec.propensity is not None else spec.calibration
    dr_designs = {"DR1": calib}
    if spec.dr2_pairs:
        dr_designs["DR2"] = interaction_design(ds, spec.dr2_pairs)
    responses = spec.responses if spec.responses is not None else list(ds.responses)
    unknown = [r for r in responses if r not in ds.responses]
    if unknown:
        raise ParameterError(f"responses {unknown} are not in the schema")
    return {
        "web_idx": web_idx,
        "f_nr": float(ds.final_weight.sum() / ds.design_weight.sum()),
        "calib": calib,
        "target": ds.final_weight @ calib,
        "prop_x": ds.design(propensity, intercept=False),
        "dr_designs": dr_designs,
        "responses": responses,
    }


def run_pipeline(spec: PipelineSpec, threads: Optional[int] = None, dataset: Optional[LoadedDataset] = None) -> dict:
    """Run the replicated pipeline; returns response -> MonteCarloSummary.

    The truth for each response is the final-weighted mean over the whole
    usable file. Means divide totals by the sum of the estimator's own
    weights, and their variances divide by its square.
    """
    threads = default_threads() if threads is None else int(threads)
    ds = load_dataset(spec.data, spec.dataset_schema()) if dataset is None else dataset
    prep = prepare(spec, ds)
    results, failures = run_replicates(lambda b: pipeline_replicate(spec, ds, prep, b), int(spec.replicates), threads)
    kinds = [k for k in PIPELINE_KINDS if k in ("M1", "M2", "MC1", "MC2") or k in prep["dr_designs"]]
    keys = [f"{e}:{d}" for e, d in ESTIMATOR_VARIANCES]
    fw = ds.final_weight
    summaries = {}
    for resp in prep["responses"]:
        ok = [r[resp] for r in results if r is not None]
        points = {k: np.array([r["points"][k] for r in ok]) for k in kinds}
        variances = {k: np.array([r["variances"][k] for r in ok]) for k in keys}
        truth = float(fw @ ds.responses[resp] / fw.sum())
        cfg = spec.to_dict()
        cfg["rows_used"] = ds.n_rows
        cfg["rows_dropped"] = ds.n_dropped
        summaries[resp] = assemble_summary(truth, points, variances, spec.replicates, failures, cfg, label=resp)
    return summaries


def pipeline_json(summaries: dict) -> str:
    from .montecarlo import SCHEMA_VERSION

    doc = {"schema_version": SCHEMA_VERSION, "responses": {k: s.to_dict() for k, s in summaries.items()}}
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"
