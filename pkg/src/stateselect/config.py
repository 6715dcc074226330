"""Experiment configuration: one JSON document, strictly validated.

Unknown keys are rejected everywhere so typos fail loudly instead of
silently running a different experiment. The machine-readable schema ships
in ``docs/config_schema.json``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import catalog
from .errors import ConfigurationError
from .linear import LinearProblem
from .selection import SelectionConfig

_TOP_KEYS = {
    "model", "controller", "estimator", "selection", "steps", "seed",
    "output_dir", "init", "snapshot_every", "infeasible", "svg", "workers",
}
_CONTROLLER_KEYS = {"kind", "gain", "path"}
_ESTIMATOR_KEYS = {"kind", "particles", "resample_fraction"}
_SELECTION_KEYS = {"mode", "eps", "alpha", "delta", "horizon", "samples"}
_INIT_KEYS = {"mean", "cov"}
_LINEAR_KEYS = {
    "F", "G", "K", "Q", "R", "QN", "Sigma_w", "Sigma_v", "H",
    "x0_mean", "Sigma_0", "T", "xbar", "S", "ubar", "eps", "horizon",
}


def _require_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown keys in {where}: {', '.join(sorted(unknown))}"
        )


def _arr(value, where: str):
    if value is None:
        return None
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where} is not numeric: {exc}") from None


def linear_problem_from_dict(d: dict) -> LinearProblem:
    _require_keys(d, _LINEAR_KEYS, "model.linear")
    for key in ("F", "G", "K", "Q", "R", "Sigma_w", "x0_mean", "Sigma_0",
                "eps", "horizon"):
        if key not in d:
            raise ConfigurationError(f"model.linear is missing {key!r}")
    return LinearProblem(
        F=_arr(d["F"], "F"), G=_arr(d["G"], "G"), K=_arr(d["K"], "K"),
        Q=_arr(d["Q"], "Q"), R=_arr(d["R"], "R"),
        QN=_arr(d.get("QN", d["Q"]), "QN"),
        Sigma_w=_arr(d["Sigma_w"], "Sigma_w"),
        x0_mean=_arr(d["x0_mean"], "x0_mean"),
        Sigma_0=_arr(d["Sigma_0"], "Sigma_0"),
        eps=float(d["eps"]), horizon=int(d["horizon"]),
        T=_arr(d.get("T"), "T"), xbar=_arr(d.get("xbar"), "xbar"),
        S=_arr(d.get("S"), "S"), ubar=_arr(d.get("ubar"), "ubar"),
        H=_arr(d.get("H"), "H"), Sigma_v=_arr(d.get("Sigma_v"), "Sigma_v"),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see docs/config_schema.json."""

    model: str | LinearProblem
    controller: dict
    estimator: dict
    selection_mode: str
    selection: SelectionConfig
    steps: int
    seed: int
    output_dir: str | None = None
    init_mean: np.ndarray | None = None
    init_cov: np.ndarray | None = None
    snapshot_every: int = 1
    infeasible_policy: str = "stop"
    emit_svg: bool = True
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.selection_mode not in ("select", "mean"):
            raise ConfigurationError("selection mode must be 'select' or 'mean'")
        if self.estimator.get("kind") not in ("particle", "kalman"):
            raise ConfigurationError("estimator kind must be 'particle' or 'kalman'")
        if self.infeasible_policy not in ("stop", "fallback-mean"):
            raise ConfigurationError(
                "infeasible policy must be 'stop' or 'fallback-mean'")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.snapshot_every < 1:
            raise ConfigurationError("snapshot_every must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


def from_dict(doc: dict) -> ExperimentConfig:
    _require_keys(doc, _TOP_KEYS, "config")
    for key in ("model", "controller", "estimator", "selection", "steps", "seed"):
        if key not in doc:
            raise ConfigurationError(f"config is missing {key!r}")

    model = doc["model"]
    if isinstance(model, dict):
        _require_keys(model, {"linear"}, "model")
        if "linear" not in model:
            raise ConfigurationError("model object must contain 'linear'")
        model = linear_problem_from_dict(model["linear"])
    elif isinstance(model, str):
        catalog.get(model)  # fail fast on unknown names
    else:
        raise ConfigurationError("model must be a name or {'linear': {...}}")

    controller = doc["controller"]
    _require_keys(controller, _CONTROLLER_KEYS, "controller")
    if controller.get("kind") not in ("kappa1", "linear", "policy", "zero"):
        raise ConfigurationError(
            "controller kind must be one of kappa1, linear, policy, zero")
    if controller["kind"] == "linear" and not isinstance(model, LinearProblem) \
            and "gain" not in controller:
        raise ConfigurationError("linear controller needs a 'gain' matrix")
    if controller["kind"] == "policy" and "path" not in controller:
        raise ConfigurationError("policy controller needs a 'path'")

    estimator = doc["estimator"]
    _require_keys(estimator, _ESTIMATOR_KEYS, "estimator")

    sel = doc["selection"]
    _require_keys(sel, _SELECTION_KEYS, "selection")
    mode = sel.get("mode", "select")
    selection = SelectionConfig(
        eps=float(sel["eps"]), alpha=float(sel.get("alpha", 0.0)),
        delta=float(sel.get("delta", 0.01)), horizon=int(sel["horizon"]),
        samples=int(sel.get("samples", 0)), seed=int(doc["seed"]),
    )

    init = doc.get("init")
    init_mean = init_cov = None
    if init is not None:
        _require_keys(init, _INIT_KEYS, "init")
        init_mean = _arr(init.get("mean"), "init.mean")
        init_cov = _arr(init.get("cov"), "init.cov")

    return ExperimentConfig(
        model=model,
        controller=dict(controller),
        estimator=dict(estimator),
        selection_mode=mode,
        selection=selection,
        steps=int(doc["steps"]),
        seed=int(doc["seed"]),
        output_dir=doc.get("output_dir"),
        init_mean=init_mean,
        init_cov=init_cov,
        snapshot_every=int(doc.get("snapshot_every", 1)),
        infeasible_policy=doc.get("infeasible", "stop"),
        emit_svg=bool(doc.get("svg", True)),
        workers=int(doc.get("workers", 1)),
    )


def load(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path} is not valid JSON: {exc}") from None
    return from_dict(doc)
