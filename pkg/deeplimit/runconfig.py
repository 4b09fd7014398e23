"""
Run configuration: a JSON file validated by the DRF serializers, with every
omitted key resolved to its default. Invalid files raise ConfigError naming
the offending (dotted) key or the JSON line.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .exceptions import ConfigError
from .serializers import RunConfigSerializer
from .services import continuum, network
from .services.functions import Activation, Classifier, get_activation, get_classifier
from .services.harness import LadderConfig
from .services.optimize import OptimizeConfig

logger = logging.getLogger(__name__)


def _flatten_errors(errors: Any, prefix: str = "") -> Dict[str, str]:
    """DRF's nested error dict as {"optimizer.grad_tol": "message"}."""
    flat: Dict[str, str] = {}
    if isinstance(errors, Mapping):
        for key, value in errors.items():
            name = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            flat.update(_flatten_errors(value, name))
    elif isinstance(errors, (list, tuple)):
        if errors and all(isinstance(e, str) for e in errors):
            flat[prefix or "config"] = " ".join(str(e) for e in errors)
        else:
            for i, value in enumerate(errors):
                if value:
                    flat.update(_flatten_errors(value, f"{prefix}[{i}]"))
    else:
        flat[prefix or "config"] = str(errors)
    return flat


def _plain(value: Any) -> Any:
    """Tuples and OrderedDicts from DRF as plain JSON types."""
    return json.loads(json.dumps(value))


@dataclass(frozen=True)
class RunConfig:
    """
    Resolved config tree plus the thread count. threads never enters
    `values`, so it changes neither the manifest nor the config hash.
    """

    values: Dict[str, Any]
    threads: Optional[int] = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def data_path(self) -> Optional[Path]:
        raw = self.values.get("data_path") or ""
        return Path(raw) if raw else None

    @property
    def output_dir(self) -> Optional[Path]:
        raw = self.values.get("output_dir") or ""
        return Path(raw) if raw else None

    def hyper(self) -> network.HyperParams:
        model = self.values["model"]
        return network.HyperParams(tuple(model["alphas"]), tuple(model["taus"]))

    def activation(self) -> Activation:
        return get_activation(self.values["model"]["activation"])

    def classifier(self) -> Classifier:
        return get_classifier(self.values["model"]["classifier"])

    def optimizer(self) -> OptimizeConfig:
        return OptimizeConfig(seed=self.seed, **self.values["optimizer"])

    def solver(self) -> continuum.OdeSolveConfig:
        solver = self.values["solver"]
        return continuum.OdeSolveConfig(solver["method"], solver["steps"])

    def ladder(self) -> LadderConfig:
        ladder = self.values["ladder"]
        model = self.values["model"]
        return LadderConfig(
            n_values=tuple(ladder["n_values"]),
            continuum_nodes=ladder["continuum_nodes"],
            hyper=self.hyper(),
            activation=model["activation"],
            classifier=model["classifier"],
            optimizer=self.optimizer(),
            solver=self.solver(),
            warm_start=ladder["warm_start"],
            continuum_method=ladder["continuum_method"],
            continuum_max_iters=ladder["continuum_max_iters"],
        )

    def training_set(self) -> network.TrainingSet:
        if self.data_path is None:
            raise ConfigError("this command needs a training set", key="data_path")
        if not self.data_path.exists():
            raise ConfigError(f"training data not found: {self.data_path}", key="data_path")
        return network.TrainingSet.from_csv(self.data_path)

    def with_overrides(self, threads: Optional[int] = None, **overrides: Any) -> "RunConfig":
        """Command-line overrides (seed, output_dir, threads); None leaves a key alone."""
        values = dict(self.values)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return validate_config({**values, "threads": threads or self.threads})

    def with_threads(self, threads: Optional[int]) -> "RunConfig":
        return replace(self, threads=threads)


def validate_config(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("the run configuration must be a JSON object")
    serializer = RunConfigSerializer(data=raw)
    if not serializer.is_valid():
        flat = _flatten_errors(serializer.errors)
        key = sorted(flat)[0]
        raise ConfigError(f"{key}: {flat[key]}", key=key)
    values = _plain(serializer.validated_data)
    threads = values.pop("threads", None)
    return RunConfig(values, threads)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", line=e.lineno) from e
    return validate_config(raw)


def parse_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_config_text(text, source=str(path))
    logger.debug("Loaded run config %s (experiment=%s)", path, cfg.experiment)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Fully-resolved config as JSON; parse_config_text(serialize_config(c)) == c."""
    values = cfg.values if cfg.threads is None else {**cfg.values, "threads": cfg.threads}
    return json.dumps(values, sort_keys=True, indent=2) + "\n"
