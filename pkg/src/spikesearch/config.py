"""Run configuration: key = value files, profile presets, validation.

The file format is flat ``key = value`` lines with ``#`` comments.  Unknown
keys are rejected.  A ``profile`` key applies backbone presets before the
file's own overrides.  The canonical serialization (sorted keys, resolved
defaults) feeds the config hash embedded in every artifact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .data import DatasetSpec
from .network import PROFILES, BackboneProfile, NetSpec
from .objectives import LossConfig
from .spiking import NeuronParams


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(x) for x in s.split(","))


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    # backbone (profile presets; individually overridable)
    cells: int = 2
    reductions: tuple[int, ...] = (2,)
    nodes: int = 2
    channels: int = 8
    t_max: int = 4
    in_channels: int = 1
    in_height: int = 8
    in_width: int = 8
    classes: int = 3
    # compression / objectives
    bit_candidates: tuple[int, ...] = (1, 2, 4)
    pruning_rate: float = 50.0
    lambda_mem: float = 0.0
    lambda_comp: float = 0.0
    # optimization
    epochs: int = 20
    batch_size: int = 30
    lr_weights: float = 0.025
    momentum: float = 0.9
    lr_arch: float = 3e-4
    retrain_epochs: int = 60
    retrain_lr: float = 0.025
    aux_cell: int = 0            # 0 = penultimate cell
    aux_weight: float = 0.4
    alpha_per_cell: bool = False
    seed: int = 7
    # neuron
    tau_decay: float = 0.2
    v_th: float = 0.5
    surrogate_temp: float = 3.0
    # dataset
    dataset_kind: str = "synthetic-patterns"
    samples_per_class: int = 200
    noise: float = 0.08
    train_fraction: float = 0.8
    dataset_images: str = ""
    dataset_labels: str = ""
    dataset_csv: str = ""

    def validate(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.retrain_epochs < 1:
            raise ConfigError("batch size and epoch counts must be positive")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not self.bit_candidates or any(b < 1 for b in self.bit_candidates):
            raise ConfigError(f"bad bit candidates {self.bit_candidates}")
        if not 0.0 <= self.pruning_rate < 100.0:
            raise ConfigError(f"pruning rate {self.pruning_rate} outside [0, 100)")
        if self.lambda_mem < 0 or self.lambda_comp < 0:
            raise ConfigError("lambda coefficients must be nonnegative")
        if self.channels % self.nodes:
            raise ConfigError("channels must be divisible by node count")
        if self.aux_cell < 0 or self.aux_cell > self.cells:
            raise ConfigError(f"aux cell {self.aux_cell} outside [0, {self.cells}]")
        return self

    # ------------------------------------------------------------------

    def backbone(self) -> BackboneProfile:
        return BackboneProfile(
            name=self.profile, cells=self.cells, reductions=self.reductions,
            nodes=self.nodes, channels=self.channels, t_max=self.t_max,
            in_channels=self.in_channels, in_hw=(self.in_height, self.in_width),
            classes=self.classes)

    def neuron(self) -> NeuronParams:
        return NeuronParams(tau_decay=self.tau_decay, v_th=self.v_th,
                            surrogate_temp=self.surrogate_temp)

    def net_spec(self, with_aux: bool = False) -> NetSpec:
        aux = None
        if with_aux:
            aux = self.aux_cell if self.aux_cell else max(1, self.cells - 1)
        return NetSpec(profile=self.backbone(),
                       bit_candidates=self.bit_candidates,
                       pruning_rate=self.pruning_rate, neuron=self.neuron(),
                       alpha_per_cell=self.alpha_per_cell, aux_cell=aux)

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_mem=self.lambda_mem, lambda_comp=self.lambda_comp,
                          pruning_rate=self.pruning_rate)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(kind=self.dataset_kind, classes=self.classes,
                           samples_per_class=self.samples_per_class,
                           noise=self.noise, height=self.in_height,
                           width=self.in_width, timesteps=self.t_max,
                           train_fraction=self.train_fraction, seed=self.seed,
                           images_path=self.dataset_images or None,
                           labels_path=self.dataset_labels or None,
                           csv_path=self.dataset_csv or None)

    # ------------------------------------------------------------------

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_PARSERS = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
    tuple: _parse_int_list,
}

_PROFILE_KEYS = ("cells", "reductions", "nodes", "channels", "t_max",
                 "in_channels", "in_height", "in_width", "classes")


def _profile_preset(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}")
    p = PROFILES[name]
    return {"cells": p.cells, "reductions": p.reductions, "nodes": p.nodes,
            "channels": p.channels, "t_max": p.t_max,
            "in_channels": p.in_channels, "in_height": p.in_hw[0],
            "in_width": p.in_hw[1], "classes": p.classes}


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    values: dict = {}
    profile = raw.get("profile", RunConfig.profile)
    values.update(_profile_preset(profile))
    values["profile"] = profile
    field_types = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    for key, text_value in raw.items():
        if key == "profile":
            continue
        parser = _PARSERS[field_types[key]]
        try:
            values[key] = parser(text_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc
    if overrides:
        values.update(overrides)
    return RunConfig(**values).validate()


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), overrides)


def desk_config(**overrides) -> RunConfig:
    base = dict(_profile_preset("desk"), profile="desk")
    base.update(overrides)
    return RunConfig(**base).validate()
