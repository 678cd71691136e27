"""Flat key = value run configuration shared by every command.

Precedence: CLI --set flag > config file > built-in default. The ``backbone``
key selects a preset (``toy`` or ``full``) whose patch sizes, label radius and
crop jitter differ; any individual key can still be overridden. Unknown keys
are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .losses import LossConfig
from .network import NetworkConfig, full_config, toy_config
from .tracker import TrackerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_float(s: str) -> float:
    if s.lower() in ("inf", "+inf", "infinity"):
        return float("inf")
    if s.lower() in ("-inf", "-infinity"):
        return float("-inf")
    return float(s)


# key -> (section, attribute, parser, description)
KEYS: dict[str, tuple[str, str, Callable, str]] = {
    "seed": ("run", "seed", int, "master random seed for the whole run"),
    "backbone": ("run", "backbone", str, "network preset: toy or full"),
    "exemplar_size": ("network", "exemplar_size", int, "exemplar patch side, px"),
    "instance_size_train": ("network", "instance_size_train", int, "training search patch side, px"),
    "instance_size_track": ("network", "instance_size_track", int, "tracking search patch side, px"),
    "tsa_reduction": ("network", "tsa_reduction", int, "channel reduction inside the attention gates"),
    "num_identities": ("network", "num_identities", int, "identity classes of the training head"),
    "identity_hidden": ("network", "identity_hidden", int, "hidden width of the identity head"),
    "lambda1": ("loss", "lambda1", float, "weight of the ranking (N-pair) loss"),
    "lambda2": ("loss", "lambda2", float, "weight of the identification loss"),
    "margin_m": ("loss", "margin_m", float, "triplet margin"),
    "label_radius": ("loss", "label_radius", float, "positive-label radius on the response map, px"),
    "alpha": ("tracker", "alpha", _parse_float, "occlusion affinity threshold"),
    "beta": ("tracker", "beta", _parse_float, "occlusion historic-IOU threshold"),
    "gamma": ("tracker", "gamma", float, "candidate/refinement IOU threshold"),
    "terminate_after": ("tracker", "terminate_after", int, "occluded frames before termination"),
    "iou_window": ("tracker", "iou_window", int, "historic IOU window, frames"),
    "search_scale": ("tracker", "search_scale", float, "search region side in target sizes"),
    "k_samples": ("tracker", "k_samples", int, "tracklet embeddings sampled for association"),
    "batch_size": ("train", "batch_size", int, "training pairs per step"),
    "momentum": ("train", "momentum", float, "SGD momentum coefficient"),
    "lr_start": ("train", "lr_start", float, "initial learning rate"),
    "lr_end": ("train", "lr_end", float, "final learning rate (geometric decay)"),
    "epochs": ("train", "epochs", int, "training epochs"),
    "steps_per_epoch": ("train", "steps_per_epoch", int, "optimizer steps per epoch"),
    "frame_gap_max": ("train", "frame_gap_max", int, "max frame gap of a positive pair"),
    "jitter_px": ("train", "jitter_px", float, "instance crop centre jitter, px"),
}

# preset-dependent defaults beyond the NetworkConfig constructors
_PRESET_TUNING = {
    "toy": {"label_radius": 2.0, "jitter_px": 2.0},
    "full": {"label_radius": 16.0, "jitter_px": 8.0},
}


@dataclass
class RunConfig:
    seed: int = 0
    backbone: str = "toy"
    network: NetworkConfig = field(default_factory=toy_config)
    loss: LossConfig = field(default_factory=lambda: LossConfig(label_radius=2.0))
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(jitter_px=2.0))
    explicit: frozenset = frozenset()   # keys the user actually set

    def was_set(self, key: str) -> bool:
        return key in self.explicit


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and # comments allowed."""
    values: dict[str, str] = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_run_config(file_values: dict[str, str] | None = None,
                     cli_values: dict[str, str] | None = None) -> RunConfig:
    merged: dict[str, str] = {**(file_values or {}), **(cli_values or {})}
    for key in merged:
        if key not in KEYS:
            raise ConfigError(f"unknown config key '{key}'")

    backbone = merged.get("backbone", "toy")
    if backbone not in ("toy", "full"):
        raise ConfigError(f"backbone must be 'toy' or 'full', got '{backbone}'")
    net = toy_config() if backbone == "toy" else full_config()
    loss_kwargs = {"label_radius": _PRESET_TUNING[backbone]["label_radius"]}
    trk = TrackerConfig()
    trn = TrainConfig(jitter_px=_PRESET_TUNING[backbone]["jitter_px"])
    seed = 0

    for key, raw in merged.items():
        section, attr, parse, _ = KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': {exc}") from None
        if key == "seed":
            seed = value
        elif key == "backbone":
            pass
        elif section == "network":
            net = replace(net, **{attr: value})
        elif section == "loss":
            loss_kwargs[attr] = value
        elif section == "tracker":
            setattr(trk, attr, value)
        else:
            setattr(trn, attr, value)

    return RunConfig(seed=seed, backbone=backbone, network=net,
                     loss=LossConfig(**loss_kwargs), tracker=trk, train=trn,
                     explicit=frozenset(merged))


def describe_keys() -> str:
    """Help text: every key with its toy-preset default."""
    defaults = build_run_config()
    sections = {"run": defaults, "network": defaults.network, "loss": defaults.loss,
                "tracker": defaults.tracker, "train": defaults.train}
    lines = ["configuration keys (toy-preset defaults):"]
    for key, (section, attr, _, desc) in KEYS.items():
        value = getattr(sections[section], attr)
        lines.append(f"  {key:<22} default {value!s:<8} {desc}")
    return "\n".join(lines)
