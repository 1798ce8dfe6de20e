"""Run configuration: one flat key-value file drives every subcommand.

Every random behavior in a run derives from the single master seed; the file
round-trips losslessly through read_config/write_config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .dataset import GenConfig, SeedConfig
from .geometry import ParseError, RuleSet
from .nn.train import TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    # corpus
    rule_count: int = 3
    seeds: int = 50
    variants: int = 100
    ops_per_rule: int = 1
    window: int = 200
    stride: int = 150
    frac_train: float = 0.80
    frac_val: float = 0.15
    frac_test: float = 0.05
    # rule set
    min_width: int = 28
    min_spacing: int = 36
    eol_spacing: int = 45
    eol_end_max_width: int = 40
    # seed layouts
    extent_x: int = 2000
    extent_y: int = 2000
    width_min: int = 28
    width_max: int = 48
    # model / training
    preset: str = "three_rule"
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 20

    def ruleset(self) -> RuleSet:
        return RuleSet(self.min_width, self.min_spacing, self.eol_spacing, self.eol_end_max_width)

    def seed_config(self) -> SeedConfig:
        return SeedConfig(
            extent=(self.extent_x, self.extent_y),
            width_range=(self.width_min, self.width_max),
        )

    def gen_config(self) -> GenConfig:
        return GenConfig(
            seeds=self.seeds,
            variants=self.variants,
            rule_count=self.rule_count,
            master_seed=self.seed,
            window=self.window,
            stride=self.stride,
            ops_per_rule=self.ops_per_rule,
            fractions=(self.frac_train, self.frac_val, self.frac_test),
            seed_cfg=self.seed_config(),
            rules=self.ruleset(),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            decay=self.decay,
            epsilon=self.epsilon,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )


def write_config(cfg: RunConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)!r}" for f in dataclasses.fields(cfg)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_config(path, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    casts = {"int": int, "float": float, "str": lambda s: s.strip("'\"")}
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", ln)
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown config key {key!r}", ln)
            try:
                setattr(cfg, key, casts[types[key]](val))
            except (KeyError, ValueError):
                raise ParseError(f"bad value for {key!r}: {val!r}", ln) from None
    return cfg
