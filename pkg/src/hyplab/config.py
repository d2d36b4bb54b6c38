"""Experiment configuration: one flat JSON dict with validated fields."""

import json
from dataclasses import dataclass, field, asdict

from .errors import ConfigInvalid

SUITES = ("fuchsian", "fem", "metric", "harmonic", "variation", "wp", "all")


@dataclass
class ExperimentConfig:
    # the octagon's order-8 symmetry annihilates the pure-v seed sector, so
    # the defaults mix the surviving constant and quadratic sectors
    refine: int = 4
    qd_seeds: list = field(default_factory=lambda: [
        [[1.0, 0.0]],
        [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
        [[1.0, 0.0], [0.0, 0.0], [0.5, 0.0]],
    ])
    qd_depth: int = 6
    qd_normalize: bool = False
    defect_samples: int = 100
    defect_depth_sweep: list = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    grid_step_factor: float = 0.02       # z stencil step = factor / sup|nu|
    grid_size: int = 5
    t_step_factor: float = 0.02          # t step = factor * positivity threshold
    t_count: int = 9
    domain: str = "surface"
    class_word: list = field(default_factory=lambda: [0])
    curve_system: list = field(default_factory=lambda: [[0], [1], [2], [3]])
    circle_samples: int = 512
    powers: list = field(default_factory=lambda: [5.0 / 6.0, 0.9, 1.0])
    random_seed: int = 1234
    suite: str = "all"
    out_dir: str = "."
    svg: bool = False
    threads: int = 1

    def validate(self):
        if not (0 <= self.refine <= 8):
            raise ConfigInvalid("refine", f"{self.refine} outside [0, 8]")
        if not (1 <= self.qd_depth <= 9):
            raise ConfigInvalid("qd_depth", f"{self.qd_depth} outside [1, 9]")
        if self.suite not in SUITES:
            raise ConfigInvalid("suite", f"{self.suite!r} not in {SUITES}")
        if self.domain not in ("surface", "circle"):
            raise ConfigInvalid("domain", f"{self.domain!r}")
        if not (0 < self.grid_step_factor <= 0.2):
            raise ConfigInvalid("grid_step_factor",
                                f"{self.grid_step_factor} outside (0, 0.2]")
        if not (0 < self.t_step_factor <= 0.2):
            raise ConfigInvalid("t_step_factor",
                                f"{self.t_step_factor} outside (0, 0.2]")
        if self.t_count < 5 or self.t_count % 2 == 0:
            raise ConfigInvalid("t_count", "needs an odd count >= 5")
        if self.grid_size < 3 or self.grid_size % 2 == 0:
            raise ConfigInvalid("grid_size", "needs an odd size >= 3")
        if self.circle_samples < 64:
            raise ConfigInvalid("circle_samples", "needs >= 64 samples")
        if not self.qd_seeds:
            raise ConfigInvalid("qd_seeds", "at least one seed required")
        for s in self.qd_seeds:
            if all(abs(c[0]) + abs(c[1]) < 1e-300 for c in s):
                raise ConfigInvalid("qd_seeds", "zero seed polynomial")
        if not all(0 < c <= 2 for c in self.powers):
            raise ConfigInvalid("powers", "powers must lie in (0, 2]")
        return self

    def seeds_complex(self):
        return [tuple(complex(c[0], c[1]) for c in s) for s in self.qd_seeds]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        cfg = ExperimentConfig(**data)
        cfg.validate()
        return cfg

    @staticmethod
    def from_file(path, overrides=None):
        with open(path) as fh:
            data = json.load(fh)
        if overrides:
            data.update(overrides)
        cfg = ExperimentConfig(**data)
        cfg.validate()
        return cfg
