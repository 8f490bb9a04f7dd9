from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

META_HEURISTICS = ("nsga", "abc", "aco", "sa", "mopso")
BASELINES = ("lntk_only", "last_k", "random_k", "magnitude", "grad_norm")
ALGORITHMS = META_HEURISTICS + BASELINES


@dataclass
class SolverConfig:
    """Knobs for the server-side layer assignment.

    ``mutation_rate=None`` means ``1/L``. ``use_variance=False`` switches
    every solver to importance-only (single objective) mode.
    """

    algorithm: str = "nsga"
    population: int = 40
    iterations: int = 100
    seed: int = 0
    archive_capacity: int = 50
    use_variance: bool = True
    variance_weight: float = 1.0
    warm_start: bool = False
    # nsga
    mutation_rate: float | None = None
    crossover_rate: float = 0.9
    # abc
    abc_limit: int = 10
    abc_worse_acceptance: float = 0.05
    # aco
    evaporation: float = 0.1
    pheromone_alpha: float = 1.0
    heuristic_beta: float = 1.0
    # sa
    initial_temperature: float = 1.0
    cooling: float = 0.95
    sa_restart_probability: float = 0.2
    # mopso
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    max_velocity: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        rates = {
            "crossover_rate": self.crossover_rate,
            "evaporation": self.evaporation,
            "cooling": self.cooling,
            "abc_worse_acceptance": self.abc_worse_acceptance,
        }
        if not 0 <= self.sa_restart_probability <= 1:
            raise ConfigError("sa_restart_probability must lie in [0, 1]")
        if self.mutation_rate is not None:
            rates["mutation_rate"] = self.mutation_rate
        for name, value in rates.items():
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if self.algorithm in META_HEURISTICS and self.population < 4:
            raise ConfigError(f"population must be >= 4, got {self.population}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.archive_capacity < 1 or self.abc_limit < 1:
            raise ConfigError("archive_capacity and abc_limit must be >= 1")
        for name in ("initial_temperature", "inertia", "cognitive", "social", "max_velocity",
                     "pheromone_alpha", "heuristic_beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.initial_temperature <= 0:
            raise ConfigError("initial_temperature must be positive")
        if self.variance_weight < 0:
            raise ConfigError("variance_weight must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown selector keys: {sorted(unknown)}")
        return cls(**data)
