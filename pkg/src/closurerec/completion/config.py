from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class CompletionConfig:
    """Matrix completion settings.

    ``regularisation=None`` lets soft-impute pick 0.02 x the largest singular
    value of the mean-filled matrix.
    """

    method: str = "copula"
    rank: int = 10
    max_iterations: int = 200
    convergence_tolerance: float = 1e-4
    regularisation: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in ("copula", "soft_impute"):
            raise ValueError(f"unknown completion method {self.method!r}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tolerance > 0:
            raise ValueError("convergence_tolerance must be > 0")
        if self.regularisation is not None and self.regularisation < 0:
            raise ValueError("regularisation must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "CompletionConfig":
        return cls(**doc)
