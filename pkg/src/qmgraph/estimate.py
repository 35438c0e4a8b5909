from dataclasses import dataclass

from .errors import DomainError


@dataclass(frozen=True)
class EstimateWithError:
    """A point estimate with its one-standard-deviation error."""

    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if not self.std_error >= 0:
            raise DomainError(f"std_error {self.std_error} must be >= 0")
        if self.n_samples < 1:
            raise DomainError(f"n_samples {self.n_samples} must be >= 1")

    def as_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples}
