"""Protocol-cycle configuration shared by coordinator, harness, and CLI."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import StructuralError

ALLOWED_PATCH_SIZES = (1, 2, 4)


@dataclass(frozen=True)
class BudgetConfig:
    """Knobs for one protocol cycle.

    budget_blocks is the total payload budget per round, in channel blocks
    (one block = one P x P tile of one channel), across all collaborators.
    """

    budget_blocks: int
    tau_s: float = 1.0
    epsilon: float = 1e-6
    patch_size: int = 1
    experts: int = 4
    seed: int = 0
    rounds: int = 1

    def __post_init__(self):
        if self.budget_blocks < 0:
            raise StructuralError(f"budget must be >= 0, got {self.budget_blocks}")
        if self.patch_size not in ALLOWED_PATCH_SIZES:
            raise StructuralError(
                f"patch size {self.patch_size} not in {ALLOWED_PATCH_SIZES}")
        if self.experts < 1:
            raise StructuralError(f"expert count must be >= 1, got {self.experts}")
        if not self.tau_s > 0:
            raise StructuralError(f"tau_s must be > 0, got {self.tau_s}")
        if not self.epsilon > 0:
            raise StructuralError(f"epsilon must be > 0, got {self.epsilon}")
        if self.rounds < 1:
            raise StructuralError(f"round count must be >= 1, got {self.rounds}")
