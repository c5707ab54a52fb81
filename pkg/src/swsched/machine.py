"""Abstract core-group machine description."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class MachineConfig:
    """One core group: scratchpad capacity per compute element, element count,
    and the initial per-variable buffer chunk used by the planner."""

    ldm_bytes: int = 65536
    num_pes: int = 64
    init_chunk: int = 64
    reserve_bytes: int = 0  # scratchpad bytes held back from the planning budget

    def __post_init__(self):
        if self.ldm_bytes <= 0 or self.num_pes <= 0 or self.init_chunk <= 0:
            raise ValueError("machine parameters must be positive")
        if not 0 <= self.reserve_bytes < self.ldm_bytes:
            raise ValueError("reserve_bytes must be in [0, ldm_bytes)")

    @property
    def budget_bytes(self) -> int:
        return self.ldm_bytes - self.reserve_bytes
