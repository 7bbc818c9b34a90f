"""A control problem bundles dynamics, cost, time grid and initial state."""

from __future__ import annotations

from dataclasses import dataclass

from .cost import CostSpec, PathCosts, path_cost
from .sde import DEFAULT_BOUND, DynamicsModel, InitialState, TimeGrid, TrajectoryBatch, rollout


@dataclass(frozen=True)
class ControlProblem:
    model: DynamicsModel
    cost: CostSpec
    grid: TimeGrid
    x0: InitialState
    bound: float = DEFAULT_BOUND

    def __post_init__(self):
        self.cost.check_coupling(self.model)

    def sample(self, policy, N: int, seed: int, workers: int = 1) -> tuple[TrajectoryBatch, PathCosts]:
        batch = rollout(self.model, policy, self.x0, self.grid, N, seed, workers=workers, bound=self.bound)
        return batch, path_cost(batch, self.cost)
