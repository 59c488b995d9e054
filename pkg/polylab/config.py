from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, PositiveFloat, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class PolylabSettings(BaseSettings):
    """Process-level settings read from the environment."""

    model_config = SettingsConfigDict(env_prefix="POLYLAB_")

    LOG: str = "INFO"
    JOBS: int = 1


class FitConfig(BaseModel):
    """Inputs of the noise-restart fitting procedure."""

    C: PositiveFloat = 750.0
    sigma: float = Field(default=0.01, ge=0.0)
    n_repeat: int = Field(default=10, ge=0)
    # relative to the largest row norm of each solve
    tau_prune: PositiveFloat = 1e-6
    solver_tol: PositiveFloat = 1e-8
    max_ccp_iters: int = Field(default=50, ge=1)
    seed: int = 0
    anneal_incumbent: bool = False
    # greedy removal of rows the objective does not need
    remove_rows: bool = True


class ActiveConfig(BaseModel):
    """Settings of the query / line-search / refit loop."""

    delta: PositiveFloat
    eps_end: Optional[PositiveFloat] = None
    eps_close: Optional[PositiveFloat] = None
    n_init: int = Field(default=100, ge=1)
    max_rounds: int = Field(default=50, ge=1)
    r_max: PositiveFloat = 40.0
    origin_mode: Literal["anchor", "training_mean"] = "anchor"
    # "centered" replaces each bisected bracket by one of width delta around its midpoint
    bracket: Literal["bisect", "centered"] = "bisect"
    algorithm: Literal["main", "baseline", "hull"] = "main"
    seed: int = 0
    fit: FitConfig = FitConfig()

    @model_validator(mode="after")
    def _derive_tolerances(self) -> "ActiveConfig":
        if self.eps_end is None:
            self.eps_end = 1.5 * self.delta
        if self.eps_close is None:
            self.eps_close = self.delta
        return self

    @classmethod
    def defaults(
        cls, delta: float, baseline: bool = False, seed: int = 0
    ) -> "ActiveConfig":
        """Standard settings for a given bracket width."""
        return cls(
            delta=delta,
            eps_end=1.5 * delta,
            eps_close=delta,
            n_init=100,
            algorithm="baseline" if baseline else "main",
            seed=seed,
            fit=FitConfig(
                C=(750.0 if baseline else 75.0) / delta,
                sigma=0.001 / delta,
                n_repeat=10,
                seed=seed,
            ),
        )


class CanonicalPreset(BaseModel):
    """Chain-coupled base capacitances and the noise applied per device."""

    self_capacitance: float = Field(default=100.0, gt=0)
    # fraction of the diagonal, nearest neighbours only
    dot_coupling: float = Field(default=0.25, ge=0)
    gate_lever: float = Field(default=20.0, gt=0)
    # fraction of gate_lever reaching the adjacent dots
    gate_cross: float = Field(default=0.3, ge=0)
    noise: float = Field(default=0.05, ge=0)
    e: float = Field(default=1.0, gt=0)
    rescale: float = Field(default=100.0, gt=0)

    def base_matrices(self, n_dots: int) -> Tuple[np.ndarray, np.ndarray]:
        C_DD = np.eye(n_dots) * self.self_capacitance
        C_Dg = np.eye(n_dots) * self.gate_lever
        for i in range(n_dots - 1):
            C_DD[i, i + 1] = C_DD[i + 1, i] = -self.dot_coupling * self.self_capacitance
            C_Dg[i, i + 1] = C_Dg[i + 1, i] = self.gate_cross * self.gate_lever
        return C_DD, C_Dg


class ProblemMatrix(BaseModel):
    """One row of the sweep: a problem family at several dimensions."""

    kind: Literal["voronoi", "device"]
    dims: List[int]
    instances: int = Field(default=1, ge=1)
    first_instance: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_dims(self) -> "ProblemMatrix":
        for d in self.dims:
            if d not in (3, 4):
                raise ValueError(f"{self.kind} problems support d in {{3, 4}}, got {d}")
        return self


class ExperimentConfig(BaseModel):
    """A whole sweep pinned by one JSON file."""

    name: str = "experiment"
    seed: int = 0
    problems: List[ProblemMatrix]
    deltas: List[PositiveFloat]
    algorithms: List[Literal["main", "baseline", "hull"]] = ["main", "baseline"]
    # dotted paths into the ActiveConfig dump, e.g. {"fit.n_repeat": 3}
    overrides: Dict[str, Any] = {}
    angle_deg: PositiveFloat = 10.0
    device_preset: CanonicalPreset = CanonicalPreset()
