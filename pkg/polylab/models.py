"""
Ground-truth problems: the constant interaction model of a quantum-dot array
and the Voronoi-cell benchmark.

Device polytopes are expressed in rescaled coordinates x = rescale * (Vg - v_ref)
so that they live in [-10, 10]^d like the Voronoi cells.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from lib.exceptions import (
    BoundaryHit,
    ConfigError,
    DimensionMismatch,
    GeometryError,
    RetryExhausted,
)

from . import geometry
from .config import CanonicalPreset
from .geometry import HPolytope, Hyperplane
from .schemas import DeviceSchema, VoronoiSchema

logger = logging.getLogger(__name__)

BOX = 10.0
N_SITES = 30
DEVICE_ATTEMPTS = 100
VORONOI_ATTEMPTS = 10_000
# accepted facet counts of the home cell; dimensions not listed are unrestricted
VORONOI_FACETS = {3: (6, 12)}
DEFAULT_S_MAX = 4

StateVector = Tuple[int, ...]


@lru_cache(maxsize=16)
def state_box(n_dots: int, s_max: int) -> np.ndarray:
    """All states of {0..s_max}^n in lexicographic order."""
    return np.array(list(itertools.product(range(s_max + 1), repeat=n_dots)), dtype=int)


def state_index(s: Sequence[int], s_max: int) -> int:
    """Mixed-radix id of a state, matching the order of state_box."""
    idx = 0
    for v in s:
        idx = idx * (s_max + 1) + int(v)
    return idx


def state_from_index(idx: int, n_dots: int, s_max: int) -> StateVector:
    digits = []
    for _ in range(n_dots):
        idx, v = divmod(idx, s_max + 1)
        digits.append(v)
    return tuple(reversed(digits))


@dataclass(frozen=True)
class DeviceModel:
    C_DD: np.ndarray
    C_Dg: np.ndarray
    e_charge: float = 1.0
    rescale: float = 100.0
    v_ref: Optional[np.ndarray] = None
    target: StateVector = field(default=())

    def __post_init__(self):
        C_DD = np.atleast_2d(np.asarray(self.C_DD, dtype=float))
        C_Dg = np.atleast_2d(np.asarray(self.C_Dg, dtype=float))
        n = C_DD.shape[0]
        if C_DD.shape != (n, n) or C_Dg.shape[0] != n:
            raise DimensionMismatch(
                f"C_DD {C_DD.shape} and C_Dg {C_Dg.shape} are inconsistent"
            )
        if np.max(np.abs(C_DD - C_DD.T)) > 1e-12 * max(1.0, np.max(np.abs(C_DD))):
            raise ConfigError("C_DD is not symmetric")
        if self.e_charge <= 0 or self.rescale <= 0:
            raise ConfigError("e_charge and rescale must be positive")
        v_ref = np.zeros(C_Dg.shape[1]) if self.v_ref is None else self.v_ref
        v_ref = np.asarray(v_ref, dtype=float)
        if v_ref.shape != (C_Dg.shape[1],):
            raise DimensionMismatch(f"v_ref has shape {v_ref.shape}")
        target = tuple(int(v) for v in self.target) or (1,) * n
        if len(target) != n or min(target) < 0:
            raise DimensionMismatch(f"target state {target} does not fit {n} dots")
        object.__setattr__(self, "C_DD", C_DD)
        object.__setattr__(self, "C_Dg", C_Dg)
        object.__setattr__(self, "v_ref", v_ref)
        object.__setattr__(self, "target", target)
        # raises ConfigError when C_DD is not positive definite
        _ = self.cholesky

    @property
    def n_dots(self) -> int:
        return self.C_DD.shape[0]

    @property
    def n_gates(self) -> int:
        return self.C_Dg.shape[1]

    @cached_property
    def cholesky(self):
        try:
            return cho_factor(self.C_DD)
        except LinAlgError as e:
            raise ConfigError(f"C_DD is not positive definite: {e}")

    def inverse_apply(self, Q: np.ndarray) -> np.ndarray:
        """C_DD^{-1} Q for a vector or the columns of a matrix."""
        return cho_solve(self.cholesky, Q)

    def to_rescaled(self, Vg) -> np.ndarray:
        return self.rescale * (np.asarray(Vg, dtype=float) - self.v_ref)

    def to_gate(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.rescale + self.v_ref

    def anchor(self, s: Optional[Sequence[int]] = None) -> np.ndarray:
        """Rescaled least-squares solution of |e| s + C_Dg Vg = 0."""
        s = np.asarray(self.target if s is None else s, dtype=float)
        Vg, *_ = np.linalg.lstsq(self.C_Dg, -self.e_charge * s, rcond=None)
        return self.to_rescaled(Vg)

    def with_reference(self, v_ref) -> "DeviceModel":
        return DeviceModel(self.C_DD, self.C_Dg, self.e_charge, self.rescale,
                           np.asarray(v_ref, dtype=float), self.target)

    def to_schema(self) -> DeviceSchema:
        return DeviceSchema(
            n_dots=self.n_dots,
            n_gates=self.n_gates,
            C_DD=self.C_DD.tolist(),
            C_Dg=self.C_Dg.tolist(),
            e=self.e_charge,
            rescale=self.rescale,
            v_ref=self.v_ref.tolist(),
            target=list(self.target),
        )

    @classmethod
    def from_schema(cls, schema: DeviceSchema) -> "DeviceModel":
        C_DD = np.array(schema.C_DD, dtype=float)
        C_Dg = np.array(schema.C_Dg, dtype=float)
        if C_DD.shape != (schema.n_dots, schema.n_dots) or C_Dg.shape != (
            schema.n_dots,
            schema.n_gates,
        ):
            raise DimensionMismatch("device JSON shapes disagree with n_dots/n_gates")
        return cls(C_DD, C_Dg, schema.e, schema.rescale, schema.v_ref,
                   tuple(schema.target or ()))


def _check_vg(dev: DeviceModel, Vg) -> np.ndarray:
    Vg = np.asarray(Vg, dtype=float)
    if Vg.shape != (dev.n_gates,):
        raise DimensionMismatch(f"Vg has shape {Vg.shape}, expected ({dev.n_gates},)")
    return Vg


def free_energy(dev: DeviceModel, s: Sequence[int], Vg) -> float:
    """F(s, Vg) = 1/2 (|e| s + C_Dg Vg)^T C_DD^{-1} (|e| s + C_Dg Vg)."""
    s = np.asarray(s, dtype=float)
    if s.shape != (dev.n_dots,):
        raise DimensionMismatch(f"state has shape {s.shape}, expected ({dev.n_dots},)")
    q = dev.e_charge * s + dev.C_Dg @ _check_vg(dev, Vg)
    return 0.5 * float(q @ dev.inverse_apply(q))


def _energies(dev: DeviceModel, states: np.ndarray, Vg: np.ndarray) -> np.ndarray:
    Q = dev.e_charge * states + (dev.C_Dg @ Vg)[None, :]
    return 0.5 * np.einsum("ij,ji->i", Q, dev.inverse_apply(Q.T))


def transition_halfspace(
    dev: DeviceModel, s: Sequence[int], r: Sequence[int]
) -> Hyperplane:
    """
    Gate-voltage plane where states s and r have equal energy. The halfspace
    normal . Vg + offset <= 0 is the side where s is preferred.
    """
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.array_equal(s, r):
        raise ValueError("transition_halfspace needs two distinct states")
    e = dev.e_charge
    normal = e * dev.C_Dg.T @ dev.inverse_apply(s - r)
    offset = 0.5 * e**2 * (s @ dev.inverse_apply(s) - r @ dev.inverse_apply(r))
    return Hyperplane(normal, float(offset))


def ground_state(dev: DeviceModel, Vg, s_max: int = DEFAULT_S_MAX) -> StateVector:
    """Lowest-energy state in {0..s_max}^n; ties resolve to the smallest state."""
    if s_max < 1:
        raise ValueError("s_max must be at least 1")
    states = state_box(dev.n_dots, s_max)
    energies = _energies(dev, states, _check_vg(dev, Vg))
    best = states[int(np.argmin(energies))]
    if np.any(best == s_max):
        raise BoundaryHit(
            f"ground state {best.tolist()} touches s_max={s_max}",
            {"state": best.tolist(), "s_max": s_max},
        )
    return tuple(int(v) for v in best)


def transition_polytope(
    dev: DeviceModel, s: Sequence[int], s_max: int = DEFAULT_S_MAX
) -> HPolytope:
    """Every candidate transition plane of s in rescaled coordinates, unreduced."""
    s = tuple(int(v) for v in s)
    rows, offsets = [], []
    for r in state_box(dev.n_dots, s_max):
        if tuple(r) == s:
            continue
        h = transition_halfspace(dev, s, r)
        # n . (x / rescale + v_ref) + b <= 0
        rows.append(h.normal / dev.rescale)
        offsets.append(h.offset + h.normal @ dev.v_ref)
    return HPolytope(np.array(rows), np.array(offsets))


def ground_truth_polytope(
    dev: DeviceModel, s: Optional[Sequence[int]] = None, s_max: int = DEFAULT_S_MAX
) -> HPolytope:
    s = dev.target if s is None else s
    return geometry.remove_redundant(transition_polytope(dev, s, s_max))


@dataclass(frozen=True)
class DeviceProblem:
    device: DeviceModel
    truth: HPolytope

    @property
    def dim(self) -> int:
        return self.device.n_gates

    @property
    def origin(self) -> np.ndarray:
        return self.device.anchor()


def _inside_box(P: HPolytope) -> bool:
    V = geometry.enumerate_vertices(P).points
    return bool(np.all(np.abs(V) <= BOX))


def generate_device(
    n_dots: int, seed: int, preset: Optional[CanonicalPreset] = None
) -> DeviceProblem:
    """Canonical capacitances times lognormal noise, screened for a usable polytope."""
    if n_dots not in (3, 4):
        raise ConfigError(f"device generator supports 3 or 4 dots, got {n_dots}")
    preset = preset or CanonicalPreset()
    rng = np.random.default_rng(seed)
    base_DD, base_Dg = preset.base_matrices(n_dots)

    for attempt in range(DEVICE_ATTEMPTS):
        noise_DD = np.exp(preset.noise * rng.standard_normal(base_DD.shape))
        noise_Dg = np.exp(preset.noise * rng.standard_normal(base_Dg.shape))
        C_DD = base_DD * noise_DD
        C_DD = 0.5 * (C_DD + C_DD.T)
        C_Dg = base_Dg * noise_Dg
        try:
            dev = DeviceModel(C_DD, C_Dg, preset.e, preset.rescale)
            dev = dev.with_reference(dev.to_gate(dev.anchor()))
            truth = ground_truth_polytope(dev)
            if not _inside_box(truth):
                logger.debug(f"device draw {attempt} leaves the box, resampling")
                continue
        except (ConfigError, GeometryError) as e:
            logger.debug(f"device draw {attempt} rejected: {e}")
            continue
        return DeviceProblem(dev, truth)

    raise RetryExhausted(
        f"no usable {n_dots}-dot device in {DEVICE_ATTEMPTS} draws", {"seed": seed}
    )


@dataclass(frozen=True)
class VoronoiProblem:
    sites: np.ndarray
    home_index: int
    truth: HPolytope

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(self.dim)

    def nearest_site(self, x) -> int:
        d2 = np.sum((self.sites - np.asarray(x, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))

    def to_schema(self) -> VoronoiSchema:
        return VoronoiSchema(
            dim=self.dim, sites=self.sites.tolist(), home_index=self.home_index
        )

    @classmethod
    def from_schema(cls, schema: VoronoiSchema) -> "VoronoiProblem":
        sites = np.array(schema.sites, dtype=float).reshape(-1, schema.dim)
        return cls(sites, schema.home_index, voronoi_cell(sites, schema.home_index))


def bisector_polytope(sites: np.ndarray, home: int) -> HPolytope:
    """The bisector halfspaces of one site against all others, unreduced."""
    h = sites[home]
    others = np.delete(sites, home, axis=0)
    # |x - h|^2 <= |x - j|^2  <=>  2 (j - h) . x + |h|^2 - |j|^2 <= 0
    A = 2.0 * (others - h)
    b = h @ h - np.sum(others**2, axis=1)
    return HPolytope(A, b)


def voronoi_cell(sites: np.ndarray, home: int) -> HPolytope:
    return geometry.remove_redundant(bisector_polytope(sites, home))


def voronoi_sigma(d: int) -> np.ndarray:
    """Diagonal of the site covariance, 2 * 10^(i/d) for i = 1..d."""
    return 2.0 * 10.0 ** (np.arange(1, d + 1) / d)


def generate_voronoi(d: int, seed: int) -> VoronoiProblem:
    if d not in (3, 4):
        raise ConfigError(f"voronoi generator supports d in {{3, 4}}, got {d}")
    rng = np.random.default_rng(seed)
    std = np.sqrt(voronoi_sigma(d))

    for attempt in range(VORONOI_ATTEMPTS):
        sites = rng.normal(0.0, std, size=(N_SITES, d))
        home = int(np.argmin(np.sum(sites**2, axis=1)))
        try:
            truth = voronoi_cell(sites, home)
            if not _inside_box(truth):
                continue
        except GeometryError:
            continue
        if not np.all(truth.b < 0):
            continue
        lo, hi = VORONOI_FACETS.get(d, (d + 1, N_SITES - 1))
        if not lo <= truth.n_halfspaces <= hi:
            continue
        if attempt:
            logger.debug(f"voronoi seed {seed} accepted after {attempt} resamples")
        return VoronoiProblem(sites, home, truth)

    raise RetryExhausted(
        f"no admissible voronoi cell in {VORONOI_ATTEMPTS} draws",
        {"seed": seed, "dim": d},
    )
