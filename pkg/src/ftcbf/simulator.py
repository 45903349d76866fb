"""Control-affine plant simulation under sensor attacks and actuator failures.

The plant is the Ito SDE

    dx = (f(x) + g(x) u) dt + sigma dW
    dy = (c x + a_t) dt + nu dV

integrated with Euler-Maruyama at a fixed step. The attack vector a_t is
supported on the sensor indices of the active fault pattern; actuator failures
multiply the commanded input by a diagonal 0/1 effectiveness matrix L.

Sensor and actuator indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ScenarioValidationError

_SPOT_CHECK_RNG = np.random.default_rng(0x5EED)
_LIN_TOL = 1e-12


def _as_matrix(m, rows: int, cols: int, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (rows, cols):
        raise ContractError(f"{name} must have shape ({rows}, {cols}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


@dataclass
class SystemModel:
    """Control-affine dynamics plus output map and noise intensities.

    Single source of truth for the dimensions n (state), p (input),
    q (output). For LTI models pass F and G; f and g are derived and the
    linearity claim is spot-checked at random states.
    """

    n: int
    p: int
    q: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    c: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    F: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    is_linear: bool = False

    def __post_init__(self):
        if min(self.n, self.p, self.q) <= 0:
            raise ContractError("dimensions n, p, q must be positive")
        self.c = _as_matrix(self.c, self.q, self.n, "c")
        self.sigma = _as_matrix(self.sigma, self.n, self.n, "sigma")
        self.nu = _as_matrix(self.nu, self.q, self.q, "nu")
        if self.is_linear:
            if self.F is None or self.G is None:
                raise ContractError("is_linear requires F and G")
            self.F = _as_matrix(self.F, self.n, self.n, "F")
            self.G = _as_matrix(self.G, self.n, self.p, "G")
            for _ in range(4):
                x = _SPOT_CHECK_RNG.standard_normal(self.n)
                if np.max(np.abs(self.f(x) - self.F @ x)) > _LIN_TOL * max(1.0, np.max(np.abs(x))):
                    raise ContractError("f(x) != F x at a probed state")
                if np.max(np.abs(self.g(x) - self.G)) > _LIN_TOL:
                    raise ContractError("g(x) != G at a probed state")

    @classmethod
    def linear(cls, F, G, c, sigma, nu) -> "SystemModel":
        F = np.asarray(F, dtype=float)
        G = np.asarray(G, dtype=float)
        n, p = G.shape
        c = np.asarray(c, dtype=float)
        return cls(
            n=n, p=p, q=c.shape[0],
            f=lambda x, _F=F: _F @ x,
            g=lambda x, _G=G: _G,
            c=c, sigma=np.asarray(sigma, dtype=float), nu=np.asarray(nu, dtype=float),
            F=F, G=G, is_linear=True,
        )

    def drift_jacobian(self, x: np.ndarray, u: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        """d(f + g u)/dx at (x, u); exact for LTI, finite differences otherwise."""
        if self.is_linear:
            return self.F
        x = np.asarray(x, dtype=float)
        base = self.f(x) + self.g(x) @ u
        J = np.empty((self.n, self.n))
        for j in range(self.n):
            xp = x.copy()
            xp[j] += eps
            J[:, j] = (self.f(xp) + self.g(xp) @ u - base) / eps
        return J


def _bias_attack(amplitude, start):
    def a(t):
        return amplitude if t >= start else 0.0
    return a


def _ramp_attack(rate, start):
    def a(t):
        return rate * (t - start) if t >= start else 0.0
    return a


@dataclass
class FaultScenario:
    """Disjoint sensor fault patterns, an attack signal, and a failure schedule.

    sensor_patterns: list of disjoint 0-based sensor index sets.
    attack: callable t -> scalar applied to every sensor in the active
        pattern, or None for no attack. active_fault selects which pattern
        carries the attack; None means attack-free.
    failure_schedule: ordered (t_start, L) pairs, L diagonal 0/1 of size p.
    """

    q: int
    p: int
    sensor_patterns: list = field(default_factory=list)
    active_fault: Optional[int] = None
    attack: Optional[Callable[[float], float]] = None
    failure_schedule: list = field(default_factory=list)

    def __post_init__(self):
        pats = []
        seen = set()
        for pat in self.sensor_patterns:
            idx = tuple(sorted(int(i) for i in pat))
            if any(i < 0 or i >= self.q for i in idx):
                raise ScenarioValidationError(f"pattern {idx} outside sensor range 0..{self.q - 1}")
            if seen.intersection(idx):
                raise ScenarioValidationError("fault patterns must be pairwise disjoint")
            seen.update(idx)
            pats.append(idx)
        self.sensor_patterns = pats
        if self.active_fault is not None:
            if not 0 <= self.active_fault < len(pats):
                raise ScenarioValidationError(f"active_fault {self.active_fault} has no pattern")
            if self.attack is not None and not pats[self.active_fault]:
                raise ScenarioValidationError("attack declared on an empty fault pattern")
        sched = []
        last_t = -np.inf
        for t_start, L in self.failure_schedule:
            L = np.asarray(L, dtype=float)
            if L.shape != (self.p, self.p):
                raise ScenarioValidationError(f"effectiveness matrix must be {self.p}x{self.p}")
            d = np.diag(L)
            if np.any(L - np.diag(d) != 0.0) or not np.all(np.isin(d, (0.0, 1.0))):
                raise ScenarioValidationError("effectiveness matrix must be diagonal with 0/1 entries")
            if t_start < last_t:
                raise ScenarioValidationError("failure schedule must be ordered by start time")
            last_t = t_start
            sched.append((float(t_start), L))
        self.failure_schedule = sched

    @classmethod
    def from_attack_spec(cls, q, p, sensor_patterns, active_fault=None, attack_spec=None,
                         failure_schedule=()) -> "FaultScenario":
        """Build from a declarative attack spec: {type: bias|ramp, amplitude|rate, start}."""
        attack = None
        if attack_spec is not None:
            kind = attack_spec.get("type", "bias")
            start = float(attack_spec.get("start", 0.0))
            if kind == "bias":
                attack = _bias_attack(float(attack_spec["amplitude"]), start)
            elif kind == "ramp":
                attack = _ramp_attack(float(attack_spec["rate"]), start)
            else:
                raise ScenarioValidationError(f"unknown attack type {kind!r}")
        return cls(q=q, p=p, sensor_patterns=list(sensor_patterns), active_fault=active_fault,
                   attack=attack, failure_schedule=list(failure_schedule))

    def attack_vector(self, t: float) -> np.ndarray:
        """a_t with support confined to the active fault pattern."""
        a = np.zeros(self.q)
        if self.attack is None or self.active_fault is None:
            return a
        a[list(self.sensor_patterns[self.active_fault])] = self.attack(t)
        return a

    def effectiveness_at(self, t: float) -> np.ndarray:
        """Active effectiveness matrix L at time t (identity before any failure)."""
        L = np.eye(self.p)
        for t_start, Lj in self.failure_schedule:
            if t >= t_start:
                L = Lj
        return L


def step_true_state(model: SystemModel, x: np.ndarray, u: np.ndarray, dt: float,
                    noise_draw: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step: x + (f(x) + g(x) u) dt + sigma w sqrt(dt)."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n,) or u.shape != (model.p,) or np.shape(noise_draw) != (model.n,):
        raise ContractError("state/input/noise dimension mismatch")
    return x + (model.f(x) + model.g(x) @ u) * dt + model.sigma @ noise_draw * np.sqrt(dt)


def measure(model: SystemModel, x: np.ndarray, t: float, scen: FaultScenario,
            noise_draw: np.ndarray, dt: float) -> np.ndarray:
    """Output increment dy = (c x + a_t) dt + nu v sqrt(dt)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,) or np.shape(noise_draw) != (model.q,):
        raise ContractError("state/noise dimension mismatch in measure")
    return (model.c @ x + scen.attack_vector(t)) * dt + model.nu @ noise_draw * np.sqrt(dt)


def apply_actuator_failure(u: np.ndarray, L: np.ndarray) -> np.ndarray:
    """u^F = L u. Entries at failed channels come out exactly zero."""
    u = np.asarray(u, dtype=float)
    L = np.asarray(L, dtype=float)
    if L.shape != (u.shape[0], u.shape[0]):
        raise ContractError("effectiveness matrix size mismatch")
    return L @ u
