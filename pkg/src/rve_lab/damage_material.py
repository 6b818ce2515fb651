"""Isotropic scalar damage with bilinear softening and crack-band regularisation.

The law is strain driven. The history variable is the largest positive
principal strain ever reached. Below the initiation strain ``kappa_D`` the
material is linear elastic. Above it the secant stress ``(1 - D) E kappa``
follows the straight line from ``(kappa_D, E kappa_D)`` down to
``(kappa_F, 0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec

D_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class PhaseMaterial:
    E: float
    nu: float
    kappa_D: float
    kappa_F: float
    damageable: bool = True

    def __post_init__(self):
        if not self.E > 0:
            raise InvalidSpec("E must be positive")
        if not 0 <= self.nu < 0.5:
            raise InvalidSpec("nu must lie in [0, 0.5)")
        if not 0 < self.kappa_D < self.kappa_F:
            raise InvalidSpec("need 0 < kappa_D < kappa_F")

    @property
    def G(self) -> float:
        return self.E / (2 * (1 + self.nu))

    @property
    def K(self) -> float:
        return self.E / (3 * (1 - 2 * self.nu))

    @property
    def softening_modulus(self) -> float:
        """Magnitude of the slope of the softening branch."""
        return self.E * self.kappa_D / (self.kappa_F - self.kappa_D)

    def with_failure_strain(self, kappa_F: float) -> "PhaseMaterial":
        return PhaseMaterial(self.E, self.nu, self.kappa_D, kappa_F, self.damageable)

    @classmethod
    def from_config(cls, cfg: dict) -> "PhaseMaterial":
        return cls(
            E=float(cfg["E"]),
            nu=float(cfg["nu"]),
            kappa_D=float(cfg.get("eps0", cfg.get("kappa_D"))),
            kappa_F=float(cfg.get("epsf", cfg.get("kappa_F"))),
            damageable=bool(cfg.get("damageable", True)),
        )

    def to_config(self) -> dict:
        return {"E": self.E, "nu": self.nu, "eps0": self.kappa_D, "epsf": self.kappa_F,
                "damageable": self.damageable}


@dataclass(frozen=True)
class DamageState:
    """Damage and strain history, scalar or one entry per element."""

    D: np.ndarray
    kappa_hist: np.ndarray

    @classmethod
    def virgin(cls, n: int) -> "DamageState":
        return cls(np.zeros(n), np.zeros(n))


def damage_from_kappa(kappa, mat: PhaseMaterial):
    """Closed-form damage for linear softening, capped at ``D_MAX``."""
    kappa = np.asarray(kappa, dtype=float)
    kD, kF = mat.kappa_D, mat.kappa_F
    with np.errstate(all="ignore"):
        D = kF * (kappa - kD) / (kappa * (kF - kD))
    D = np.where(kappa <= kD, 0.0, D)
    return np.minimum(D, D_MAX)


def damage_update(principal_strains, state: DamageState, mat: PhaseMaterial) -> DamageState:
    """Advance the history variable and damage for one or many points.

    ``principal_strains`` has shape ``(..., 3)``. Only the positive parts
    count towards the history variable. Damage never decreases, so unloading
    keeps ``D`` fixed.
    """
    eps = np.asarray(principal_strains, dtype=float)
    drive = np.max(np.maximum(eps, 0.0), axis=-1)
    kappa = np.maximum(state.kappa_hist, drive)
    D = np.maximum(state.D, damage_from_kappa(kappa, mat))
    return DamageState(D, kappa)


def plane_stress_matrix(E: float, nu: float) -> np.ndarray:
    c = E / (1 - nu * nu)
    return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1 - nu) / 2]])


def secant_stiffness(D: float, mat: PhaseMaterial) -> np.ndarray:
    return (1.0 - D) * plane_stress_matrix(mat.E, mat.nu)


def integrity(kappa, mat: PhaseMaterial):
    """``1 - D(kappa)`` evaluated without the cancellation of ``1 - D`` near ``kappa_F``."""
    kappa = np.asarray(kappa, dtype=float)
    kD, kF = mat.kappa_D, mat.kappa_F
    with np.errstate(all="ignore"):
        w = kD * (kF - kappa) / (kappa * (kF - kD))
    w = np.where(kappa <= kD, 1.0, w)
    return np.maximum(w, 1.0 - D_MAX)


def uniaxial_stress(kappa, mat: PhaseMaterial):
    """Secant stress ``(1 - D(kappa)) E kappa`` on a monotonic uniaxial path."""
    kappa = np.asarray(kappa, dtype=float)
    return integrity(kappa, mat) * mat.E * kappa


@dataclass(frozen=True)
class EnergyBudget:
    U_d: float
    lam: float
    lambda_x: float
    lambda_z: float = 1.0

    @property
    def lambda_modified(self) -> float:
        return math.sqrt(self.lambda_x * self.lambda_z)


def dissipated_energy_per_area(mat: PhaseMaterial, lam: float) -> float:
    """Energy per unit crack area of a band of width ``lam``: ``E lam eps0 epsf / 2``."""
    if not lam > 0:
        raise InvalidSpec("bandwidth must be positive")
    return 0.5 * mat.E * lam * mat.kappa_D * mat.kappa_F


def energy_budget(mat: PhaseMaterial, lam: float, h: float) -> EnergyBudget:
    """Budget for a band whose in-plane width collapsed to one element ``h``."""
    return EnergyBudget(dissipated_energy_per_area(mat, lam), lam, h, 1.0)


def regularize_sqrt(eps_f_original: float, lam: float, h: float) -> float:
    """Failure strain that keeps ``sqrt(h) * eps_f`` equal to ``sqrt(lam) * eps_f_original``."""
    if not (lam > 0 and h > 0):
        raise InvalidSpec("lam and h must be positive")
    return eps_f_original * math.sqrt(lam / h)


def regularize_brekelmans(eps_f_original: float, lam: float, h: float) -> float:
    """Failure strain that keeps ``h * eps_f`` fixed (classical crack band scaling)."""
    if not (lam > 0 and h > 0):
        raise InvalidSpec("lam and h must be positive")
    return eps_f_original * lam / h


def failure_strain_for(h: float, mode: str, invariant: float) -> float:
    """Failure strain giving ``sqrt(h) eps_f`` (``sqrt``) or ``h eps_f`` (``brekelmans``) equal to ``invariant``."""
    if mode == "sqrt":
        return invariant / math.sqrt(h)
    if mode == "brekelmans":
        return invariant / h
    raise InvalidSpec(f"unknown regularisation mode {mode!r}")


def regularize(mat: PhaseMaterial, mode: str, lam: float, h: float) -> PhaseMaterial:
    """Apply a regularisation block ``{mode, lambda}`` to a damageable phase."""
    if mode in (None, "none") or not mat.damageable:
        return mat
    if mode == "sqrt":
        return mat.with_failure_strain(regularize_sqrt(mat.kappa_F, lam, h))
    if mode == "brekelmans":
        return mat.with_failure_strain(regularize_brekelmans(mat.kappa_F, lam, h))
    raise InvalidSpec(f"unknown regularisation mode {mode!r}")
