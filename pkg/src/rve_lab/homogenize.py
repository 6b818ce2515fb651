"""Volume averages, energy consistency checks and force-displacement post-processing."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InadmissibleLocalization, InvalidSpec, NeverDamaged, NeverFailed, Undefined

F_FAIL = 0.01


@dataclass
class ElementFields:
    """Per-element Voigt stress and strain (engineering shear) with element volumes.

    ``energy_density`` is the element average of ``sigma:eps / 2``. When it is
    omitted the centroid product is used instead.
    """

    stress: np.ndarray
    strain: np.ndarray
    energy_density: Optional[np.ndarray] = None
    volume: Optional[np.ndarray] = None

    def __post_init__(self):
        self.stress = np.atleast_2d(np.asarray(self.stress, dtype=float))
        self.strain = np.atleast_2d(np.asarray(self.strain, dtype=float))
        n = len(self.stress)
        if self.volume is None:
            self.volume = np.ones(n)
        if self.energy_density is None:
            self.energy_density = 0.5 * np.einsum("ei,ei->e", self.stress, self.strain)


def _weights(fields: ElementFields) -> np.ndarray:
    v = np.asarray(fields.volume, dtype=float)
    return v / v.sum()


def volume_average_stress(fields: ElementFields) -> np.ndarray:
    return _weights(fields) @ fields.stress


def volume_average_strain(fields: ElementFields) -> np.ndarray:
    return _weights(fields) @ fields.strain


def hill_mandel_residual(fields: ElementFields) -> float:
    """Relative gap between the mean of ``sigma:eps`` and the product of the means."""
    micro = 2.0 * float(_weights(fields) @ fields.energy_density)
    macro = float(volume_average_stress(fields) @ volume_average_strain(fields))
    if macro == 0.0:
        raise Undefined("macroscopic work density is zero")
    return abs(micro - macro) / abs(macro)


@dataclass
class FdCurve:
    d: np.ndarray
    F: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        if self.d.shape != self.F.shape or self.d.ndim != 1:
            raise InvalidSpec("d and F must be 1D arrays of equal length")
        if len(self.d) and (self.d[0] != 0.0 or np.any(np.diff(self.d) <= 0)):
            raise InvalidSpec("d must start at 0 and increase strictly")

    @classmethod
    def from_trace(cls, trace, **meta) -> "FdCurve":
        info = {k: trace.meta[k] for k in ("h", "bc") if k in trace.meta}
        info.update(meta)
        return cls(trace.applied_u.copy(), trace.reaction_sum.copy(), info)

    @property
    def length(self) -> float:
        return float(self.meta.get("l", 1.0))

    def area(self) -> float:
        fn = getattr(np, "trapezoid", None) or np.trapz
        return float(fn(self.F, self.d))

    def peak_index(self) -> int:
        return int(np.argmax(self.F))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d", "F"])
        for d, f in zip(self.d, self.F):
            w.writerow([repr(float(d)), repr(float(f))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **meta) -> "FdCurve":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], meta)


@dataclass(frozen=True)
class CurveMetrics:
    eps0_rve: float
    epsf_rve: Optional[float]
    peak_force: float
    elastic_slope: float
    dissipated_energy: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def detect_initiation(trace, length: Optional[float] = None) -> float:
    """Macroscopic strain at the first increment that leaves any element damaged."""
    l = length if length is not None else trace.meta.get("l", 1.0)
    hit = np.flatnonzero(np.asarray(trace.n_damaged) > 0)
    if not len(hit):
        raise NeverDamaged("no element damaged within the applied displacement")
    return float(trace.applied_u[hit[0]] / l)


def detect_failure(curve: FdCurve, f_fail: float = F_FAIL, length: Optional[float] = None) -> float:
    """Macroscopic strain where the force first falls to ``f_fail`` times the peak after the peak."""
    l = length if length is not None else curve.length
    k = curve.peak_index()
    peak = curve.F[k]
    if peak <= 0:
        raise NeverFailed("curve has no positive peak")
    below = np.flatnonzero(curve.F[k:] <= f_fail * peak)
    if not len(below):
        raise NeverFailed(f"force never dropped to {f_fail:g} of the peak")
    return float(curve.d[k + below[0]] / l)


def elastic_slope(curve: FdCurve, d_max: float) -> float:
    """Least-squares slope through the origin over samples with ``0 < d <= d_max``."""
    sel = (curve.d > 0) & (curve.d <= d_max)
    if not sel.any():
        raise InvalidSpec(f"no samples in (0, {d_max}]")
    d, F = curve.d[sel], curve.F[sel]
    return float(d @ F / (d @ d))


def curve_metrics(trace, curve: Optional[FdCurve] = None, f_fail: float = F_FAIL) -> CurveMetrics:
    curve = curve or FdCurve.from_trace(trace, l=trace.meta.get("l", 1.0))
    l = curve.length
    eps0 = detect_initiation(trace, l)
    try:
        epsf = detect_failure(curve, f_fail, l)
    except NeverFailed:
        epsf = None
    k = int(np.flatnonzero(np.asarray(trace.n_damaged) > 0)[0])
    slope = elastic_slope(curve, curve.d[max(k - 1, 1)])
    return CurveMetrics(eps0, epsf, float(curve.F.max()), slope, curve.area())


def rod_stress_analytic(u, L: float, lam: float, E: float, H: float, eps0: float):
    """Post-peak stress of a bar of length ``L`` softening in a band of width ``lam``.

    ``H`` is the magnitude of the softening slope. For ``u <= L * eps0`` the
    bar is still elastic and ``E u / L`` is returned. Beyond the displacement
    ``lam * eps0 * (1 + E / H)`` the expression turns negative, which marks a
    fully separated band.
    """
    a = lam / L * (1 + E / H)
    denom = 1 - a
    if abs(denom) < 1e-12:
        raise InadmissibleLocalization("band size makes the post-peak branch vertical")
    u = np.asarray(u, dtype=float)
    soft = E * eps0 * (u / (L * eps0) - a) / denom
    out = np.where(u <= L * eps0, E * u / L, soft)
    return float(out) if out.ndim == 0 else out


def full_localization_displacement(L: float, lam: float, E: float, H: float, eps0: float) -> float:
    return lam * eps0 * (1 + E / H)
