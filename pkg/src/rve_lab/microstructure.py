"""Periodic fibre packings and the geometric queries used to characterise them.

Fibres live in the rectangle ``[0, l) x [0, b)``. A fibre cut by a domain edge
is accompanied by ghost copies shifted by whole periods so that tiling the
domain shows no fibre discontinuity across its borders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateError, InvalidSpec, JammingError, NoPairError

MAX_VF = 0.70
_SHIFTS = tuple(product((-1, 0, 1), repeat=2))


@dataclass(frozen=True)
class FiberPlacement:
    cx: float
    cy: float
    r: float
    ghost_of: Optional[int] = None

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def is_ghost(self) -> bool:
        return self.ghost_of is not None


@dataclass(frozen=True)
class FiberPairMetric:
    i: int
    j: int
    freepath: float
    theta: float
    # periodic shift (in whole periods) applied to fibre j to realise the pair
    shift: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class Microstructure:
    domain: tuple[float, float]
    fibers: tuple[FiberPlacement, ...]
    target_vf: float
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def parents(self) -> tuple[FiberPlacement, ...]:
        return tuple(f for f in self.fibers if not f.is_ghost)

    @property
    def ghosts(self) -> tuple[FiberPlacement, ...]:
        return tuple(f for f in self.fibers if f.is_ghost)

    @property
    def n_fibers(self) -> int:
        return len(self.parents)

    def circles(self) -> np.ndarray:
        """All circles, ghosts included, as an ``(n, 3)`` array of ``cx, cy, r``."""
        if not self.fibers:
            return np.zeros((0, 3))
        return np.array([(f.cx, f.cy, f.r) for f in self.fibers], dtype=float)

    def achieved_vf(self) -> float:
        l, b = self.domain
        return sum(math.pi * f.r ** 2 for f in self.parents) / (l * b)

    def to_json(self) -> str:
        return dumps_canonical({
            "domain": list(self.domain),
            "target_vf": self.target_vf,
            "seed": self.seed,
            "fibers": [
                {"cx": f.cx, "cy": f.cy, "r": f.r, "ghost_of": f.ghost_of}
                for f in self.fibers
            ],
        })

    @classmethod
    def from_json(cls, text: str) -> "Microstructure":
        import json

        data = json.loads(text)
        fibers = tuple(
            FiberPlacement(float(f["cx"]), float(f["cy"]), float(f["r"]), f.get("ghost_of"))
            for f in data["fibers"]
        )
        return cls(
            domain=(float(data["domain"][0]), float(data["domain"][1])),
            fibers=fibers,
            target_vf=float(data["target_vf"]),
            seed=data.get("seed"),
        )


def dumps_canonical(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("non-finite number in canonical JSON")
        return format(x, ".17g")
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, dict):
        items = ", ".join(f"{dumps_canonical(str(k))}: {dumps_canonical(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_canonical(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def ghost_images(f: FiberPlacement, domain: Sequence[float], index: Optional[int] = None) -> list[FiberPlacement]:
    """Copies of ``f`` needed to close it across the periodic borders.

    An interior fibre has no ghosts, a fibre cut by one edge has one and a
    fibre cut by two perpendicular edges (a corner fibre) has three.
    """
    l, b = domain
    sx = 1 if f.cx < f.r else (-1 if f.cx + f.r > l else 0)
    sy = 1 if f.cy < f.r else (-1 if f.cy + f.r > b else 0)
    parent = f.ghost_of if index is None else index
    shifts = []
    if sx:
        shifts.append((sx, 0))
    if sy:
        shifts.append((0, sy))
    if sx and sy:
        shifts.append((sx, sy))
    return [FiberPlacement(f.cx + kx * l, f.cy + ky * b, f.r, parent) for kx, ky in shifts]


def _with_ghosts(parents: Sequence[FiberPlacement], domain) -> tuple[FiberPlacement, ...]:
    parents = [replace(p, ghost_of=None) for p in parents]
    ghosts = []
    for k, p in enumerate(parents):
        ghosts.extend(ghost_images(p, domain, index=k))
    return tuple(parents) + tuple(ghosts)


def build_microstructure(centers, radii, domain=(1.0, 1.0), target_vf=None, seed=None) -> Microstructure:
    """Assemble a microstructure from explicit parent centres, adding ghosts."""
    l, b = map(float, domain)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    parents = [
        FiberPlacement(float(x % l), float(y % b), float(r))
        for (x, y), r in zip(centers, radii)
    ]
    if np.any(radii <= 0):
        raise InvalidSpec("fibre radii must be positive")
    if target_vf is None:
        target_vf = float(np.sum(np.pi * radii ** 2) / (l * b))
    return Microstructure((l, b), _with_ghosts(parents, (l, b)), float(target_vf), seed)


def fiber_radius(n_fibers: int, target_vf: float, domain=(1.0, 1.0)) -> float:
    l, b = domain
    return math.sqrt(target_vf * l * b / (n_fibers * math.pi))


def _clears(candidates: np.ndarray, accepted: np.ndarray) -> bool:
    if accepted.shape[0] == 0:
        return True
    dx = candidates[:, None, 0] - accepted[None, :, 0]
    dy = candidates[:, None, 1] - accepted[None, :, 1]
    dist = np.hypot(dx, dy)
    return bool(np.all(dist >= candidates[:, None, 2] + accepted[None, :, 2]))


def generate_rsa(
    n_fibers: int,
    target_vf: float,
    domain=(1.0, 1.0),
    seed: int = 0,
    max_attempts: int = 100_000,
    strategy: str = "rsa",
) -> Microstructure:
    """Random sequential adsorption of equal circles with wall-effect ghosts.

    Parameters
    ----------
    n_fibers, target_vf
        Number of parent fibres and the fibre area fraction; together they fix
        the common radius.
    max_attempts
        Consecutive rejected candidates tolerated before giving up.
    strategy
        ``"rsa"`` is plain sequential adsorption and raises
        :class:`JammingError` when stuck. ``"rsa+compress"`` falls back to a
        Monte Carlo hard-disk compression when RSA jams, which is the only way
        to reach fractions above the RSA saturation limit (about 0.55).
    """
    l, b = map(float, domain)
    if not (0.0 < target_vf <= MAX_VF):
        raise InvalidSpec(f"target_vf must lie in (0, {MAX_VF}], got {target_vf}")
    if n_fibers < 1:
        raise InvalidSpec("n_fibers must be at least 1")
    if max_attempts < 1:
        raise InvalidSpec("max_attempts must be at least 1")
    if strategy not in ("rsa", "rsa+compress"):
        raise InvalidSpec(f"unknown packing strategy {strategy!r}")
    r = fiber_radius(n_fibers, target_vf, (l, b))
    if not 2 * r < min(l, b):
        raise InvalidSpec(f"fibre diameter {2 * r:.4g} does not fit the domain")

    rng = np.random.default_rng(seed)
    accepted = np.zeros((0, 3))
    parents: list[FiberPlacement] = []
    rejections = 0
    while len(parents) < n_fibers:
        x, y = rng.random(2) * (l, b)
        cand = FiberPlacement(float(x), float(y), r)
        circles = [cand] + ghost_images(cand, (l, b), index=len(parents))
        arr = np.array([(c.cx, c.cy, c.r) for c in circles])
        if _clears(arr, accepted):
            parents.append(cand)
            accepted = np.vstack([accepted, arr])
            rejections = 0
            continue
        rejections += 1
        if rejections >= max_attempts:
            if strategy == "rsa+compress":
                centers = _compress(n_fibers, r, (l, b), rng, max_sweeps=max(2000, max_attempts // 10))
                m = build_microstructure(centers, r, (l, b), target_vf, seed)
                return replace(m, meta={"strategy": "compress"})
            raise JammingError(
                f"RSA jammed after {len(parents)} of {n_fibers} fibres "
                f"({max_attempts} consecutive rejections, Vf={target_vf})",
                placed=len(parents),
                requested=n_fibers,
            )
    return Microstructure((l, b), _with_ghosts(parents, (l, b)), float(target_vf), seed, {"strategy": "rsa"})


def _min_image(d: np.ndarray, period: float) -> np.ndarray:
    return d - period * np.round(d / period)


def _compress(n, r_target, domain, rng, max_sweeps=5000):
    """Monte Carlo compression of hard disks on the torus up to radius ``r_target``."""
    l, b = domain
    # start from a sparse RSA packing (min-image test), Vf about 0.3
    r0 = min(r_target, fiber_radius(n, 0.3, domain))
    pts = np.zeros((0, 2))
    tries = 0
    while len(pts) < n:
        p = rng.random(2) * (l, b)
        if len(pts):
            d = np.hypot(_min_image(pts[:, 0] - p[0], l), _min_image(pts[:, 1] - p[1], b))
            if np.any(d < 2 * r0):
                tries += 1
                if tries > 100_000:
                    raise JammingError("compression seed packing jammed", len(pts), n)
                continue
        pts = np.vstack([pts, p])

    def min_dist(pts):
        dx = _min_image(pts[:, None, 0] - pts[None, :, 0], l)
        dy = _min_image(pts[:, None, 1] - pts[None, :, 1], b)
        d = np.hypot(dx, dy)
        np.fill_diagonal(d, np.inf)
        return d.min()

    margin = 1.0 + 1e-9
    r_cur = min(r_target, 0.5 * min_dist(pts) / margin) if n > 1 else r_target
    step = 0.5 * r_target
    for _ in range(max_sweeps):
        if r_cur >= r_target:
            break
        accepted = 0
        for k in rng.permutation(n):
            trial = pts[k] + rng.uniform(-step, step, size=2)
            trial = np.mod(trial, (l, b))
            dx = _min_image(pts[:, 0] - trial[0], l)
            dy = _min_image(pts[:, 1] - trial[1], b)
            d = np.hypot(dx, dy)
            d[k] = np.inf
            if np.all(d >= 2 * r_cur * margin):
                pts[k] = trial
                accepted += 1
        rate = accepted / n
        step *= 1.1 if rate > 0.4 else 0.8
        step = min(max(step, 1e-6 * r_target), 0.5 * min(l, b))
        r_cur = min(r_target, 0.5 * min_dist(pts) / margin)
    else:
        raise JammingError(f"compression did not reach radius {r_target:.4g}", n, n)
    return pts


def count_overlaps(m: Microstructure) -> int:
    """Number of overlapping circle pairs among parents and ghosts."""
    c = m.circles()
    n = len(c)
    bad = 0
    for i in range(n):
        d = np.hypot(c[i + 1:, 0] - c[i, 0], c[i + 1:, 1] - c[i, 1])
        bad += int(np.sum(d < c[i + 1:, 2] + c[i, 2]))
    return bad


def pair_angle(ci, cj, load_direction=(1.0, 0.0)) -> float:
    """Angle in degrees, folded into [0, 90], between segment ``ci cj`` and the load."""
    v = np.asarray(cj, dtype=float) - np.asarray(ci, dtype=float)
    d = np.asarray(load_direction, dtype=float)
    if np.hypot(*v) == 0.0:
        raise DegenerateError("fibre centres coincide")
    if np.hypot(*d) == 0.0:
        raise DegenerateError("load direction has zero length")
    cross = abs(v[0] * d[1] - v[1] * d[0])
    dot = abs(v @ d)
    return math.degrees(math.atan2(cross, dot))


def _segment_hits(p, q, centers, radii) -> np.ndarray:
    """Mask of circles whose interior meets the open segment ``pq``."""
    seg = q - p
    L2 = seg @ seg
    if L2 == 0.0:
        d = np.hypot(centers[:, 0] - p[0], centers[:, 1] - p[1])
        return d < radii
    t = ((centers - p) @ seg) / L2
    t = np.clip(t, 0.0, 1.0)
    closest = p + t[:, None] * seg
    d = np.hypot(centers[:, 0] - closest[:, 0], centers[:, 1] - closest[:, 1])
    return d < radii


def min_freepath(m: Microstructure, load_direction=(1.0, 0.0), rel_tol: float = 1e-12) -> FiberPairMetric:
    """Smallest unobstructed boundary-to-boundary gap between two fibres.

    Pairs are taken on the torus: fibre ``j`` may be any periodic image of a
    parent fibre. A pair is discarded when a third circle (any periodic image
    of any fibre other than the two in the pair) cuts the open segment joining
    the two nearest boundary points. Ties within ``rel_tol`` go to the lowest
    ``(i, j)``.
    """
    parents = m.parents
    n = len(parents)
    if n < 2:
        raise NoPairError("need at least two fibres")
    l, b = m.domain
    c = np.array([(f.cx, f.cy) for f in parents])
    r = np.array([f.r for f in parents])

    images, owner, img_shift = [], [], []
    for k in range(n):
        for sx, sy in _SHIFTS:
            images.append((c[k, 0] + sx * l, c[k, 1] + sy * b))
            owner.append(k)
            img_shift.append((sx, sy))
    images = np.array(images)
    owner = np.array(owner)
    img_r = r[owner]
    img_shift = np.array(img_shift)

    cands = []
    for i in range(n):
        for j in range(i + 1, n):
            for sx, sy in _SHIFTS:
                cj = c[j] + (sx * l, sy * b)
                gap = float(np.hypot(*(cj - c[i])) - r[i] - r[j])
                cands.append((gap, i, j, sx, sy))
    cands.sort()

    best = None
    for gap, i, j, sx, sy in cands:
        if best is not None and gap > best[0] + rel_tol * max(1.0, abs(best[0])):
            break
        ci = c[i]
        cj = c[j] + (sx * l, sy * b)
        u = (cj - ci) / np.hypot(*(cj - ci))
        p = ci + r[i] * u
        q = cj - r[j] * u
        mask = _segment_hits(p, q, images, img_r)
        own_i = (owner == i) & np.all(img_shift == (0, 0), axis=1)
        own_j = (owner == j) & np.all(img_shift == (sx, sy), axis=1)
        mask &= ~(own_i | own_j)
        if mask.any():
            continue
        key = (gap, i, j, sx, sy)
        if best is None or (i, j) < (best[1], best[2]):
            best = key
    if best is None:
        raise NoPairError("every fibre pair is occluded")
    gap, i, j, sx, sy = best
    theta = pair_angle(c[i], c[j] + (sx * l, sy * b), load_direction)
    return FiberPairMetric(i, j, max(gap, 0.0), theta, (sx, sy))


def regular_grid(n_rows: int, n_cols: int, radius: float, domain=(1.0, 1.0)) -> Microstructure:
    """Square array of equal fibres centred in their cells."""
    l, b = domain
    xs = (np.arange(n_cols) + 0.5) * l / n_cols
    ys = (np.arange(n_rows) + 0.5) * b / n_rows
    centers = [(x, y) for y in ys for x in xs]
    return build_microstructure(centers, radius, domain)


def with_fiber_moved(m: Microstructure, index: int, dx: float, dy: float = 0.0) -> Microstructure:
    """Copy of ``m`` with parent ``index`` translated; ghosts are rebuilt."""
    parents = list(m.parents)
    f = parents[index]
    parents[index] = FiberPlacement(f.cx + dx, f.cy + dy, f.r)
    centers = [(p.cx, p.cy) for p in parents]
    radii = [p.r for p in parents]
    return build_microstructure(centers, radii, m.domain, m.target_vf, m.seed)
