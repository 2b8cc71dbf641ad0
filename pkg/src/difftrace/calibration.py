"""Nonbonded-parameter search machinery.

Quasi-random candidate generation over Lennard-Jones parameter boxes,
rigid two-molecule pair energetics (LJ + Coulomb) for hydrogen-bond
orientation checks, absolute-relative-error scoring against a reference
diffusion coefficient, and winnowing of candidate parameter sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LJParams",
    "WaterModel",
    "RadicalModel",
    "SiteGeometry",
    "CandidateResult",
    "halton",
    "halton_candidates",
    "lj_energy",
    "pair_energy",
    "pair_energy_terms",
    "interaction_energy",
    "orientation_scan",
    "orientation_ok",
    "evaluate_candidate",
    "are",
    "winnow",
    "COULOMB_KCAL",
    "STAGE1_RANGES",
    "STAGE2_RANGES",
]

COULOMB_KCAL = 332.0636  # kcal*A/(mol*e^2)

ORIENTATIONS = ("OO", "OH", "HO", "HH")

# Search boxes for (eps_o, eps_h, rmin2_o, rmin2_h): the broad first pass
# and the refinement pass around the surviving region.
STAGE1_RANGES = ((-0.5, 0.0), (-0.5, 0.0), (0.0, 3.0), (0.0, 2.0))
STAGE2_RANGES = ((-0.26, -0.18), (-0.31, -0.27), (0.6, 1.1), (0.72, 0.78))


@dataclass
class LJParams:
    """Nonbonded parameters for the two radical atoms.

    Well depths are stored with the negative sign convention (eps <= 0);
    half-radii rmin2 are in A and sum pairwise to the potential minimum.
    """

    eps_o: float
    eps_h: float
    rmin2_o: float
    rmin2_h: float

    def __post_init__(self):
        if self.eps_o > 0 or self.eps_h > 0:
            raise ValueError("well depths use the negative sign convention")
        if self.rmin2_o <= 0 or self.rmin2_h <= 0:
            raise ValueError("half-radii must be positive")


@dataclass
class WaterModel:
    """Rigid 4-site water: O (LJ only), two H, and a charged M site.

    All values are required inputs; none are baked in.  r_oh/r_om in A,
    hoh angle in degrees, charges in e, eps in kcal/mol (negative
    convention), rmin2 in A.
    """

    r_oh: float
    hoh_deg: float
    r_om: float
    q_o: float
    q_h: float
    q_m: float
    eps_o: float
    rmin2_o: float


@dataclass
class RadicalModel:
    """Rigid diatomic radical: bond length (A) and site charges (e)."""

    r_oh: float
    q_o: float
    q_h: float


@dataclass
class SiteGeometry:
    """Collinear two-molecule configuration.

    orientation is a two-letter code: first the radical's proximate atom,
    then the water's ("OH" = radical O facing a water H, i.e. water as
    donor; "HO" = radical H facing the water O, i.e. water as acceptor;
    "OO"/"HH" are the flipped checks).  separation is the distance between
    the proximate atoms in A.
    """

    orientation: str
    separation: float

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if not self.separation > 0:
            raise ValueError("separation must be positive")


def halton(index: int, base: int) -> float:
    """Radical inverse of `index` in `base` (the Halton sequence term)."""
    if index < 1:
        raise ValueError("index must be >= 1")
    if base < 2:
        raise ValueError("base must be >= 2")
    result = 0.0
    frac = 1.0 / base
    i = index
    while i > 0:
        result += (i % base) * frac
        i //= base
        frac /= base
    return result


def halton_candidates(n: int, ranges=STAGE1_RANGES) -> list[LJParams]:
    """Map the 4-D Halton sequence (bases 2, 3, 5, 7) into parameter boxes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ranges = tuple(tuple(map(float, r)) for r in ranges)
    if len(ranges) != 4 or any(not lo < hi for lo, hi in ranges):
        raise ValueError("ranges must be 4 (low, high) pairs with low < high")
    out = []
    for i in range(1, n + 1):
        u = (halton(i, 2), halton(i, 3), halton(i, 5), halton(i, 7))
        vals = [lo + ui * (hi - lo) for ui, (lo, hi) in zip(u, ranges)]
        out.append(LJParams(*vals))
    return out


def lj_energy(r: float, eps_a: float, eps_b: float, rmin2_a: float, rmin2_b: float):
    """12-6 pair energy with minimum -sqrt(|eps_a eps_b|) at rmin2_a + rmin2_b.

    Accepts scalar or array r (A); returns kcal/mol.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    rm = rmin2_a + rmin2_b
    x6 = (rm / r) ** 6
    out = math.sqrt(abs(eps_a * eps_b)) * (x6 * x6 - 2.0 * x6)
    return float(out) if out.ndim == 0 else out


def _water_sites(water: WaterModel, proximate: str, origin_x: float):
    """Site list [(xyz, q, eps, rmin2)] for water with its proximate atom at
    (origin_x, 0, 0), pointing away from the radical (which sits at x < origin_x)."""
    theta = math.radians(water.hoh_deg)
    if proximate == "O":
        o = np.array([origin_x, 0.0, 0.0])
        # H's symmetric about the +x bisector.
        hx = math.cos(theta / 2.0) * water.r_oh
        hy = math.sin(theta / 2.0) * water.r_oh
        h1 = o + np.array([hx, hy, 0.0])
        h2 = o + np.array([hx, -hy, 0.0])
        m = o + np.array([water.r_om, 0.0, 0.0])
    else:
        # Donating H on the axis; its O behind it, second H off-axis.
        h1 = np.array([origin_x, 0.0, 0.0])
        o = h1 + np.array([water.r_oh, 0.0, 0.0])
        bond1 = np.array([-1.0, 0.0, 0.0])  # O -> H1
        bond2 = np.array([-math.cos(theta), math.sin(theta), 0.0])
        h2 = o + water.r_oh * bond2
        bis = bond1 + bond2
        bis /= np.linalg.norm(bis)
        m = o + water.r_om * bis
    return [
        (o, water.q_o, water.eps_o, water.rmin2_o),
        (h1, water.q_h, None, None),
        (h2, water.q_h, None, None),
        (m, water.q_m, None, None),
    ]


def _radical_sites(params: LJParams, radical: RadicalModel, proximate: str):
    """Radical sites with the proximate atom at the origin, bond along -x."""
    if proximate == "O":
        o = np.array([0.0, 0.0, 0.0])
        h = np.array([-radical.r_oh, 0.0, 0.0])
    else:
        h = np.array([0.0, 0.0, 0.0])
        o = np.array([-radical.r_oh, 0.0, 0.0])
    return [
        (o, radical.q_o, params.eps_o, params.rmin2_o),
        (h, radical.q_h, params.eps_h, params.rmin2_h),
    ]


def interaction_energy(sites_a, sites_b) -> tuple[float, float]:
    """(LJ, Coulomb) energy between two site lists, kcal/mol.

    Sites are (xyz, charge, eps, rmin2) with eps/rmin2 None for
    Coulomb-only sites.  Raises on coincident sites.
    """
    e_lj = 0.0
    e_coul = 0.0
    for pa, qa, ea, ra in sites_a:
        for pb, qb, eb, rb in sites_b:
            r = float(np.linalg.norm(np.asarray(pa) - np.asarray(pb)))
            if r == 0.0:
                raise ValueError("overlapping sites (r = 0)")
            if ea is not None and eb is not None:
                e_lj += float(lj_energy(r, ea, eb, ra, rb))
            e_coul += COULOMB_KCAL * qa * qb / r
    return e_lj, e_coul


def pair_energy_terms(
    geom: SiteGeometry, params: LJParams, water: WaterModel, radical: RadicalModel
) -> tuple[float, float]:
    """(LJ, Coulomb) interaction energy for a collinear configuration."""
    rad_prox, wat_prox = geom.orientation[0], geom.orientation[1]
    sites_r = _radical_sites(params, radical, rad_prox)
    sites_w = _water_sites(water, wat_prox, geom.separation)
    return interaction_energy(sites_r, sites_w)


def pair_energy(
    geom: SiteGeometry, params: LJParams, water: WaterModel, radical: RadicalModel
) -> float:
    """Total water-radical interaction energy, kcal/mol."""
    e_lj, e_coul = pair_energy_terms(geom, params, water, radical)
    return e_lj + e_coul


def orientation_scan(
    params: LJParams,
    water: WaterModel,
    radical: RadicalModel,
    orientation: str,
    r_values,
) -> np.ndarray:
    """Total energy over a grid of proximate-atom separations."""
    return np.array([
        pair_energy(SiteGeometry(orientation, float(r)), params, water, radical)
        for r in np.asarray(r_values, dtype=float)
    ])


def orientation_ok(
    params: LJParams,
    water: WaterModel,
    radical: RadicalModel,
    band: tuple[float, float] = (1.5, 3.5),
    step: float = 0.05,
) -> bool:
    """True when both hydrogen-bonded orientations beat their flipped
    counterparts at every grid point in the band.

    Water-acceptor check: HO below OO.  Water-donor check: OH below HH.
    """
    r = np.arange(band[0], band[1] + 0.5 * step, step)
    curves = {o: orientation_scan(params, water, radical, o, r) for o in ORIENTATIONS}
    return bool(
        np.all(curves["HO"] < curves["OO"]) and np.all(curves["OH"] < curves["HH"])
    )


def are(estimate: float, reference: float) -> float:
    """Absolute relative error |reference - estimate| / |reference|."""
    if reference == 0:
        raise ValueError("reference must be nonzero")
    return abs(reference - estimate) / abs(reference)


@dataclass
class CandidateResult:
    """One evaluated parameter vector from the search."""

    params: LJParams
    d_estimate: float
    are: float
    orientation_ok: bool
    r_values: np.ndarray | None = None
    curves: dict[str, np.ndarray] | None = field(default=None)

    def __post_init__(self):
        if self.are < 0:
            raise ValueError("are must be non-negative")


def evaluate_candidate(
    params: LJParams,
    d_estimate: float,
    reference: float,
    water: WaterModel | None = None,
    radical: RadicalModel | None = None,
    band: tuple[float, float] = (1.5, 3.5),
    r_min: float = 1.0,
    r_max: float = 5.0,
    step: float = 0.05,
) -> CandidateResult:
    """Score a candidate: ARE against the reference plus, when molecule
    constants are supplied, full orientation curves over [r_min, r_max]
    and the orientation check over the band."""
    err = are(d_estimate, reference)
    if water is None or radical is None:
        return CandidateResult(params=params, d_estimate=d_estimate, are=err,
                               orientation_ok=True)
    r = np.arange(r_min, r_max + 0.5 * step, step)
    curves = {o: orientation_scan(params, water, radical, o, r) for o in ORIENTATIONS}
    in_band = (r >= band[0]) & (r <= band[1])
    ok = bool(
        np.all(curves["HO"][in_band] < curves["OO"][in_band])
        and np.all(curves["OH"][in_band] < curves["HH"][in_band])
    )
    return CandidateResult(params=params, d_estimate=d_estimate, are=err,
                           orientation_ok=ok, r_values=r, curves=curves)


def winnow(
    candidates: list[CandidateResult],
    band: tuple[float, float] | None = None,
) -> list[CandidateResult]:
    """Filter to orientation-passing candidates, ranked by ascending ARE.

    When a band is given and a candidate carries curves, the orientation
    check is re-evaluated over that band; otherwise the stored flag is
    used.  The sort is stable, so equal AREs keep input order.  An empty
    result means no candidate passed the filter (reported by callers, not
    fatal here).
    """
    if not candidates:
        raise ValueError("no candidates given")

    def passes(c: CandidateResult) -> bool:
        if band is not None and c.curves is not None and c.r_values is not None:
            in_band = (c.r_values >= band[0]) & (c.r_values <= band[1])
            if not np.any(in_band):
                return c.orientation_ok
            return bool(
                np.all(c.curves["HO"][in_band] < c.curves["OO"][in_band])
                and np.all(c.curves["OH"][in_band] < c.curves["HH"][in_band])
            )
        return c.orientation_ok

    kept = [c for c in candidates if passes(c)]
    return sorted(kept, key=lambda c: c.are)
