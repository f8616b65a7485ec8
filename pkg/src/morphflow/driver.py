"""Coarse-to-fine MorphFlow driver and the Gaussian/Haar pyramid baselines.

Both images are decomposed once with morphological lifting.  Starting from a
zero field on the coarsest Cartesian lattice, the solver runs on every level
down to ``l_end``: each Cartesian level is followed by the tilted cuboid and
FCC levels of the same cycle.  Between levels the field is prolonged with
zero detail, by default with the sign-symmetric midrange predictor (see
``MorphFlowConfig.prolongation``).  Displacements are always in finest-voxel
physical units.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import Kind, ValidationError
from .lifting import LiftingMode, analyze, max_depth, prolong_midrange, prolong_zero_detail
from .pyramids import gaussian_pyramid, haar_pyramid
from .tvl1 import SolverParams, solve_level
from .volume import DisplacementField, Volume, sample

__all__ = ["MorphFlowConfig", "StageRecord", "run", "run_baseline", "PYRAMIDS", "PROLONGATIONS"]

PYRAMIDS = ("gauss", "haar")
PROLONGATIONS = ("midrange", "min", "max")


@dataclass
class MorphFlowConfig:
    l_start: int = 12
    l_end: int = 0
    solver: SolverParams = field(default_factory=SolverParams)
    mode: LiftingMode = LiftingMode.MIN
    # predictor for the displacement field between levels; "min"/"max" are the
    # plain morphological inverses, which bias a signed field towards one sign
    prolongation: str = "midrange"

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverParams(**self.solver)
        try:
            self.mode = LiftingMode(self.mode)
        except ValueError:
            raise ValidationError(f"unknown lifting mode {self.mode!r}") from None
        for name in ("l_start", "l_end"):
            value = getattr(self, name)
            if int(value) != value or value < 0 or value % 3:
                raise ValidationError(f"{name} must be a non-negative multiple of 3, got {value}")
            setattr(self, name, int(value))
        if self.prolongation not in PROLONGATIONS:
            raise ValidationError(
                f"unknown prolongation {self.prolongation!r}; expected one of {PROLONGATIONS}"
            )
        if self.l_end > self.l_start:
            raise ValidationError(f"l_end={self.l_end} exceeds l_start={self.l_start}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out


@dataclass
class StageRecord:
    """What happened on one level: lattice, energies per warp and wall time."""

    level: int
    kind: str
    extents: tuple[int, int, int]
    spacing: float
    energies: list[float]
    seconds: float

    def to_json(self) -> dict:
        out = asdict(self)
        out["extents"] = list(self.extents)
        return out


def _check_pair(fixed: Volume, moving: Volume):
    for vol in (fixed, moving):
        if vol.lattice.kind is not Kind.CARTESIAN:
            raise ValidationError("fixed and moving must be Cartesian volumes")
    if not fixed.lattice.same_grid(moving.lattice):
        raise ValidationError(
            f"extents mismatch: fixed {fixed.lattice.extents} vs moving {moving.lattice.extents}"
        )


def _solve(fixed, moving, u, params, level, report):
    energies: list[float] | None = [] if report is not None else None
    start = time.perf_counter()
    u = solve_level(fixed, moving, u, params, energies)
    if report is not None:
        lat = fixed.lattice
        report.append(StageRecord(level, lat.kind.value, lat.extents, lat.spacing,
                                  energies, time.perf_counter() - start))
    return u


def _prolong(u: DisplacementField, fine, how: str) -> DisplacementField:
    if how == "midrange":
        return prolong_midrange(u, fine)
    return prolong_zero_detail(u, fine, LiftingMode(how))


def run(fixed: Volume, moving: Volume, config: MorphFlowConfig,
        report: list | None = None) -> DisplacementField:
    """Estimate u with moving(x + u(x)) ~ fixed(x) on the level-``l_end`` lattice.

    When ``report`` is a list, one :class:`StageRecord` per solved level is
    appended, coarsest first.
    """
    _check_pair(fixed, moving)
    deepest = max_depth(fixed.lattice.extents)
    if config.l_start > deepest:
        raise ValidationError(
            f"l_start={config.l_start} infeasible for extents {fixed.lattice.extents}; "
            f"at most {deepest - deepest % 3} is supported"
        )
    dec_f = analyze(fixed, config.l_start, config.mode)
    dec_m = analyze(moving, config.l_start, config.mode)
    u = DisplacementField.zeros(dec_f.lattice_at(config.l_start))
    for level in range(config.l_start, config.l_end - 1, -1):
        if level != config.l_start:
            u = _prolong(u, dec_f.lattice_at(level), config.prolongation)
        u = _solve(dec_f.approximation(level), dec_m.approximation(level), u,
                   config.solver, level, report)
    return u


def _upsample(u: DisplacementField, fine) -> DisplacementField:
    # trilinear in physical coordinates; values are already physical displacements
    sites = fine.sites()
    comps = [sample(Volume(u.lattice, c), sites).reshape(fine.extents) for c in u.stacked()]
    return DisplacementField(fine, *comps)


def run_baseline(fixed: Volume, moving: Volume, pyramid: str, config: MorphFlowConfig,
                 report: list | None = None) -> DisplacementField:
    """Same coarse-to-fine loop on factor-2 Cartesian pyramids with ``l_start // 3`` levels."""
    _check_pair(fixed, moving)
    if pyramid == "gauss":
        build = gaussian_pyramid
    elif pyramid == "haar":
        build = haar_pyramid
    else:
        raise ValidationError(f"unknown pyramid {pyramid!r}; expected one of {PYRAMIDS}")
    top, bottom = config.l_start // 3, config.l_end // 3
    pyr_f = build(fixed, levels=top)
    pyr_m = build(moving, levels=top)
    u = DisplacementField.zeros(pyr_f[top].lattice)
    for k in range(top, bottom - 1, -1):
        if k != top:
            u = _upsample(u, pyr_f[k].lattice)
        u = _solve(pyr_f[k], pyr_m[k], u, config.solver, 3 * k, report)
    return u
