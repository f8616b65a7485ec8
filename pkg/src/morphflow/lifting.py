"""Morphological (min/max) lifting through the hv -> d1 -> d2 cycle.

One cycle takes a Cartesian grid of spacing s to the Cartesian grid of spacing
2s, passing through the FCC lattice (after hv) and the tilted cuboid lattice
(after d1).  Every step splits the current points into *retained* and
*removed* sets, then for Max mode::

    gamma_q = x_q - max_{r ~ q} x_r                  (predict)
    x_r'    = x_r + max(0, max_{q ~ r} gamma_q)      (update)

with ``~`` the step's nearest-neighbour relation restricted to in-bounds
points.  Min mode swaps max for min.  Retained points form the coarser
approximation, gamma is stored as the detail signal.

==========  ====================  ==========================  =====================
step        removed points        predict stencil             retained lattice
==========  ====================  ==========================  =====================
hv          x + y + z odd         (+-1,0,0) and permutations  FCC
d1          x + y odd (z odd)     (+-1,0,+-1), (0,+-1,+-1)    tilted cuboid
d2          x odd (y odd)         (+-1,+-1,0)                 Cartesian, spacing 2s
==========  ====================  ==========================  =====================
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .lattice import Kind, LatticeDescriptor, ValidationError, layout_coords, layout_index
from .volume import DisplacementField, Volume

__all__ = [
    "LiftingMode",
    "Step",
    "DetailSet",
    "WaveletDecomposition",
    "hv_analyze",
    "d1_analyze",
    "d2_analyze",
    "analyze_step",
    "analyze",
    "synthesize_step",
    "synthesize",
    "prolong_zero_detail",
    "prolong_midrange",
    "max_depth",
    "STEP_CYCLE",
]


class LiftingMode(str, enum.Enum):
    MAX = "max"
    MIN = "min"


class Step(str, enum.Enum):
    HV = "hv"
    D1 = "d1"
    D2 = "d2"


STEP_CYCLE = (Step.HV, Step.D1, Step.D2)

_STEP_INPUT_KIND = {Step.HV: Kind.CARTESIAN, Step.D1: Kind.FCC, Step.D2: Kind.TILTED_CUBOID}
_STEP_OUTPUT_KIND = {Step.HV: Kind.FCC, Step.D1: Kind.TILTED_CUBOID, Step.D2: Kind.CARTESIAN}
_STEP_FOR_COARSE_KIND = {kind: step for step, kind in _STEP_OUTPUT_KIND.items()}

_STENCILS = {
    Step.HV: np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
    ),
    Step.D1: np.array(
        [[1, 0, 1], [1, 0, -1], [-1, 0, 1], [-1, 0, -1],
         [0, 1, 1], [0, 1, -1], [0, -1, 1], [0, -1, -1]],
        dtype=np.int64,
    ),
    Step.D2: np.array([[1, 1, 0], [1, -1, 0], [-1, 1, 0], [-1, -1, 0]], dtype=np.int64),
}


@dataclass(frozen=True)
class _Plan:
    step: Step
    input_extents: tuple
    retained_layout: str
    removed_layout: str
    retained_extents: tuple
    removed_extents: tuple
    retained_from_input: np.ndarray
    removed_from_input: np.ndarray
    pred_idx: np.ndarray  # (F, Nq) into retained
    pred_valid: np.ndarray
    upd_idx: np.ndarray  # (F, Nr) into removed
    upd_valid: np.ndarray


def _layouts(step: Step, extents):
    n0, n1, n2 = extents
    if step is Step.HV:
        if n0 % 2 or n1 % 2 or n2 % 2:
            raise ValidationError(f"hv lifting needs even extents, got {extents}")
        half = (n0, n1, n2 // 2)
        return "cart", "fcc0", "fcc1", half, half
    if step is Step.D1:
        if n1 % 2:
            raise ValidationError(f"d1 lifting needs an even second extent, got {extents}")
        half = (n0, n1 // 2, n2)
        return "fcc0", "cub0", "cub1", half, half
    if n0 % 2:
        raise ValidationError(f"d2 lifting needs an even first extent, got {extents}")
    half = (n0 // 2, n1, n2)
    return "cub0", "even", "d2rem", half, half


@lru_cache(maxsize=64)
def _plan(step: Step, extents: tuple) -> _Plan:
    in_layout, ret_layout, rem_layout, ret_ext, rem_ext = _layouts(step, extents)
    q_ret = layout_coords(ret_layout, ret_ext)
    q_rem = layout_coords(rem_layout, rem_ext)
    ret_from_in, ok_r = layout_index(in_layout, q_ret, extents)
    rem_from_in, ok_q = layout_index(in_layout, q_rem, extents)
    assert ok_r.all() and ok_q.all()
    offsets = _STENCILS[step]
    pred = [layout_index(ret_layout, q_rem + d, ret_ext) for d in offsets]
    upd = [layout_index(rem_layout, q_ret + d, rem_ext) for d in offsets]
    plan = _Plan(
        step=step,
        input_extents=extents,
        retained_layout=ret_layout,
        removed_layout=rem_layout,
        retained_extents=ret_ext,
        removed_extents=rem_ext,
        retained_from_input=ret_from_in,
        removed_from_input=rem_from_in,
        pred_idx=np.stack([p[0] for p in pred]),
        pred_valid=np.stack([p[1] for p in pred]),
        upd_idx=np.stack([u[0] for u in upd]),
        upd_valid=np.stack([u[1] for u in upd]),
    )
    # every removed point must see at least one retained neighbour
    assert plan.pred_valid.any(axis=0).all()
    return plan


def _reduce(values, idx, valid, mode: LiftingMode):
    """max (or min) of ``values[idx]`` over valid stencil entries, per column."""
    return _reduce_gathered(values[idx], valid, mode)


def _reduce_gathered(gathered, valid, mode: LiftingMode):
    fill = -np.inf if mode is LiftingMode.MAX else np.inf
    gathered = np.where(valid, gathered, fill)
    if mode is LiftingMode.MAX:
        return gathered.max(axis=0)
    return gathered.min(axis=0)


def _predict(plan: _Plan, retained, mode):
    return _reduce(retained, plan.pred_idx, plan.pred_valid, mode)


def _update(plan: _Plan, gamma, mode):
    agg = _reduce(gamma, plan.upd_idx, plan.upd_valid, mode)
    if mode is LiftingMode.MAX:
        return np.maximum(0.0, agg)
    return np.minimum(0.0, agg)


def _updated(plan: _Plan, retained, removed, pred, mode):
    """``retained + _update(gamma)``, evaluated as min(x_r, m - (p_m - x_r)) (max in Max mode).

    Where the predictor equals x_r the candidate is m exactly, so the global
    extremum survives rounding even for non-integer data.
    """
    cand = removed[plan.upd_idx] - (pred[plan.upd_idx] - retained)
    agg = _reduce_gathered(cand, plan.upd_valid, mode)
    if mode is LiftingMode.MAX:
        return np.maximum(retained, agg)
    return np.minimum(retained, agg)


@dataclass(frozen=True, eq=False)
class DetailSet:
    """Detail coefficients of one lifting step.

    ``coefficients`` has one entry per removed point, stored in the removed
    layout of the step.  ``fine_lattice`` is the step input before padding.
    """

    step: Step
    coefficients: np.ndarray
    fine_lattice: LatticeDescriptor
    padded_extents: tuple

    @property
    def removed_layout(self) -> str:
        return _plan(self.step, self.padded_extents).removed_layout

    def removed_sites(self) -> np.ndarray:
        """Physical positions of the removed points, aligned with ``coefficients.ravel()``."""
        plan = _plan(self.step, self.padded_extents)
        lat = self.fine_lattice
        q = layout_coords(plan.removed_layout, plan.removed_extents)
        return np.asarray(lat.origin) + lat.spacing * q


def _coarse_lattice(step: Step, fine: LatticeDescriptor, plan: _Plan) -> LatticeDescriptor:
    spacing = fine.spacing * (2 if step is Step.D2 else 1)
    return LatticeDescriptor(
        _STEP_OUTPUT_KIND[step], plan.retained_extents, spacing, fine.origin, fine.level + 1
    )


def _padded_extents(step: Step, extents):
    if step is Step.HV:
        return tuple(e + (e % 2) for e in extents)
    return tuple(extents)


def _check_mode(mode) -> LiftingMode:
    return LiftingMode(mode)


def analyze_step(volume: Volume, step: Step, mode=LiftingMode.MIN) -> tuple[Volume, DetailSet]:
    """One lifting step; returns the coarser approximation and its details."""
    step = Step(step)
    mode = _check_mode(mode)
    lat = volume.lattice
    if lat.kind is not _STEP_INPUT_KIND[step]:
        raise ValidationError(f"{step.value} lifting needs a {_STEP_INPUT_KIND[step].value} "
                              f"lattice, got {lat.kind.value}")
    data = np.asarray(volume.data, dtype=np.float64)
    padded = _padded_extents(step, lat.extents)
    if padded != lat.extents:
        data = np.pad(data, [(0, p - e) for p, e in zip(padded, lat.extents)], mode="edge")
    plan = _plan(step, padded)
    flat = data.reshape(-1)
    retained = flat[plan.retained_from_input]
    removed = flat[plan.removed_from_input]
    pred = _predict(plan, retained, mode)
    gamma = removed - pred
    approx = _updated(plan, retained, removed, pred, mode)
    coarse = _coarse_lattice(step, lat, plan)
    details = DetailSet(step, gamma.reshape(plan.removed_extents), lat, padded)
    return Volume(coarse, approx.reshape(plan.retained_extents)), details


def hv_analyze(volume: Volume, mode=LiftingMode.MIN):
    return analyze_step(volume, Step.HV, mode)


def d1_analyze(volume: Volume, mode=LiftingMode.MIN):
    return analyze_step(volume, Step.D1, mode)


def d2_analyze(volume: Volume, mode=LiftingMode.MIN):
    return analyze_step(volume, Step.D2, mode)


def _inverse(plan: _Plan, approx_flat, gamma_flat, mode):
    retained = approx_flat - _update(plan, gamma_flat, mode)
    removed = gamma_flat + _predict(plan, retained, mode)
    out = np.empty(int(np.prod(plan.input_extents)))
    out[plan.retained_from_input] = retained
    out[plan.removed_from_input] = removed
    return out.reshape(plan.input_extents)


def _crop(data, extents):
    return data[: extents[0], : extents[1], : extents[2]]


def synthesize_step(approx: Volume, details: DetailSet, mode=LiftingMode.MIN) -> Volume:
    """Invert one lifting step: subtract the update, then add the prediction back."""
    mode = _check_mode(mode)
    plan = _plan(details.step, details.padded_extents)
    lat = approx.lattice
    if lat.kind is not _STEP_OUTPUT_KIND[details.step] or lat.extents != plan.retained_extents:
        raise ValidationError(
            f"approximation on {lat.kind.value} {lat.extents} does not match "
            f"{details.step.value} details expecting {plan.retained_extents}"
        )
    data = _inverse(plan, np.asarray(approx.data, np.float64).reshape(-1),
                    np.asarray(details.coefficients, np.float64).reshape(-1), mode)
    return Volume(details.fine_lattice, _crop(data, details.fine_lattice.extents))


def max_depth(extents) -> int:
    """Largest number of lifting steps a Cartesian volume of ``extents`` supports."""
    ext = np.array(extents, dtype=int)
    cycles = 0
    while ext.min() >= 2:
        ext = (ext + ext % 2) // 2
        cycles += 1
    return 3 * cycles


@dataclass(eq=False)
class WaveletDecomposition:
    """Coarsest approximation plus the detail sets needed to rebuild every level.

    ``details[0]`` belongs to the last (coarsest) step, ``details[-1]`` to the
    first step applied to the input.  ``approximations[l]`` is the volume
    after ``l`` steps.
    """

    mode: LiftingMode
    coarsest: Volume
    details: list[DetailSet]
    finest_lattice: LatticeDescriptor
    approximations: list[Volume] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.details)

    def detail_for_level(self, level: int) -> DetailSet:
        """Details of the step that produced approximation ``level`` (1-based)."""
        return self.details[self.levels - level]

    def lattice_at(self, level: int) -> LatticeDescriptor:
        if level == 0:
            return self.finest_lattice
        if level == self.levels:
            return self.coarsest.lattice
        return self.detail_for_level(level + 1).fine_lattice

    def approximation(self, level: int) -> Volume:
        if not 0 <= level <= self.levels:
            raise ValidationError(f"level {level} outside 0..{self.levels}")
        if self.approximations:
            return self.approximations[level]
        vol = self.coarsest
        for lev in range(self.levels, level, -1):
            vol = synthesize_step(vol, self.detail_for_level(lev), self.mode)
        return vol


def analyze(volume: Volume, levels: int, mode=LiftingMode.MIN) -> WaveletDecomposition:
    """Apply ``levels`` lifting steps (hv, d1, d2, hv, ...) to a Cartesian volume."""
    mode = _check_mode(mode)
    if levels < 0:
        raise ValidationError("levels must be non-negative")
    if volume.lattice.kind is not Kind.CARTESIAN:
        raise ValidationError("analysis starts from a Cartesian volume")
    deepest = max_depth(volume.lattice.extents)
    if levels > deepest:
        raise ValidationError(
            f"{levels} levels requested but extents {volume.lattice.extents} "
            f"support at most {deepest}"
        )
    approx = volume
    approximations = [volume]
    details: list[DetailSet] = []
    for n in range(levels):
        approx, det = analyze_step(approx, STEP_CYCLE[n % 3], mode)
        details.insert(0, det)
        approximations.append(approx)
    return WaveletDecomposition(mode, approx, details, volume.lattice, approximations)


def synthesize(decomposition: WaveletDecomposition, level: int = 0) -> Volume:
    """Rebuild the approximation at ``level`` from the coarsest volume and details."""
    vol = decomposition.coarsest
    for lev in range(decomposition.levels, level, -1):
        vol = synthesize_step(vol, decomposition.detail_for_level(lev), decomposition.mode)
    return vol


def prolong_zero_detail(field: DisplacementField, fine_lattice: LatticeDescriptor,
                        mode=LiftingMode.MIN) -> DisplacementField:
    """Move a displacement field one lifting step finer with all details set to 0.

    Retained points keep their values and removed points receive the max
    (min) of their stencil.  Values are physical displacements and are not
    rescaled.
    """
    mode = _check_mode(mode)
    coarse = field.lattice
    step = _STEP_FOR_COARSE_KIND[coarse.kind]
    if fine_lattice.kind is not _STEP_INPUT_KIND[step]:
        raise ValidationError(
            f"cannot prolong from {coarse.kind.value} to {fine_lattice.kind.value}"
        )
    padded = _padded_extents(step, fine_lattice.extents)
    plan = _plan(step, padded)
    expected = _coarse_lattice(step, fine_lattice, plan)
    if not expected.same_grid(coarse):
        raise ValidationError(
            f"field lattice {coarse.kind.value} {coarse.extents} is not the "
            f"{step.value} coarsening of the target {fine_lattice.extents}"
        )
    comps = []
    zeros = np.zeros(int(np.prod(plan.removed_extents)))
    for comp in field.flat():
        data = _inverse(plan, comp, zeros, mode)
        comps.append(_crop(data, fine_lattice.extents))
    return DisplacementField(fine_lattice, *comps)


def prolong_midrange(field: DisplacementField, fine_lattice: LatticeDescriptor) -> DisplacementField:
    """Zero-detail prolongation with the midrange predictor (min + max) / 2.

    Retained points keep their values, as in :func:`prolong_zero_detail`.
    Unlike the min or max predictor it treats positive and negative
    displacements alike, so repeated prolongation does not drift a signed
    field towards one sign.
    """
    lo = prolong_zero_detail(field, fine_lattice, LiftingMode.MIN)
    hi = prolong_zero_detail(field, fine_lattice, LiftingMode.MAX)
    return DisplacementField.from_stacked(fine_lattice, 0.5 * (lo.stacked() + hi.stacked()))
