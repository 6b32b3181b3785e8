"""Seeded synthetic event generator for pipeline tests.

Two families: dimuon events whose pair mass is driven into a chosen
mass window by solving the transverse mass formula for the second
muon's pT, and stylized multi-object events (one process recipe per
class) for the selection/rendering path.  These are test scaffolding
with controllable separability, not physically faithful simulation.

Every event draws from its own seeded stream keyed by (seed, class_id,
index), so generation is reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from .ingest import EventFileHeader, serialize_events
from .kinematics import (
    ELECTRON_MASS_GEV,
    MUON_MASS_GEV,
    Event,
    ObjectKind,
    PhysicsObject,
    wrap_phi,
)
from .selection import (
    DEFAULT_MASS_WINDOWS,
    MassWindow,
    check_windows,
    classify_dimuon,
    dimuon_mass,
)


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class ComplexRecipe:
    """Stylized per-class object content for multi-object events."""

    name: str
    n_leptons: int
    lepton_pt_range: tuple[float, float]
    jet_count_range: tuple[int, int]
    jet_pt_range: tuple[float, float]
    btag_count_range: tuple[int, int]
    met_range: tuple[float, float]

    def __post_init__(self):
        for lo, hi in (self.lepton_pt_range, self.jet_pt_range,
                       self.met_range):
            if not 0.0 <= lo <= hi:
                raise SynthError(f"recipe {self.name}: bad range "
                                 f"({lo}, {hi})")
        for lo, hi in (self.jet_count_range, self.btag_count_range):
            if not 0 <= lo <= hi:
                raise SynthError(f"recipe {self.name}: bad count range")
        if self.n_leptons < 0:
            raise SynthError(f"recipe {self.name}: negative lepton count")


# Class 0 is the signal-like recipe: lepton + many jets with b-tags and
# sizable MET.  The two backgrounds differ in lepton count and MET.
DEFAULT_COMPLEX_RECIPES: dict[int, ComplexRecipe] = {
    0: ComplexRecipe("ttbar", n_leptons=1, lepton_pt_range=(25.0, 150.0),
                     jet_count_range=(4, 6), jet_pt_range=(35.0, 250.0),
                     btag_count_range=(2, 3), met_range=(40.0, 150.0)),
    1: ComplexRecipe("drellyan", n_leptons=2, lepton_pt_range=(25.0, 120.0),
                     jet_count_range=(0, 2), jet_pt_range=(35.0, 120.0),
                     btag_count_range=(0, 0), met_range=(0.0, 25.0)),
    2: ComplexRecipe("wjets", n_leptons=1, lepton_pt_range=(25.0, 120.0),
                     jet_count_range=(0, 2), jet_pt_range=(35.0, 120.0),
                     btag_count_range=(0, 0), met_range=(25.0, 80.0)),
}

COMPLEX_CLASS_NAMES = tuple(DEFAULT_COMPLEX_RECIPES[i].name
                            for i in sorted(DEFAULT_COMPLEX_RECIPES))

# Mass bands away from the resonance windows, with clearance so float
# rounding cannot flip a class-0 draw into a window and so the classes
# stay well separated at desk scale.
DEFAULT_CLASS0_MASS_BANDS = (
    (1.2, 2.6), (14.0, 75.0), (110.0, 150.0),
)

# Per-class muon opening-angle bands (|eta2 - eta1|).  The angular
# separation feeds the pair-mass formula, and giving each class its own
# band makes the classes separable in raw kinematics, not only through
# the pT solved for the mass target.
DEFAULT_DELTA_ETA_BANDS: dict[int, tuple[float, float]] = {
    0: (0.0, 0.2),
    1: (0.5, 0.7),
    2: (1.0, 1.2),
    3: (1.5, 1.7),
    4: (2.0, 2.2),
}


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 0
    windows: tuple[MassWindow, ...] = DEFAULT_MASS_WINDOWS
    pt1_range: tuple[float, float] = (15.0, 90.0)
    eta_center_range: tuple[float, float] = (-0.5, 0.5)
    delta_eta_bands: dict[int, tuple[float, float]] = \
        field(default_factory=lambda: dict(DEFAULT_DELTA_ETA_BANDS))
    delta_phi_range: tuple[float, float] = (2.2, 2.9)
    pt2_limits: tuple[float, float] = (0.005, 1200.0)
    window_margin: float = 0.05
    class0_mass_bands: tuple[tuple[float, float], ...] = \
        DEFAULT_CLASS0_MASS_BANDS
    max_retries: int = 200
    complex_recipes: dict[int, ComplexRecipe] = \
        field(default_factory=lambda: dict(DEFAULT_COMPLEX_RECIPES))
    complex_eta_range: tuple[float, float] = (-2.3, 2.3)

    def __post_init__(self):
        check_windows(self.windows)
        if self.pt1_range[0] <= 0 or self.pt1_range[0] > self.pt1_range[1]:
            raise SynthError("pt1_range must be positive and ordered")
        if self.max_retries < 1:
            raise SynthError("max_retries must be >= 1")
        for lo, hi in self.class0_mass_bands:
            if not 0 < lo < hi:
                raise SynthError(f"bad mass band ({lo}, {hi})")
            if any(w.contains(lo) or w.contains(hi)
                   for w in self.windows):
                raise SynthError(f"mass band ({lo}, {hi}) touches a window")
        for class_id, (lo, hi) in self.delta_eta_bands.items():
            if not 0.0 <= lo <= hi:
                raise SynthError(f"class {class_id}: bad delta-eta band")


def _event_rng(spec: GeneratorSpec, class_id: int,
               index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((spec.seed, class_id, index)))


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _target_mass(rng: np.random.Generator, spec: GeneratorSpec,
                 class_id: int) -> float:
    if class_id == 0:
        band = spec.class0_mass_bands[
            rng.integers(len(spec.class0_mass_bands))]
        return float(rng.uniform(band[0], band[1]))
    window = next(w for w in spec.windows if w.class_id == class_id)
    return float(rng.uniform(window.lo + spec.window_margin,
                             window.hi - spec.window_margin))


def generate_dimuon(class_id: int, spec: GeneratorSpec,
                    index: int = 0) -> Event:
    """One two-muon event whose pair mass classifies as ``class_id``.

    Draws the first muon and the pair separation, solves
    m^2 = 2 pT1 pT2 (cosh deta - cos dphi) for pT2, and keeps the draw
    only if its recomputed label matches; otherwise resamples.
    """
    known = {w.class_id for w in spec.windows} | {0}
    if class_id not in known:
        raise SynthError(f"unknown dimuon class {class_id}")
    eta_band = spec.delta_eta_bands.get(class_id)
    if eta_band is None:
        raise SynthError(f"no delta-eta band for class {class_id}")
    rng = _event_rng(spec, class_id, index)
    for _ in range(spec.max_retries):
        mass = _target_mass(rng, spec, class_id)
        pt1 = _log_uniform(rng, *spec.pt1_range)
        eta1 = float(rng.uniform(*spec.eta_center_range))
        phi1 = float(rng.uniform(-math.pi, math.pi))
        deta = float(rng.uniform(*eta_band))
        if rng.random() < 0.5:
            deta = -deta
        dphi = float(rng.uniform(*spec.delta_phi_range))
        if rng.random() < 0.5:
            dphi = -dphi
        separation = math.cosh(deta) - math.cos(dphi)
        if separation <= 1e-12:
            continue
        pt2 = mass * mass / (2.0 * pt1 * separation)
        if not spec.pt2_limits[0] <= pt2 <= spec.pt2_limits[1]:
            continue
        muons = [
            PhysicsObject(ObjectKind.MUON, pt1, eta1, phi1,
                          mass=MUON_MASS_GEV),
            PhysicsObject(ObjectKind.MUON, pt2, eta1 + deta,
                          wrap_phi(phi1 + dphi), mass=MUON_MASS_GEV),
        ]
        muons.sort(key=lambda o: -o.pt)
        event = Event(id=f"dimuon{class_id}-{index}", objects=muons,
                      truth_class=class_id)
        if classify_dimuon(dimuon_mass(event), spec.windows) == class_id:
            return event
    raise SynthError(f"dimuon class {class_id} index {index}: no valid "
                     f"draw in {spec.max_retries} tries")


def generate_dimuon_events(spec: GeneratorSpec, n_per_class: int,
                           class_ids: Optional[Sequence[int]] = None
                           ) -> list[Event]:
    if class_ids is None:
        class_ids = [0] + sorted(w.class_id for w in spec.windows)
    return [generate_dimuon(c, spec, i)
            for c in class_ids for i in range(n_per_class)]


def generate_complex(class_id: int, spec: GeneratorSpec,
                     index: int = 0) -> Event:
    """One stylized multi-object event from the class recipe."""
    recipe = spec.complex_recipes.get(class_id)
    if recipe is None:
        raise SynthError(f"no recipe for complex class {class_id}")
    rng = _event_rng(spec, class_id, index)
    objects: list[PhysicsObject] = []
    for _ in range(recipe.n_leptons):
        if rng.random() < 0.5:
            kind, mass = ObjectKind.ELECTRON, ELECTRON_MASS_GEV
        else:
            kind, mass = ObjectKind.MUON, MUON_MASS_GEV
        objects.append(PhysicsObject(
            kind, _log_uniform(rng, *recipe.lepton_pt_range),
            float(rng.uniform(*spec.complex_eta_range)),
            float(rng.uniform(-math.pi, math.pi)), mass=mass))
    lo, hi = recipe.jet_count_range
    n_jets = int(rng.integers(lo, hi + 1))
    lo, hi = recipe.btag_count_range
    n_tagged = min(int(rng.integers(lo, hi + 1)), n_jets)
    tagged_slots = set(rng.permutation(n_jets)[:n_tagged].tolist())
    for j in range(n_jets):
        btag = float(rng.uniform(0.75, 1.0)) if j in tagged_slots \
            else float(rng.uniform(0.0, 0.55))
        objects.append(PhysicsObject(
            ObjectKind.JET, _log_uniform(rng, *recipe.jet_pt_range),
            float(rng.uniform(*spec.complex_eta_range)),
            float(rng.uniform(-math.pi, math.pi)), btag=btag))
    met = PhysicsObject(ObjectKind.MET,
                        float(rng.uniform(*recipe.met_range)), 0.0,
                        float(rng.uniform(-math.pi, math.pi)))
    return Event(id=f"{recipe.name}-{index}", objects=objects, met=met,
                 truth_class=class_id)


def generate_complex_events(spec: GeneratorSpec,
                            n_per_class: int) -> list[Event]:
    return [generate_complex(c, spec, i)
            for c in sorted(spec.complex_recipes)
            for i in range(n_per_class)]


def write_ndjson(events: Sequence[Event], stream: IO[bytes],
                 class_names: Optional[Sequence[str]] = None,
                 source: str = "synth") -> int:
    header = EventFileHeader(source=source,
                             class_names=tuple(class_names)
                             if class_names else ())
    return serialize_events(events, stream, header)
