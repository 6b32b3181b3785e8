"""Physics preselection cuts and dimuon mass-window labeling.

Cuts are strict inequalities (lepton pT > 20 GeV, jet pT > 30 GeV,
|eta| < 2.4 by default); mass windows are closed intervals.  Isolation
and identification quality flags are assumed applied upstream.
"""

from __future__ import annotations

import bisect
import functools
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .kinematics import Event, ObjectKind, PhysicsObject, invariant_mass_transverse


class ConfigError(ValueError):
    """Invalid selection or window configuration."""


@dataclass(frozen=True)
class SelectionConfig:
    lepton_pt_min: float = 20.0
    jet_pt_min: float = 30.0
    jet_abs_eta_max: float = 2.4
    # CSV medium working point; configurable, the choice is conventional
    btag_threshold: float = 0.679
    require_single_lepton: bool = False

    def __post_init__(self):
        for name in ("lepton_pt_min", "jet_pt_min", "jet_abs_eta_max",
                     "btag_threshold"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.jet_abs_eta_max > 3.0:
            raise ConfigError("jet_abs_eta_max must be <= 3 (canvas eta range)")

    def to_dict(self) -> dict:
        return {
            "lepton_pt_min": self.lepton_pt_min,
            "jet_pt_min": self.jet_pt_min,
            "jet_abs_eta_max": self.jet_abs_eta_max,
            "btag_threshold": self.btag_threshold,
            "require_single_lepton": self.require_single_lepton,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionConfig":
        known = cls().to_dict().keys()
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class MassWindow:
    class_id: int
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(
                f"window {self.name}: lo must be < hi ({self.lo}, {self.hi})")

    def contains(self, mass: float) -> bool:
        return self.lo <= mass <= self.hi


NONE_CLASS_ID = 0
NONE_CLASS_NAME = "none"

# dimuon resonance windows in GeV: J/psi, psi(2S), upsilon family, Z
DEFAULT_MASS_WINDOWS = (
    MassWindow(1, "jpsi", 2.94, 3.24),
    MassWindow(2, "psi2s", 3.65, 3.95),
    MassWindow(3, "upsilon", 6.46, 12.46),
    MassWindow(4, "z", 83.69, 98.69),
)

DIMUON_CLASS_NAMES = {NONE_CLASS_ID: NONE_CLASS_NAME,
                      **{w.class_id: w.name for w in DEFAULT_MASS_WINDOWS}}


def check_windows(windows: Sequence[MassWindow]) -> tuple[MassWindow, ...]:
    """Validate a window set: distinct classes, pairwise disjoint intervals."""
    ordered = tuple(sorted(windows, key=lambda w: w.lo))
    ids = [w.class_id for w in ordered]
    if len(set(ids)) != len(ids):
        raise ConfigError("window class ids must be unique")
    if NONE_CLASS_ID in ids:
        raise ConfigError(f"class {NONE_CLASS_ID} is reserved for 'no window'")
    for a, b in zip(ordered, ordered[1:]):
        if b.lo <= a.hi:
            raise ConfigError(
                f"windows {a.name} and {b.name} overlap "
                f"([{a.lo}, {a.hi}] vs [{b.lo}, {b.hi}])")
    return ordered


@functools.lru_cache(maxsize=16)
def _ordered_windows(windows: tuple[MassWindow, ...]
                     ) -> tuple[tuple[MassWindow, ...], tuple[float, ...]]:
    ordered = check_windows(windows)
    return ordered, tuple(w.lo for w in ordered)


def classify_dimuon(mass: float,
                    windows: Sequence[MassWindow] = DEFAULT_MASS_WINDOWS) -> int:
    """Class of the window whose closed interval contains ``mass``, else 0."""
    if mass < 0:
        raise ValueError(f"mass must be >= 0, got {mass}")
    ordered, los = _ordered_windows(tuple(windows))
    i = bisect.bisect_right(los, mass) - 1
    if i >= 0 and ordered[i].contains(mass):
        return ordered[i].class_id
    return NONE_CLASS_ID


def dimuon_mass(event: Event) -> float:
    """Invariant mass of the two leading muons, from (pT, eta, phi)."""
    muons = sorted((o for o in event.objects if o.kind is ObjectKind.MUON),
                   key=lambda o: -o.pt)
    if len(muons) < 2:
        raise ValueError(f"event {event.id}: needs >= 2 muons, "
                         f"has {len(muons)}")
    a, b = muons[0], muons[1]
    return invariant_mass_transverse(a.pt, a.eta, a.phi, b.pt, b.eta, b.phi)


def label_dimuon_event(event: Event,
                       windows: Sequence[MassWindow] = DEFAULT_MASS_WINDOWS
                       ) -> int:
    return classify_dimuon(dimuon_mass(event), windows)


def select_complex_event(event: Event,
                         config: Optional[SelectionConfig] = None
                         ) -> Optional[Event]:
    """Apply the preselection; returns the reduced event or None.

    Keeps leptons above the pT cut and jets passing the pT and |eta|
    cuts, relabeling each retained jet BJet iff its discriminant reaches
    the threshold.  MET passes through unchanged.  Selection is
    idempotent for a fixed config.
    """
    if config is None:
        config = SelectionConfig()
    kept: list[PhysicsObject] = []
    n_leptons = 0
    for obj in event.objects:
        if obj.kind.is_lepton:
            if obj.pt > config.lepton_pt_min:
                kept.append(obj)
                n_leptons += 1
        elif obj.kind.is_jet:
            if obj.pt > config.jet_pt_min and \
                    abs(obj.eta) < config.jet_abs_eta_max:
                tagged = obj.btag is not None and \
                    obj.btag >= config.btag_threshold
                kind = ObjectKind.BJET if tagged else ObjectKind.JET
                kept.append(obj if obj.kind is kind
                            else replace(obj, kind=kind))
        else:
            kept.append(obj)
    if n_leptons == 0:
        return None
    if config.require_single_lepton and n_leptons != 1:
        return None
    return Event(id=event.id, objects=kept, met=event.met,
                 truth_class=event.truth_class)
