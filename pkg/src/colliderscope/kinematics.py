"""Core kinematic types and invariant-mass math for collision events.

Coordinates follow the standard hadron-collider convention: the beam is
the z axis, pseudorapidity eta describes the polar direction
(pz = pT*sinh(eta)) and phi is the azimuthal angle in [-pi, pi].
Energies and momenta are in GeV (c = 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MUON_MASS_GEV = 0.10566
ELECTRON_MASS_GEV = 0.000511

# numerical slack for m^2 of massless objects
MASS_SQ_TOLERANCE = 1e-6


class ObjectKind(enum.Enum):
    ELECTRON = "electron"
    MUON = "muon"
    JET = "jet"
    BJET = "bjet"
    MET = "met"

    @property
    def is_lepton(self) -> bool:
        return self in (ObjectKind.ELECTRON, ObjectKind.MUON)

    @property
    def is_jet(self) -> bool:
        return self in (ObjectKind.JET, ObjectKind.BJET)


@dataclass(frozen=True)
class FourVector:
    """Relativistic (E, px, py, pz) carrier, components in GeV."""

    E: float
    px: float
    py: float
    pz: float

    @property
    def p2(self) -> float:
        return self.px ** 2 + self.py ** 2 + self.pz ** 2

    @property
    def pt(self) -> float:
        return math.hypot(self.px, self.py)

    @property
    def eta(self) -> float:
        pt = self.pt
        if pt == 0.0:
            return 0.0
        return math.asinh(self.pz / pt)

    @property
    def phi(self) -> float:
        if self.px == 0.0 and self.py == 0.0:
            return 0.0
        return math.atan2(self.py, self.px)

    @property
    def mass(self) -> float:
        return math.sqrt(max(0.0, self.E ** 2 - self.p2))


@dataclass(frozen=True)
class PhysicsObject:
    """One reconstructed object (lepton / jet / MET) in (pT, eta, phi) form.

    ``btag`` is the secondary-vertex discriminant in [0, 1]; it is only
    meaningful for jet kinds.  For MET, ``eta`` is ignored downstream and
    the object is rendered at eta = 0.
    """

    kind: ObjectKind
    pt: float
    eta: float
    phi: float
    mass: float = 0.0
    btag: Optional[float] = None


@dataclass(frozen=True)
class Event:
    """One collision: reconstructed objects plus MET and an optional label."""

    id: str
    objects: tuple[PhysicsObject, ...]
    met: Optional[PhysicsObject] = None
    truth_class: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def leptons(self) -> tuple[PhysicsObject, ...]:
        return tuple(o for o in self.objects if o.kind.is_lepton)

    def jets(self) -> tuple[PhysicsObject, ...]:
        return tuple(o for o in self.objects if o.kind.is_jet)


def wrap_phi(phi: float) -> float:
    """Wrap an angle into [-pi, pi]."""
    return math.remainder(phi, 2.0 * math.pi)


def four_vector_from_ptetaphi(pt: float, eta: float, phi: float,
                              mass: float = 0.0) -> FourVector:
    """Build a four-vector from (pT, eta, phi, mass).

    px = pT*cos(phi), py = pT*sin(phi), pz = pT*sinh(eta) and
    E = sqrt(|p|^2 + m^2).

    Raises
    ------
    ValueError
        If pt or mass is negative.
    """
    if pt < 0.0:
        raise ValueError(f"pt must be >= 0, got {pt}")
    if mass < 0.0:
        raise ValueError(f"mass must be >= 0, got {mass}")
    px = pt * math.cos(phi)
    py = pt * math.sin(phi)
    pz = pt * math.sinh(eta)
    energy = math.sqrt(px * px + py * py + pz * pz + mass * mass)
    return FourVector(E=energy, px=px, py=py, pz=pz)


def object_four_vector(obj: PhysicsObject) -> FourVector:
    """Four-vector of a reconstructed object (MET treated as massless at eta=0)."""
    if obj.kind is ObjectKind.MET:
        return four_vector_from_ptetaphi(obj.pt, 0.0, obj.phi, 0.0)
    return four_vector_from_ptetaphi(obj.pt, obj.eta, obj.phi, obj.mass)


def invariant_mass_exact(a: FourVector, b: FourVector) -> float:
    """Invariant mass of a two-particle system from its summed four-vector.

    m^2 = (E1+E2)^2 - |p1+p2|^2, clamped to zero before the square root
    (floating-point noise can push collinear massless pairs slightly
    negative).
    """
    energy = a.E + b.E
    px = a.px + b.px
    py = a.py + b.py
    pz = a.pz + b.pz
    m2 = energy * energy - (px * px + py * py + pz * pz)
    return math.sqrt(max(0.0, m2))


def invariant_mass_transverse(pt1, eta1, phi1, pt2, eta2, phi2):
    """Invariant mass of two massless particles from (pT, eta, phi) alone.

    Evaluates m^2 = 2*pT1*pT2*(cosh(eta1-eta2) - cos(phi1-phi2)) in the
    half-angle form 4*pT1*pT2*(sinh^2(deta/2) + sin^2(dphi/2)), which is
    exact in the same algebra but avoids the 1-cos cancellation for
    nearly collinear pairs.

    Accepts scalars or numpy arrays (broadcast elementwise).
    """
    deta = np.subtract(eta1, eta2)
    dphi = np.subtract(phi1, phi2)
    m2 = 4.0 * np.multiply(pt1, pt2) * (
        np.sinh(deta / 2.0) ** 2 + np.sin(dphi / 2.0) ** 2
    )
    result = np.sqrt(m2)
    if np.isscalar(pt1) and np.isscalar(pt2):
        return float(result)
    return result
