"""Build the committed golden fixtures: five events plus their PNGs.

Four two-muon layouts with pair masses spanning the resonance windows
(none, low window, mid window, high window) and one signal-like
multi-object event.  The second muon's pT is solved from the pair-mass
formula, so each event's label is fixed by construction.

Run from the repository root; rewrites tests/golden/.
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from colliderscope.ingest import serialize_events  # noqa: E402
from colliderscope.kinematics import (  # noqa: E402
    MUON_MASS_GEV,
    Event,
    ObjectKind,
    PhysicsObject,
    wrap_phi,
)
from colliderscope.render import (  # noqa: E402
    CanvasSpec,
    SizeVariable,
    encode_png,
    render_event,
)
from colliderscope.selection import classify_dimuon, dimuon_mass  # noqa: E402

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "golden"

# (id, target mass, expected class, pt1, eta1, phi1, deta, dphi)
DIMUON_LAYOUTS = [
    ("golden-dimuon-none", 15.52, 0, 45.0, -0.8, 0.6, 0.1, 2.5),
    ("golden-dimuon-low", 3.01, 1, 30.0, 0.5, -2.0, 0.6, -2.4),
    ("golden-dimuon-mid", 9.80, 3, 60.0, -0.2, 1.2, 1.6, 2.8),
    ("golden-dimuon-high", 95.76, 4, 70.0, 0.3, -0.9, 2.1, -2.6),
]


def dimuon_event(event_id, mass, truth, pt1, eta1, phi1, deta, dphi):
    separation = math.cosh(deta) - math.cos(dphi)
    pt2 = mass * mass / (2.0 * pt1 * separation)
    muons = sorted(
        [PhysicsObject(ObjectKind.MUON, pt1, eta1, phi1,
                       mass=MUON_MASS_GEV),
         PhysicsObject(ObjectKind.MUON, pt2, eta1 + deta,
                       wrap_phi(phi1 + dphi), mass=MUON_MASS_GEV)],
        key=lambda o: -o.pt)
    return Event(id=event_id, objects=muons, truth_class=truth)


def complex_event():
    objects = (
        PhysicsObject(ObjectKind.ELECTRON, 45.0, 0.3, -0.4),
        PhysicsObject(ObjectKind.JET, 120.0, 1.0, 2.0, btag=0.3),
        PhysicsObject(ObjectKind.JET, 80.0, -1.2, 0.5, btag=0.5),
        PhysicsObject(ObjectKind.BJET, 95.0, 0.8, -2.2, btag=0.92),
        PhysicsObject(ObjectKind.BJET, 55.0, -0.5, 2.9, btag=0.85),
    )
    met = PhysicsObject(ObjectKind.MET, 75.0, 0.0, 2.5)
    return Event(id="golden-complex-signal", objects=objects, met=met,
                 truth_class=0)


def main():
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    events = []
    for event_id, mass, truth, *kin in DIMUON_LAYOUTS:
        ev = dimuon_event(event_id, mass, truth, *kin)
        got_mass = dimuon_mass(ev)
        got_class = classify_dimuon(got_mass)
        assert abs(got_mass - mass) < 1e-9, (event_id, got_mass)
        assert got_class == truth, (event_id, got_class)
        events.append(ev)
    events.append(complex_event())

    with open(GOLDEN_DIR / "golden_events.ndjson", "wb") as fh:
        serialize_events(events, fh)

    energy_spec = CanvasSpec(size_variable=SizeVariable.ENERGY)
    pt_spec = CanvasSpec(size_variable=SizeVariable.TRANSVERSE_MOMENTUM)
    for ev in events:
        spec = energy_spec if "dimuon" in ev.id else pt_spec
        png = encode_png(render_event(ev, spec))
        (GOLDEN_DIR / f"{ev.id}.png").write_bytes(png)
        print(f"{ev.id}: {len(png)} bytes")


if __name__ == "__main__":
    main()
