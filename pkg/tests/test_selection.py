import numpy as np
import pytest

from colliderscope.kinematics import Event, ObjectKind, PhysicsObject
from colliderscope.selection import (
    DEFAULT_MASS_WINDOWS,
    ConfigError,
    MassWindow,
    SelectionConfig,
    check_windows,
    classify_dimuon,
    dimuon_mass,
    label_dimuon_event,
    select_complex_event,
)


def brute_force_classify(mass, windows):
    for w in windows:
        if w.lo <= mass <= w.hi:
            return w.class_id
    return 0


class TestClassifyDimuon:
    def test_jpsi_mass(self):
        assert classify_dimuon(3.01) == 1

    def test_z_mass(self):
        assert classify_dimuon(95.76) == 4

    def test_none_mass(self):
        assert classify_dimuon(15.52) == 0

    def test_psi2s_and_upsilon(self):
        assert classify_dimuon(3.72) == 2
        assert classify_dimuon(9.80) == 3

    def test_closed_interval_boundaries(self):
        assert classify_dimuon(2.94) == 1
        assert classify_dimuon(3.24) == 1
        assert classify_dimuon(2.9399999) == 0
        assert classify_dimuon(3.2400001) == 0

    def test_agrees_with_brute_force_scan(self):
        rng = np.random.default_rng(41)
        masses = rng.uniform(0.0, 200.0, size=100_000)
        expected = [brute_force_classify(m, DEFAULT_MASS_WINDOWS)
                    for m in masses]
        got = [classify_dimuon(float(m)) for m in masses]
        assert got == expected

    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError):
            classify_dimuon(-1.0)

    def test_overlapping_windows_config_error(self):
        bad = (MassWindow(1, "a", 1.0, 5.0), MassWindow(2, "b", 4.0, 8.0))
        with pytest.raises(ConfigError, match="overlap"):
            classify_dimuon(2.0, bad)

    def test_window_lo_ge_hi_rejected(self):
        with pytest.raises(ConfigError):
            MassWindow(1, "bad", 5.0, 5.0)

    def test_reserved_class_zero(self):
        with pytest.raises(ConfigError):
            check_windows((MassWindow(0, "x", 1.0, 2.0),))


def muon(pt, eta=0.0, phi=0.0):
    return PhysicsObject(ObjectKind.MUON, pt, eta, phi, mass=0.10566)


def jet(pt, eta=0.0, phi=0.0, btag=None):
    return PhysicsObject(ObjectKind.JET, pt, eta, phi, btag=btag)


class TestDimuonMass:
    def test_uses_two_leading_muons(self):
        ev = Event(id="m", objects=[muon(20.0, 0.0, 0.0), muon(50.0, 0.0, 0.0),
                                    muon(45.0, 1.0, 2.0)])
        # leading pair: 50 and 45 GeV
        from colliderscope.kinematics import invariant_mass_transverse
        expected = invariant_mass_transverse(50.0, 0.0, 0.0, 45.0, 1.0, 2.0)
        assert dimuon_mass(ev) == expected

    def test_too_few_muons(self):
        ev = Event(id="one", objects=[muon(30.0)])
        with pytest.raises(ValueError, match="muons"):
            dimuon_mass(ev)

    def test_label_round_trip(self):
        # back-to-back 45 GeV muons give m = 90, inside the Z window
        ev = Event(id="z", objects=[muon(45.0, 0.0, 0.0),
                                    muon(45.0, 0.0, np.pi)])
        assert label_dimuon_event(ev) == 4


class TestSelectComplexEvent:
    def test_single_muon_no_jets(self):
        ev = Event(id="a", objects=[muon(25.0)],
                   met=PhysicsObject(ObjectKind.MET, 30.0, 0.0, 0.0))
        selected = select_complex_event(ev)
        assert selected is not None
        assert len(selected.leptons()) == 1
        assert len(selected.jets()) == 0
        assert selected.met == ev.met

    def test_boundary_lepton_strict_inequality(self):
        ev = Event(id="b", objects=[muon(19.9)])
        assert select_complex_event(ev) is None
        assert select_complex_event(Event(id="c", objects=[muon(20.0)])) is None
        assert select_complex_event(
            Event(id="d", objects=[muon(20.0001)])) is not None

    def test_jet_cuts_and_btag_relabel(self):
        ev = Event(id="j", objects=[
            muon(40.0),
            jet(35.0, eta=2.5),             # fails |eta| < 2.4
            jet(35.0, eta=1.0, btag=0.9),   # passes, becomes BJet
            jet(25.0, eta=0.5),             # fails pt > 30
        ])
        selected = select_complex_event(ev)
        jets = selected.jets()
        assert len(jets) == 1
        assert jets[0].kind is ObjectKind.BJET
        assert jets[0].btag == 0.9

    def test_bjet_demoted_below_threshold(self):
        ev = Event(id="d", objects=[
            muon(40.0),
            PhysicsObject(ObjectKind.BJET, 50.0, 0.0, 0.0, btag=0.1),
        ])
        selected = select_complex_event(ev)
        assert selected.jets()[0].kind is ObjectKind.JET

    def test_untagged_jet_stays_jet(self):
        ev = Event(id="u", objects=[muon(40.0), jet(50.0)])
        assert select_complex_event(ev).jets()[0].kind is ObjectKind.JET

    def test_idempotent(self):
        ev = Event(id="i", objects=[
            muon(40.0), jet(35.0, eta=1.0, btag=0.9), jet(45.0, btag=0.2)],
            met=PhysicsObject(ObjectKind.MET, 22.0, 0.0, 1.0))
        once = select_complex_event(ev)
        twice = select_complex_event(once)
        assert twice == once

    def test_monotone_in_lepton_cut(self):
        rng = np.random.default_rng(4)
        events = []
        for i in range(300):
            objs = [muon(float(rng.uniform(5.0, 60.0)))]
            events.append(Event(id=f"e{i}", objects=objs))
        counts = []
        for cut in (10.0, 20.0, 30.0, 40.0):
            cfg = SelectionConfig(lepton_pt_min=cut)
            counts.append(sum(select_complex_event(e, cfg) is not None
                              for e in events))
        assert counts == sorted(counts, reverse=True)

    def test_require_single_lepton_switch(self):
        ev = Event(id="2l", objects=[muon(30.0), muon(25.0)])
        assert select_complex_event(ev) is not None
        cfg = SelectionConfig(require_single_lepton=True)
        assert select_complex_event(ev, cfg) is None


class TestSelectionConfig:
    def test_negative_threshold_rejected(self):
        with pytest.raises(ConfigError):
            SelectionConfig(lepton_pt_min=-1.0)

    def test_eta_beyond_canvas_rejected(self):
        with pytest.raises(ConfigError):
            SelectionConfig(jet_abs_eta_max=3.5)

    def test_dict_round_trip(self):
        cfg = SelectionConfig(lepton_pt_min=25.0, btag_threshold=0.8)
        assert SelectionConfig.from_dict(cfg.to_dict()) == cfg
