import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitlab import analysis
from gaitlab.analysis import (ContactTrace, energy_per_meter, froude,
                              gait_metrics, render_contact_plot,
                              render_contact_text, render_energy_chart,
                              sweep_flags)
from gaitlab.gait_schedule import GAITS, schedule_tick


def schedule_trace(gait, v, duration=12.0, jitter=0, seed=0):
    ts = np.arange(0.0, duration, 0.01)
    mask = np.array([schedule_tick(GAITS[gait], v, t) for t in ts])
    if jitter:
        rng = np.random.default_rng(seed)
        out = mask.copy()
        for leg in range(4):
            sig = mask[:, leg]
            edges = np.flatnonzero(np.diff(sig.astype(int)) != 0) + 1
            for e in edges:
                shift = int(rng.integers(-jitter, jitter + 1))
                if shift and 0 < e + min(0, shift) and e + max(0, shift) < len(sig):
                    lo, hi = e + min(0, shift), e + max(0, shift)
                    out[lo:hi, leg] = sig[e - 1] if shift > 0 else sig[e]
        mask = out
    return ContactTrace(100.0, mask)


SPEEDS = {"walk": [0.1, 0.25, 0.4, 0.55, 0.7],
          "trot": [0.5, 0.75, 1.0, 1.25, 1.5],
          "bounce": [1.0, 1.25, 1.5, 1.75, 2.0]}


# -- froude ---------------------------------------------------------------------

def test_froude_zero():
    assert froude(0.0, 0.27) == 0.0


def test_froude_trot_matches_published_value():
    f = froude(0.914, 0.27)
    assert 0.313 <= f <= 0.318


def test_froude_bounce_matches_published_value():
    f = froude(1.714, 0.27)
    assert 1.10 <= f <= 1.12


def test_froude_rejects_bad_height():
    with pytest.raises(ValueError):
        froude(1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(v=st.floats(0, 5, allow_nan=False), k=st.floats(0.1, 10),
       h=st.floats(0.05, 1.0))
def test_froude_homogeneous(v, k, h):
    assert froude(k * v, h) == pytest.approx(k * k * froude(v, h), rel=1e-9)


# -- classification ----------------------------------------------------------------

def test_classifier_on_noiseless_fixtures():
    for gait, speeds in SPEEDS.items():
        for v in speeds:
            m = gait_metrics(schedule_trace(gait, v))
            assert m.gait_label == gait, (gait, v, m)


def test_classifier_with_one_tick_jitter():
    total = correct = 0
    for gait, speeds in SPEEDS.items():
        for v in speeds:
            for seed in range(3):
                m = gait_metrics(schedule_trace(gait, v, jitter=1, seed=seed))
                total += 1
                correct += m.gait_label == gait
    assert correct / total >= 0.9


def test_walk_fixture_metrics():
    m = gait_metrics(schedule_trace("walk", 0.375))
    assert m.gait_label == "walk"
    assert np.allclose(m.duty_factor, 0.8, atol=0.02)
    assert m.cycle_period == pytest.approx(0.703125, abs=0.02)


def test_all_contact_is_standing():
    m = gait_metrics(ContactTrace(100.0, np.ones((400, 4), dtype=bool)))
    assert m.gait_label == "standing"
    assert np.allclose(m.duty_factor, 1.0)


def test_aperiodic_trace_is_unstructured():
    rng = np.random.default_rng(0)
    mask = rng.random((1200, 4)) < 0.6
    m = gait_metrics(ContactTrace(100.0, mask))
    assert m.gait_label == "unstructured"


def test_short_trace_is_not_forced_periodic():
    tr = schedule_trace("walk", 0.375, duration=1.0)  # < 3 cycles
    m = gait_metrics(tr)
    assert m.gait_label in ("unstructured", "standing")


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        ContactTrace(100.0, np.ones((0, 4), dtype=bool))


def test_upsampling_invariance():
    tr = schedule_trace("trot", 0.9)
    m1 = gait_metrics(tr)
    tr2 = ContactTrace(200.0, np.repeat(tr.contacts, 2, axis=0))
    m2 = gait_metrics(tr2)
    assert m2.gait_label == m1.gait_label
    assert np.abs(m2.duty_factor - m1.duty_factor).max() < 0.01
    assert abs(m2.cycle_period - m1.cycle_period) / m1.cycle_period < 0.01
    assert abs(m2.flight_fraction - m1.flight_fraction) < 0.01


# -- energy per meter ---------------------------------------------------------------

def test_energy_per_meter_hand_integral():
    t = np.arange(0, 2.0, 0.01)
    power = np.full_like(t, 30.0)
    xy = np.stack([t * 1.0, np.zeros_like(t)], axis=1)
    raw, pos = energy_per_meter(t, power, xy)
    assert raw == pytest.approx(30.0, rel=0.01)
    assert pos == pytest.approx(30.0, rel=0.01)


def test_energy_per_meter_zero_power():
    t = np.arange(0, 1.0, 0.01)
    raw, pos = energy_per_meter(t, np.zeros_like(t),
                                np.stack([t, np.zeros_like(t)], 1))
    assert raw == 0.0 and pos == 0.0


def test_energy_per_meter_guards_displacement():
    t = np.arange(0, 1.0, 0.01)
    xy = np.zeros((len(t), 2))
    with pytest.raises(ValueError):
        energy_per_meter(t, np.ones_like(t), xy)


def test_energy_raw_not_above_clamped():
    rng = np.random.default_rng(1)
    t = np.arange(0, 3.0, 0.01)
    power = rng.normal(10, 40, len(t))
    xy = np.stack([t, np.zeros_like(t)], 1)
    raw, pos = energy_per_meter(t, power, xy)
    assert raw <= pos


# -- rendering ----------------------------------------------------------------------

def test_contact_plot_solid_bars():
    tr = ContactTrace(100.0, np.ones((200, 4), dtype=bool))
    svg = render_contact_plot(tr)
    # one background + one contact bar per leg
    assert svg.count("<rect") == 1 + 4 + 4
    assert "RF" in svg and "LR" in svg


def test_contact_plot_segment_count():
    mask = np.zeros((100, 4), dtype=bool)
    mask[::2] = True  # alternating samples
    svg = render_contact_plot(ContactTrace(100.0, mask))
    assert svg.count("<rect") == 1 + 4 + 4 * 50


def test_contact_plot_deterministic(tmp_path):
    tr = schedule_trace("walk", 0.375, duration=6.0)
    a = render_contact_plot(tr, window=5.0)
    b = render_contact_plot(tr, window=5.0)
    assert a == b
    p1 = tmp_path / "a.svg"
    p2 = tmp_path / "b.svg"
    render_contact_plot(tr, window=5.0, path=str(p1))
    render_contact_plot(tr, window=5.0, path=str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_contact_text_fallback():
    tr = ContactTrace(100.0, np.ones((50, 4), dtype=bool))
    text = render_contact_text(tr)
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("RF")
    assert set(lines[0].split()[1]) == {"#"}


def test_energy_chart_renders():
    rows = [{"gait": "walk", "v_target": v, "energy_per_meter_raw": 100 + 50 * v,
             "fell": False} for v in (0.1, 0.3, 0.5)]
    rows += [{"gait": "trot", "v_target": v, "energy_per_meter_raw": 40 + 150 * v,
              "fell": False} for v in (0.5, 0.9, 1.3)]
    svg = render_energy_chart(rows, [{"v": 0.375, "energy_per_meter": 80.0,
                                      "label": "walk-desk"}])
    assert "<polyline" in svg and "<circle" in svg


def test_sweep_flags_crossing_detection():
    rows = []
    for v in np.arange(0.1, 0.8, 0.1):
        rows.append({"gait": "walk", "v_target": round(v, 1), "fell": False,
                     "energy_per_meter_raw": 50 + 100 * v})
    for v in np.arange(0.5, 1.6, 0.1):
        rows.append({"gait": "trot", "v_target": round(v, 1), "fell": False,
                     "energy_per_meter_raw": 90 + 10 * v})
    flags = sweep_flags(rows)
    assert flags["monotone"]["walk"] is True
    assert flags["monotone"]["trot"] is True
    xing = flags["walk_trot_crossing"]
    assert xing is not None and 0.4 <= xing <= 1.0


def test_sweep_flags_no_crossing():
    rows = [{"gait": "walk", "v_target": v, "fell": False,
             "energy_per_meter_raw": 300.0 + v} for v in (0.4, 0.6, 0.8)]
    rows += [{"gait": "trot", "v_target": v, "fell": False,
              "energy_per_meter_raw": 50.0 + v} for v in (0.5, 0.7, 0.9)]
    flags = sweep_flags(rows)
    assert flags["walk_trot_crossing"] is None
