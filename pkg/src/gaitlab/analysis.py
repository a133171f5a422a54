"""Gait and energetics analytics: duty factors, gait classification, Froude
numbers, energy per meter, and deterministic SVG contact/energy charts.

Leg order in all traces is (RF, LF, RR, LR).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .robot import LEG_NAMES, N_LEGS

GRAVITY = 9.81

GAIT_LABELS = ("walk", "trot", "bounce", "standing", "unstructured")

# the quarter-off walking touchdown sequence reported for quadrupeds
WALK_SEQUENCE = ("RF", "LR", "LF", "RR")
DIAGONAL_PAIRS = ((0, 3), (1, 2))  # (RF, LR) and (LF, RR)


def froude(v: float, h: float) -> float:
    """Dimensionless speed v^2 / (g h); h is the hip height."""
    if h <= 0:
        raise ValueError("hip height must be > 0")
    return v * v / (GRAVITY * h)


@dataclass
class ContactTrace:
    sample_rate: float  # Hz
    contacts: np.ndarray  # (T, 4) bool, legs (RF, LF, RR, LR)
    speed: np.ndarray | None = None  # (T,) m/s, optional aligned series
    power: np.ndarray | None = None  # (T,) W, optional aligned series

    def __post_init__(self):
        self.contacts = np.asarray(self.contacts, dtype=bool)
        if self.contacts.ndim != 2 or self.contacts.shape[1] != N_LEGS:
            raise ValueError("contacts must be (T, 4)")
        if self.contacts.shape[0] < 1:
            raise ValueError("contact trace must have at least one sample")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")

    @property
    def duration(self) -> float:
        return self.contacts.shape[0] / self.sample_rate


@dataclass
class ClassifierConfig:
    """Decision thresholds, tuned on scheduler-generated fixtures."""
    walk_duty_min: float = 0.7
    quarter_tol: float = 0.09  # cycles
    sync_tol: float = 0.1  # cycles
    antiphase_tol: float = 0.1  # cycles
    flight_min: float = 0.2
    periodicity_min: float = 0.35  # normalized autocorrelation peak
    min_cycles: float = 3.0


@dataclass
class GaitMetrics:
    duty_factor: np.ndarray  # (4,)
    relative_phase: np.ndarray  # (4,) cycles, touchdown offset vs RF
    cycle_period: float  # s (nan when aperiodic)
    gait_label: str
    froude: float
    energy_per_meter: float  # raw integral (nan without power/speed series)
    mean_speed: float
    flight_fraction: float
    periodicity: float = 0.0
    sequence: tuple = ()


def _autocorr_period(signal: np.ndarray, min_lag: int) -> tuple[float, float]:
    """(lag, normalized peak) of the first dominant autocorrelation peak."""
    s = signal.astype(np.float64)
    s = s - s.mean()
    norm = float(np.dot(s, s))
    if norm < 1e-12:
        return np.nan, 0.0
    ac = np.correlate(s, s, mode="full")[len(s) - 1:] / norm
    max_lag = len(s) * 2 // 3
    if max_lag <= min_lag + 1:
        return np.nan, 0.0
    window = ac[min_lag:max_lag]
    # first local maximum above half the global peak beats a late harmonic
    best = int(np.argmax(window))
    thresh = 0.5 * window[best]
    for lag in range(1, len(window) - 1):
        if window[lag] >= thresh and window[lag] >= window[lag - 1] \
                and window[lag] >= window[lag + 1]:
            best = lag
            break
    return float(best + min_lag), float(window[best])


def _touchdowns(signal: np.ndarray) -> np.ndarray:
    return np.flatnonzero(~signal[:-1] & signal[1:]) + 1


def _relative_phases(contacts: np.ndarray, period: float) -> np.ndarray:
    """Per-leg touchdown phase relative to a reference leg, in cycles.

    Each touchdown is compared with the nearest reference-leg touchdown, so a
    slightly misestimated period cannot accumulate drift over a long trace.
    """
    offsets = np.full(N_LEGS, np.nan)
    tds = [_touchdowns(contacts[:, leg]) for leg in range(N_LEGS)]
    ref = next((leg for leg in range(N_LEGS) if len(tds[leg])), None)
    if ref is None:
        return offsets
    ref_tds = tds[ref]
    for leg in range(N_LEGS):
        if len(tds[leg]) == 0:
            continue
        idx = np.searchsorted(ref_tds, tds[leg])
        lo = np.clip(idx - 1, 0, len(ref_tds) - 1)
        hi = np.clip(idx, 0, len(ref_tds) - 1)
        near = np.where(np.abs(tds[leg] - ref_tds[lo])
                        <= np.abs(tds[leg] - ref_tds[hi]),
                        ref_tds[lo], ref_tds[hi])
        ang = 2 * np.pi * (tds[leg] - near) / period
        mean = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
        offsets[leg] = (mean / (2 * np.pi)) % 1.0
    return offsets


def _circ_mean(a: float, b: float) -> float:
    ang = 2 * np.pi * np.array([a, b])
    return float((np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
                  / (2 * np.pi)) % 1.0)


def _circ_diff(a: float, b: float) -> float:
    """Circular distance between two cycle fractions, in [0, 0.5]."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def gait_metrics(trace: ContactTrace, hip_height: float = 0.27,
                 cfg: ClassifierConfig | None = None) -> GaitMetrics:
    """Estimate duty factors, phases, and the gait label from a contact trace.

    Period comes from the autocorrelation of the per-leg contact signals;
    labels follow the scheduler conventions: walk = high duty with quarter-off
    touchdowns, trot = synchronized diagonal pairs half a cycle apart,
    bounce = all legs synchronized with a real flight fraction. Traces with a
    weak periodicity score are labeled unstructured.
    """
    cfg = cfg or ClassifierConfig()
    c = trace.contacts
    T = c.shape[0]
    duty = c.mean(axis=0)
    flight = float((~c.any(axis=1)).mean())
    mean_speed = float(np.mean(trace.speed)) if trace.speed is not None else np.nan
    fr = froude(mean_speed, hip_height) if np.isfinite(mean_speed) else np.nan
    epm = _epm_from_trace(trace)

    def result(label, period=np.nan, rel=None, score=0.0, seq=()):
        return GaitMetrics(duty_factor=duty,
                           relative_phase=rel if rel is not None else np.full(N_LEGS, np.nan),
                           cycle_period=period, gait_label=label, froude=fr,
                           energy_per_meter=epm, mean_speed=mean_speed,
                           flight_fraction=flight, periodicity=score, sequence=seq)

    if bool(c.all()):
        return result("standing")
    if bool((~c).all()):
        return result("unstructured")

    min_lag = max(4, int(0.05 * trace.sample_rate))
    periods, scores = [], []
    for leg in range(N_LEGS):
        col = c[:, leg]
        if col.all() or not col.any():
            continue
        p, s = _autocorr_period(col, min_lag)
        if np.isfinite(p):
            periods.append(p)
            scores.append(s)
    if not periods:
        return result("unstructured")
    period = float(np.median(periods))
    score = float(np.median(scores))
    if score < cfg.periodicity_min or T < cfg.min_cycles * period:
        return result("unstructured", score=score)

    rel = _relative_phases(c, period)
    if np.any(~np.isfinite(rel)):
        # a leg without touchdowns in a moving robot is not a standard gait
        return result("unstructured", period / trace.sample_rate, score=score)
    period_s = period / trace.sample_rate

    # bounce: all legs synchronized and a genuine flight phase
    spread = max(_circ_diff(rel[i], rel[j])
                 for i in range(N_LEGS) for j in range(i + 1, N_LEGS))
    if spread < cfg.sync_tol and flight > cfg.flight_min:
        return result("bounce", period_s, rel, score)

    # trot: diagonal pairs internally synchronized, pairs in antiphase
    pair_a, pair_b = DIAGONAL_PAIRS
    intra_a = _circ_diff(rel[pair_a[0]], rel[pair_a[1]])
    intra_b = _circ_diff(rel[pair_b[0]], rel[pair_b[1]])
    inter = _circ_diff(_circ_mean(rel[pair_a[0]], rel[pair_a[1]]),
                       _circ_mean(rel[pair_b[0]], rel[pair_b[1]]))
    if intra_a < cfg.sync_tol and intra_b < cfg.sync_tol \
            and abs(inter - 0.5) < cfg.antiphase_tol:
        return result("trot", period_s, rel, score)

    # walk: high duty, four distinct touchdowns near quarter offsets
    seq = tuple(LEG_NAMES[i] for i in np.argsort(rel))
    if duty.mean() > cfg.walk_duty_min:
        slots = np.sort(rel)
        quarters = slots[0] + np.array([0.0, 0.25, 0.5, 0.75])
        if all(_circ_diff(s, qtr) < cfg.quarter_tol
               for s, qtr in zip(slots, quarters)):
            return result("walk", period_s, rel, score, seq)

    return result("unstructured", period_s, rel, score, seq)


def _epm_from_trace(trace: ContactTrace) -> float:
    if trace.power is None or trace.speed is None:
        return np.nan
    dt = 1.0 / trace.sample_rate
    dist = float(np.sum(np.abs(trace.speed)) * dt)
    if dist < 0.01:
        return np.nan
    return float(np.sum(trace.power) * dt / dist)


def energy_per_meter(times: np.ndarray, power: np.ndarray,
                     xy: np.ndarray) -> tuple[float, float]:
    """(raw, positive-clamped) integrated power per meter of planar travel.

    ``xy`` is (T, 2) planar position; displacement below 1 cm is rejected.
    """
    times = np.asarray(times, dtype=np.float64)
    power = np.asarray(power, dtype=np.float64)
    xy = np.asarray(xy, dtype=np.float64)
    if len(times) < 2:
        raise ValueError("need at least two samples")
    dist = float(np.hypot(*(xy[-1] - xy[0])))
    if dist < 0.01:
        raise ValueError(f"displacement {dist:.4f} m too small to normalize")
    dts = np.diff(times)
    e_raw = float(np.sum(power[:-1] * dts))
    e_pos = float(np.sum(np.clip(power[:-1], 0.0, None) * dts))
    return e_raw / dist, e_pos / dist


def load_trajectory_csv(path: str) -> dict[str, np.ndarray]:
    """Columns of an environment trajectory log as float arrays."""
    with open(path, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty trajectory log")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def trace_from_trajectory(columns: dict[str, np.ndarray],
                          sample_rate: float = 100.0) -> ContactTrace:
    contacts = np.stack([columns[f"contact_{leg}"].astype(bool)
                         for leg in ("rf", "lf", "rr", "lr")], axis=1)
    return ContactTrace(sample_rate=sample_rate, contacts=contacts,
                        speed=columns.get("vel_x"),
                        power=columns.get("power_raw"))


# -- deterministic SVG rendering ---------------------------------------------

_LEG_COLORS = ("#2563eb", "#dc2626", "#059669", "#d97706")


def render_contact_plot(trace: ContactTrace, window: float | None = None,
                        width: int = 900, path: str | None = None) -> str:
    """Strip chart of the four contact signals; bold segments mean contact.

    Returns the SVG text; byte-identical for identical traces.
    """
    T = trace.contacts.shape[0]
    if window is not None:
        n = min(T, int(round(window * trace.sample_rate)))
    else:
        n = T
    c = trace.contacts[:n]
    row_h, pad, label_w = 34, 10, 42
    h = 4 * row_h + 2 * pad + 18
    plot_w = width - label_w - pad
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{h}" '
        f'viewBox="0 0 {width} {h}">',
        f'<rect width="{width}" height="{h}" fill="white"/>',
    ]
    for leg in range(N_LEGS):
        y0 = pad + leg * row_h
        lines.append(f'<text x="6" y="{y0 + 22}" font-family="monospace" '
                     f'font-size="14">{LEG_NAMES[leg]}</text>')
        lines.append(f'<rect x="{label_w}" y="{y0 + 4}" width="{plot_w}" '
                     f'height="{row_h - 10}" fill="#eeeeee"/>')
        sig = c[:, leg]
        start = None
        for i in range(n + 1):
            on = i < n and sig[i]
            if on and start is None:
                start = i
            elif not on and start is not None:
                x = label_w + plot_w * start / n
                w = plot_w * (i - start) / n
                lines.append(f'<rect x="{x:.2f}" y="{y0 + 4}" width="{w:.2f}" '
                             f'height="{row_h - 10}" fill="{_LEG_COLORS[leg]}"/>')
                start = None
    secs = n / trace.sample_rate
    lines.append(f'<text x="{label_w}" y="{h - 6}" font-family="monospace" '
                 f'font-size="12">{secs:g} s window, {trace.sample_rate:g} Hz</text>')
    lines.append("</svg>")
    svg = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(svg)
    return svg


def render_contact_text(trace: ContactTrace, window: float | None = None,
                        max_cols: int = 100) -> str:
    """Plain-text fallback: one row per leg, '#' in contact, '.' in the air."""
    T = trace.contacts.shape[0]
    n = min(T, int(round(window * trace.sample_rate))) if window else T
    step = max(1, n // max_cols)
    out = []
    for leg in range(N_LEGS):
        sig = trace.contacts[:n:step, leg]
        out.append(f"{LEG_NAMES[leg]} " + "".join("#" if v else "." for v in sig))
    return "\n".join(out)


def render_energy_chart(rows: list[dict], policy_points: list[dict] | None = None,
                        width: int = 720, height: int = 480,
                        path: str | None = None,
                        energy_key: str = "energy_per_meter_raw") -> str:
    """Energy-per-meter vs speed, one polyline per gait, policy points overlaid."""
    pts = [r for r in rows if not r.get("fell") and np.isfinite(r[energy_key])]
    policy_points = policy_points or []
    all_x = [r["v_target"] for r in pts] + [p["v"] for p in policy_points]
    all_y = [r[energy_key] for r in pts] + [p["energy_per_meter"] for p in policy_points]
    x_lo, x_hi = (min(all_x), max(all_x)) if all_x else (0.0, 1.0)
    y_lo, y_hi = 0.0, (max(all_y) * 1.1 if all_y else 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    m = 50

    def sx(v):
        return m + (width - 2 * m) * (v - x_lo) / (x_hi - x_lo)

    def sy(e):
        return height - m - (height - 2 * m) * (e - y_lo) / (y_hi - y_lo)

    gaits = sorted({r["gait"] for r in pts})
    colors = {g: _LEG_COLORS[i % 4] for i, g in enumerate(gaits)}
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 8}" font-family="monospace" font-size="13">'
        f'speed (m/s)</text>',
        f'<text x="10" y="{m - 14}" font-family="monospace" font-size="13">'
        f'energy per meter (J/m)</text>',
    ]
    for gait in gaits:
        series = sorted((r for r in pts if r["gait"] == gait),
                        key=lambda r: r["v_target"])
        path_d = " ".join(f'{sx(r["v_target"]):.1f},{sy(r[energy_key]):.1f}'
                          for r in series)
        lines.append(f'<polyline points="{path_d}" fill="none" '
                     f'stroke="{colors[gait]}" stroke-width="2"/>')
        if series:
            last = series[-1]
            lines.append(f'<text x="{sx(last["v_target"]) + 4:.1f}" '
                         f'y="{sy(last[energy_key]):.1f}" font-family="monospace" '
                         f'font-size="12" fill="{colors[gait]}">{gait}</text>')
    for p in policy_points:
        lines.append(f'<circle cx="{sx(p["v"]):.1f}" cy="{sy(p["energy_per_meter"]):.1f}" '
                     f'r="5" fill="black"/>')
        lines.append(f'<text x="{sx(p["v"]) + 7:.1f}" y="{sy(p["energy_per_meter"]) - 6:.1f}" '
                     f'font-family="monospace" font-size="11">{p.get("label", "policy")}</text>')
    for k in range(5):
        v = x_lo + (x_hi - x_lo) * k / 4
        e = y_lo + (y_hi - y_lo) * k / 4
        lines.append(f'<text x="{sx(v) - 10:.1f}" y="{height - m + 16}" '
                     f'font-family="monospace" font-size="11">{v:.2f}</text>')
        lines.append(f'<text x="{m - 44}" y="{sy(e) + 4:.1f}" '
                     f'font-family="monospace" font-size="11">{e:.0f}</text>')
    lines.append("</svg>")
    svg = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(svg)
    return svg


def sweep_flags(rows: list[dict], energy_key: str = "energy_per_meter_raw") -> dict:
    """Qualitative structure of a sweep: per-gait monotonicity and the
    walk/trot crossing inside [0.4, 1.0] m/s (absence is flagged, not fatal)."""
    flags = {"monotone": {}, "walk_trot_crossing": None}
    by_gait = {}
    for r in rows:
        if r.get("fell") or not np.isfinite(r[energy_key]):
            continue
        by_gait.setdefault(r["gait"], []).append((r["v_target"], r[energy_key]))
    for gait, series in by_gait.items():
        series.sort()
        es = [e for _, e in series]
        # nondecreasing with 5% slack for simulation noise
        flags["monotone"][gait] = bool(all(b >= a * 0.95 for a, b in zip(es, es[1:])))
    if "walk" in by_gait and "trot" in by_gait:
        crossing = _curve_crossing(by_gait["walk"], by_gait["trot"], 0.4, 1.0)
        flags["walk_trot_crossing"] = crossing
    return flags


def _curve_crossing(a: list, b: list, lo: float, hi: float):
    xs = sorted({x for x, _ in a} | {x for x, _ in b})
    xs = [x for x in xs if lo <= x <= hi]
    prev = None
    for x in xs:
        ya = np.interp(x, [p for p, _ in a], [e for _, e in a])
        yb = np.interp(x, [p for p, _ in b], [e for _, e in b])
        d = ya - yb
        if prev is not None and np.sign(d) != np.sign(prev) and d != 0:
            return float(x)
        prev = d
    return None
