# dev-only tuning harness, not part of the package
import sys
import numpy as np
from dataclasses import replace
from gaitlab.baseline_controller import run_gait_episode, CONTROLLER_PRESETS
from gaitlab.analysis import ContactTrace, gait_metrics

overrides = {}
for arg in sys.argv[1:]:
    k, v = arg.split("=")
    overrides[k] = float(v)

grid = [('walk', [0.1, 0.2, 0.375, 0.5, 0.7]),
        ('trot', [0.5, 0.7, 0.9, 1.2, 1.5]),
        ('bounce', [1.0, 1.3, 1.5, 1.8, 2.0])]
ok = 0
n = 0
for gait, vs in grid:
    cfg = CONTROLLER_PRESETS[gait]
    feats = {k: v for k, v in overrides.items() if hasattr(cfg, k)}
    cfg = replace(cfg, **feats)
    for v in vs:
        log = run_gait_episode(gait, v, duration=8.0, cfg=cfg)
        label = gait_metrics(ContactTrace(log.sample_rate, log.contacts)).gait_label if len(log.contacts) > 200 else '-'
        n += 1
        good = (not log.fell) and log.realized_speed > 0.3 * v
        ok += good
        print('%6s v=%.3f fell=%d real=%+.3f (%.0f%%) epm=%7.1f fl=%.2f %s %s' % (
            gait, v, log.fell, log.realized_speed, 100 * log.realized_speed / v,
            log.energy_per_meter_raw, log.flight_fraction, label, 'OK' if good else ''))
print('ok: %d/%d' % (ok, n))
