"""Regenerate src/jointmarket/data/reference.toml.

Micro-turbine and user coefficients are the published case values. The PV
forecasts and load ceilings are a synthetic day shape because the published
curves are only available as a figure:

* PV: peak * sin(pi * (t - 6) / 14) ** 1.5 for 6 < t < 20, zero otherwise.
* load ceiling: a morning bump at 08:00 and a larger evening bump at 19:00 on
  a flat base, scaled so the daily maximum equals the user's peak.
"""

import sys
from pathlib import Path

import numpy as np
import tomli_w

HOURS = 24
PV_PEAKS = {"PV1": 260.0, "PV2": 220.0}
LOAD_PEAKS = {"U1": 220.0, "U2": 200.0, "U3": 170.0}


def pv_shape(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 6) & (t < 20)
    return np.where(inside, np.sin(np.pi * (t - 6) / 14).clip(0) ** 1.5, 0.0)


def load_shape(t):
    t = np.asarray(t, dtype=float)
    s = 0.45 + 0.30 * np.exp(-((t - 8) ** 2) / (2 * 1.5**2)) + 0.55 * np.exp(-((t - 19) ** 2) / (2 * 2.0**2))
    return s / s.max()


def reference_dict():
    t = np.arange(HOURS)
    mts = [("MT1", 2.01, 0.045, 0.00021, 260.0, 0.870),
           ("MT2", 2.01, 0.050, 0.00021, 270.0, 0.935),
           ("MT3", 2.03, 0.052, 0.00019, 220.0, 0.910)]
    users = [("U1", 0.0870, -0.00014), ("U2", 0.0765, -0.00014), ("U3", 0.0600, -0.000125)]
    return {
        "name": "reference",
        "hours": HOURS,
        "prices": {"r_e": 0.06, "r_c_sell": 0.003, "r_c_buy": 0.009},
        "cg": [{"name": n, "c0": c0, "c1": c1, "c2": c2, "p_min": 0.0, "p_max": pm, "sigma": s,
                "epsilon": 0.05} for n, c0, c1, c2, pm, s in mts],
        "user": [{"name": n, "d1": d1, "d2": d2,
                  "p_max": [round(float(v), 2) for v in LOAD_PEAKS[n] * load_shape(t)],
                  "p_min_ratio": 0.4, "psi0": 1800.0, "epsilon": 0.05} for n, d1, d2 in users],
        "res": [{"name": n, "forecast": [round(float(v), 2) for v in peak * pv_shape(t)],
                 "sigma_rel": 0.1, "epsilon": 0.05} for n, peak in PV_PEAKS.items()],
    }


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "jointmarket" / "data" / "reference.toml"
    if len(sys.argv) > 1:
        out = Path(sys.argv[1])
    out.write_text(tomli_w.dumps(reference_dict()))
    print(f"wrote {out}")
