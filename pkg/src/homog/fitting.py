"""Log-log least-squares rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class RateFit:
    slope: float | None
    intercept: float | None
    interval: tuple | None
    n_used: int
    excluded: tuple = ()
    flagged: tuple = ()
    notices: tuple = field(default=())

    @property
    def floor_limited(self):
        return self.slope is None

    def to_dict(self):
        return {
            "slope": self.slope, "intercept": self.intercept,
            "interval": list(self.interval) if self.interval else None,
            "n_used": self.n_used, "excluded": list(self.excluded), "flagged": list(self.flagged),
            "floor_limited": self.floor_limited, "notices": list(self.notices),
        }


def _ols(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, resid


def fit_rate(pairs, floor=1e-12):
    """Ordinary least squares of log(error) on log(eps).

    Rows with error at or below ``floor`` are excluded (floor-limited). Rows
    whose residual exceeds three times the RMS residual are flagged as
    preasymptotic and the fit is repeated without them. The interval is the
    95% Student-t interval of the slope (None with fewer than three rows).
    """
    pairs = [(float(e), float(v)) for e, v in pairs]
    if len(pairs) < 3:
        raise ValueError("a rate fit needs at least three (eps, error) pairs")
    if any(e <= 0 for e, _ in pairs):
        raise ValueError("eps values must be positive")
    notices = []
    excluded = tuple(i for i, (_, v) in enumerate(pairs) if not v > floor)
    if excluded:
        notices.append(f"{len(excluded)} row(s) at or below the floor {floor:g} excluded")
    used = [i for i in range(len(pairs)) if i not in excluded]
    if len(used) < 2:
        return RateFit(None, None, None, len(used), excluded, (), tuple(notices + ["floor-limited"]))
    x = np.log([pairs[i][0] for i in used])
    y = np.log([pairs[i][1] for i in used])
    coef, resid = _ols(x, y)
    flagged = ()
    rms = math.sqrt(float(np.mean(resid ** 2)))
    if len(used) > 3 and rms > 0:
        bad = [used[k] for k in range(len(used)) if abs(resid[k]) > 3.0 * rms]
        if bad and len(used) - len(bad) >= 3:
            flagged = tuple(bad)
            notices.append(f"preasymptotic rows {list(bad)} left out of the fit")
            used = [i for i in used if i not in bad]
            x = np.log([pairs[i][0] for i in used])
            y = np.log([pairs[i][1] for i in used])
            coef, resid = _ols(x, y)
    slope, intercept = float(coef[0]), float(coef[1])
    interval = None
    k = len(used)
    if k >= 3:
        s2 = float(np.sum(resid ** 2)) / (k - 2)
        sxx = float(np.sum((x - x.mean()) ** 2))
        half = float(stats.t.ppf(0.975, k - 2)) * math.sqrt(s2 / sxx)
        interval = (slope - half, slope + half)
    return RateFit(slope, intercept, interval, k, excluded, flagged, tuple(notices))
