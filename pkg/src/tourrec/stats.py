"""Bootstrap estimation of per-POI visit durations and photo counts.

Percentile bootstrap: resample the observations with replacement, take the
empirical quantiles of the resampled means.  The downstream point estimate
is the plain sample mean unless the conservative switch selects the upper
bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import PoiRecord, Trajectory

DEFAULT_LEVEL = 0.90
DEFAULT_RESAMPLES = 1000


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class CIEstimate:
    mean: float
    lo: float
    hi: float
    n_samples: int
    level: float
    resamples: int
    fallback: bool = False

    def point(self, conservative: bool = False) -> float:
        return self.hi if conservative else self.mean


def bootstrap_ci(
    samples,
    level: float = DEFAULT_LEVEL,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> CIEstimate:
    """Percentile-bootstrap confidence interval for the mean of ``samples``."""
    data = np.asarray(samples, dtype=float)
    if data.size == 0:
        raise StatsError("bootstrap_ci requires at least one sample")
    if not 0.0 < level < 1.0:
        raise StatsError(f"level must be in (0,1), got {level}")
    if resamples < 1:
        raise StatsError(f"resamples must be >= 1, got {resamples}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    mean = float(data.mean())
    # resampled quantiles can straddle the sample mean unevenly; clamp so the
    # invariant lo <= mean <= hi holds even for tiny resample counts
    return CIEstimate(
        mean=mean,
        lo=float(min(lo, mean)),
        hi=float(max(hi, mean)),
        n_samples=int(data.size),
        level=level,
        resamples=resamples,
    )


class PoiEstimates:
    """Per-POI duration and photo-count estimates over a training set.

    POIs present in the catalog but never visited fall back to the city-wide
    median (flagged); unknown POIs raise.  Per-POI seeds are derived as
    ``seed ^ poi_id`` so results do not depend on evaluation order.
    """

    def __init__(
        self,
        trajectories: list[Trajectory],
        catalog: dict[int, PoiRecord],
        level: float = DEFAULT_LEVEL,
        resamples: int = DEFAULT_RESAMPLES,
        seed: int = 0,
    ):
        self.catalog = catalog
        self.level = level
        self.resamples = resamples
        self.seed = seed
        self._durations: dict[int, list[float]] = {}
        self._photo_counts: dict[int, list[float]] = {}
        for t in trajectories:
            for v in t.visits:
                self._durations.setdefault(v.poi_id, []).append(float(v.duration))
                self._photo_counts.setdefault(v.poi_id, []).append(float(v.photo_count))
        all_durations = [d for ds in self._durations.values() for d in ds]
        all_counts = [c for cs in self._photo_counts.values() for c in cs]
        self._median_duration = float(np.median(all_durations)) if all_durations else 0.0
        self._median_count = float(np.median(all_counts)) if all_counts else 1.0
        self._cache: dict[tuple[str, int], CIEstimate] = {}

    def _estimate(self, metric: str, poi_id: int) -> CIEstimate:
        if poi_id not in self.catalog:
            raise StatsError(f"unknown poi_id {poi_id}")
        key = (metric, poi_id)
        if key in self._cache:
            return self._cache[key]
        samples = (self._durations if metric == "duration" else self._photo_counts).get(poi_id)
        if samples:
            est = bootstrap_ci(samples, self.level, self.resamples, seed=self.seed ^ poi_id)
        else:
            fb = self._median_duration if metric == "duration" else self._median_count
            est = CIEstimate(fb, fb, fb, 0, self.level, self.resamples, fallback=True)
        self._cache[key] = est
        return est

    def expected_duration(self, poi_id: int) -> CIEstimate:
        return self._estimate("duration", poi_id)

    def expected_photo_count(self, poi_id: int) -> CIEstimate:
        return self._estimate("photos", poi_id)

    def export_table(self) -> str:
        """Semicolon-delimited dump: ``poiID;metric;mean;lo;hi;n;fallback``."""
        lines = ["poiID;metric;mean;lo;hi;n;fallback"]
        for poi_id in sorted(self.catalog):
            for metric, est in (
                ("duration", self.expected_duration(poi_id)),
                ("photos", self.expected_photo_count(poi_id)),
            ):
                lines.append(
                    f"{poi_id};{metric};{est.mean:.6g};{est.lo:.6g};{est.hi:.6g};"
                    f"{est.n_samples};{int(est.fallback)}"
                )
        return "\n".join(lines) + "\n"
