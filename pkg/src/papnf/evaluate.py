"""Split-level evaluation: parallel sampling, reports, CSV and SVG artifacts.

Window sampling is parallelized with a thread pool capped by PAPNF_THREADS,
but every window draws from its own seed-derived stream and results are
reduced in window order, so reports are identical for any worker count.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from papnf.flow import ForecastEnsemble, sample_forecasts
from papnf.metrics import (
    MetricsReport,
    build_report,
    gaussian_residual,
    persistence,
    seasonal_naive,
)
from papnf.seeding import substream

__all__ = [
    "DEFAULT_LEVELS",
    "QUANTILE_COLUMNS",
    "thread_count",
    "evaluate_split",
    "baseline_ensembles",
    "baseline_report",
    "write_quantiles_csv",
    "write_ensemble_csv",
    "write_fan_chart_svg",
]

DEFAULT_LEVELS = (0.8, 0.9, 0.95)
QUANTILE_COLUMNS = (0.05, 0.10, 0.50, 0.90, 0.95)
BASELINE_NAMES = ("persistence", "seasonal_naive", "gaussian_residual")


def thread_count() -> int:
    """Worker cap from PAPNF_THREADS; defaults to a small fixed pool."""
    raw = os.environ.get("PAPNF_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError as err:
            raise ValueError(f"PAPNF_THREADS must be an integer, got {raw!r}") from err
        return max(1, n)
    return min(4, os.cpu_count() or 1)


def evaluate_split(
    model,
    windows,
    n_samples: int = 100,
    seed: int = 0,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
    fair: bool = False,
) -> tuple[MetricsReport, list[ForecastEnsemble]]:
    """Sample every window and aggregate one MetricsReport for the split.

    Each window's ensemble comes from substream(seed, "sample", index), so
    the result does not depend on the thread pool's scheduling.
    """
    if not windows:
        raise ValueError("evaluate_split over an empty split")

    def job(window) -> ForecastEnsemble:
        rng = substream(seed, "sample", int(window.index))
        return sample_forecasts(window, model, n_samples, rng)

    workers = thread_count()
    if workers == 1:
        ensembles = [job(w) for w in windows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ensembles = list(pool.map(job, windows))  # map preserves order
    report = build_report(
        [e.samples for e in ensembles],
        [w.y for w in windows],
        [persistence(w) for w in windows],
        levels=levels,
        fair=fair,
    )
    return report, ensembles


def baseline_ensembles(
    windows, name: str, n_samples: int = 100, seed: int = 0, period: int | None = None
) -> list[ForecastEnsemble]:
    """Per-window ensembles for one named baseline.

    Deterministic baselines are wrapped as two identical rows: the energy
    CRPS of that degenerate ensemble is exactly the point forecast's MAE,
    and its intervals have zero width, which is the honest representation.
    """
    if name not in BASELINE_NAMES:
        raise ValueError(f"unknown baseline {name!r}, expected one of {BASELINE_NAMES}")
    out = []
    for w in windows:
        if name == "persistence":
            pred = persistence(w)
            samples = np.stack([pred, pred])
        elif name == "seasonal_naive":
            if period is None:
                raise ValueError("seasonal_naive needs a period")
            pred = seasonal_naive(w, period)
            samples = np.stack([pred, pred])
        else:
            rng = substream(seed, "baseline", name, int(w.index))
            samples = gaussian_residual(w, n_samples, rng)
        out.append(ForecastEnsemble(window_index=int(w.index), samples=samples))
    return out


def baseline_report(
    windows,
    name: str,
    n_samples: int = 100,
    seed: int = 0,
    period: int | None = None,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
) -> MetricsReport:
    """MetricsReport for one baseline through the same aggregation pipeline."""
    ensembles = baseline_ensembles(windows, name, n_samples, seed, period)
    return build_report(
        [e.samples for e in ensembles],
        [w.y for w in windows],
        [persistence(w) for w in windows],
        levels=levels,
    )


# -- CSV artifacts ----------------------------------------------------------------


def write_quantiles_csv(path: str, windows, ensembles) -> None:
    """Per-point quantile table: window_id, step, channel, q05..q95, truth."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_id", "step", "channel"]
            + [f"q{int(q * 100):02d}" for q in QUANTILE_COLUMNS]
            + ["truth"]
        )
        for w, ens in zip(windows, ensembles):
            qs = [ens.quantile(q) for q in QUANTILE_COLUMNS]
            h, c = w.y.shape
            for step in range(h):
                for ch in range(c):
                    writer.writerow(
                        [int(w.index), step, ch]
                        + [repr(float(q[step, ch])) for q in qs]
                        + [repr(float(w.y[step, ch]))]
                    )


def write_ensemble_csv(path: str, windows, ensembles) -> None:
    """Raw sampled trajectories: window_id, sample_id, step, channel, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_id", "sample_id", "step", "channel", "value"])
        for w, ens in zip(windows, ensembles):
            s, h, c = ens.samples.shape
            for sample_id in range(s):
                for step in range(h):
                    for ch in range(c):
                        writer.writerow(
                            [
                                int(w.index),
                                sample_id,
                                step,
                                ch,
                                repr(float(ens.samples[sample_id, step, ch])),
                            ]
                        )


# -- SVG fan chart ----------------------------------------------------------------

_SVG_W = 800
_SVG_H = 400
_MARGIN = 40
_BAND_STYLE = {0.95: "#c6dbef", 0.9: "#9ecae1", 0.8: "#6baed6"}


def _scale(xs, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return [out_lo + (x - lo) / span * (out_hi - out_lo) for x in xs]


def _polyline(xs, ys, stroke, width, dash="") -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
        f'stroke-width="{width}"{extra}/>'
    )


def write_fan_chart_svg(path: str, window, ensemble, channel: int = 0) -> None:
    """Static fan chart: look-back tail, quantile bands, median, truth.

    Deterministic output: fixed canvas, coordinates rounded to 2 decimals,
    no timestamps. Bands show the central 80/90/95% intervals.
    """
    h = window.y.shape[0]
    tail = min(window.x.shape[0], 2 * h)
    hist = window.x[-tail:, channel]
    truth = window.y[:, channel]
    bands = {}
    for level in sorted(_BAND_STYLE, reverse=True):
        lo, hi = ensemble.interval(level)
        bands[level] = (lo[:, channel], hi[:, channel])
    med = ensemble.quantile(0.5)[:, channel]

    all_vals = np.concatenate(
        [hist, truth, med] + [np.concatenate(pair) for pair in bands.values()]
    )
    v_lo = float(all_vals.min())
    v_hi = float(all_vals.max())
    pad = 0.05 * (v_hi - v_lo or 1.0)
    v_lo -= pad
    v_hi += pad

    t_hist = list(range(-tail + 1, 1))
    t_fut = list(range(1, h + 1))
    t_lo, t_hi = -tail + 1, h
    x_left, x_right = _MARGIN, _SVG_W - _MARGIN
    y_top, y_bot = _MARGIN, _SVG_H - _MARGIN

    def to_xy(ts, vs):
        xs = _scale(ts, t_lo, t_hi, x_left, x_right)
        ys = _scale(vs, v_lo, v_hi, y_bot, y_top)  # y axis points down
        return xs, ys

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
    ]
    # forecast-start divider
    x0 = _scale([0.5], t_lo, t_hi, x_left, x_right)[0]
    parts.append(
        f'<line x1="{x0:.2f}" y1="{y_top}" x2="{x0:.2f}" y2="{y_bot}" '
        f'stroke="#999999" stroke-width="1" stroke-dasharray="4 3"/>'
    )
    for level in sorted(bands, reverse=True):  # widest band painted first
        lo_v, hi_v = bands[level]
        xs_u, ys_u = to_xy(t_fut, hi_v)
        xs_l, ys_l = to_xy(t_fut[::-1], lo_v[::-1])
        pts = " ".join(
            f"{x:.2f},{y:.2f}" for x, y in zip(xs_u + xs_l, ys_u + ys_l)
        )
        parts.append(
            f'<polygon points="{pts}" fill="{_BAND_STYLE[level]}" '
            f'fill-opacity="0.8" stroke="none"/>'
        )
    xs, ys = to_xy(t_hist, hist)
    parts.append(_polyline(xs, ys, "#444444", 1.5))
    xs, ys = to_xy(t_fut, med)
    parts.append(_polyline(xs, ys, "#08519c", 2))
    xs, ys = to_xy(t_fut, truth)
    parts.append(_polyline(xs, ys, "#d62728", 1.5, dash="5 3"))
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
