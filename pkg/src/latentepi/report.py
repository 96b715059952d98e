"""Report outputs: prevalence curves, posterior-predictive bands, figures.

The band files hold, per day, the 2.5% and 97.5% quantiles of the signal and
admission series across simulations at the fitted parameters, the observed
value, and an inside-band flag.  Figures are rendered alongside the CSVs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .model import ModelParams, propagate_occupancy
from .simulate import AggregatedSeries, simulate_population
from .util import parallel_map


@dataclass
class BandTable:
    """95% central range of one observable across predictive simulations."""

    name: str
    lo: np.ndarray
    hi: np.ndarray
    observed: np.ndarray
    inside: np.ndarray

    @property
    def coverage(self) -> float:
        return float(self.inside.mean())


def _simulate_observables(args):
    params, covariates, seed = args
    sim = simulate_population(params, covariates, seed)
    return sim.w_total, sim.hosp.astype(float)


def predictive_bands(params: ModelParams, series: AggregatedSeries,
                     n_sims: int = 100, seed=0,
                     workers: int | None = None) -> dict[str, BandTable]:
    """Simulate n_sims cohorts at `params` and band W_total and H.

    A day counts as inside when lo <= observed <= hi (NaN observations are
    counted as outside).
    """
    streams = np.random.SeedSequence(seed).spawn(n_sims)
    tasks = [
        (params, series.covariates, int(s.generate_state(1)[0])) for s in streams
    ]
    draws = parallel_map(_simulate_observables, tasks, workers=workers)
    w_sims = np.vstack([w for w, _ in draws])
    h_sims = np.vstack([h for _, h in draws])
    out = {}
    for name, sims, observed in (
        ("W", w_sims, np.asarray(series.w_total, dtype=float)),
        ("H", h_sims, series.hosp.astype(float)),
    ):
        lo, hi = np.quantile(sims, [0.025, 0.975], axis=0)
        inside = np.isfinite(observed) & (observed >= lo) & (observed <= hi)
        out[name] = BandTable(name, lo, hi, observed, inside)
    return out


def write_band_csv(band: BandTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "lo", "hi", "observed", "inside"])
        for t in range(len(band.lo)):
            obs = band.observed[t]
            writer.writerow([
                t,
                format(band.lo[t], ".12g"),
                format(band.hi[t], ".12g"),
                "" if math.isnan(obs) else format(obs, ".12g"),
                int(band.inside[t]),
            ])


def prevalence_rows(labeled_params) -> list[dict]:
    """Occupancy curves per variant for one or more fitted parameter sets.

    labeled_params: iterable of (label, ModelParams).
    """
    rows = []
    for label, params in labeled_params:
        rho = propagate_occupancy(params)
        k = params.num_variants
        for t in range(rho.shape[0]):
            row = {"scenario": label, "day": t}
            for j in range(1, k + 1):
                row[f"occ_k{j}"] = rho[t, j]
            row["total"] = float(rho[t, 1:].sum())
            rows.append(row)
    return rows


def write_prevalence_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no prevalence rows to write")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({
                k: format(v, ".10g") if isinstance(v, float) else v
                for k, v in row.items()
            })


def render_band_figure(bands: dict[str, BandTable], path) -> None:
    """Observed series against the predictive band, one panel per stream."""
    fig, axes = plt.subplots(len(bands), 1, figsize=(9, 3.2 * len(bands)),
                             sharex=True)
    if len(bands) == 1:
        axes = [axes]
    labels = {"W": "wastewater signal", "H": "daily admissions"}
    for ax, (name, band) in zip(axes, bands.items()):
        days = np.arange(len(band.lo))
        ax.fill_between(days, band.lo, band.hi, alpha=0.3, color="tab:blue",
                        label="95% simulation band")
        ax.plot(days, band.observed, color="black", lw=1.0, label="observed")
        ax.set_ylabel(labels.get(name, name))
        ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("day")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_prevalence_figure(rows: list[dict], path) -> None:
    """Per-variant prevalence curves, one line style per fitted scenario."""
    scenarios = sorted({r["scenario"] for r in rows})
    variants = [key for key in rows[0] if key.startswith("occ_k")]
    fig, ax = plt.subplots(figsize=(9, 4))
    styles = ["-", "--", ":", "-."]
    for si, scen in enumerate(scenarios):
        sub = [r for r in rows if r["scenario"] == scen]
        days = [r["day"] for r in sub]
        for vi, key in enumerate(variants):
            ax.plot(days, [r[key] for r in sub], styles[si % len(styles)],
                    color=f"C{vi}",
                    label=f"{scen} variant {vi + 1}" if si < 4 else None)
    ax.set_xlabel("day")
    ax.set_ylabel("occupancy probability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
