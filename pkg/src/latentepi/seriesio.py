"""CSV exchange format for aggregated series plus parameter serialization.

Column layout: ``day,H,S_true,S_star,L,W_total,W_k1..W_kK,C,x1..xp`` on the
way out; ingestion requires ``day,H,S_star`` and either ``W_total`` or the
per-variant ``W_k*`` columns, with ``S_true``, ``L``, ``C`` and covariate
columns optional.  Empty signal cells mean missing measurements.
"""

from __future__ import annotations

import csv
import math
import re

import numpy as np

from .model import (
    HazardParams,
    InfectionParams,
    ModelParams,
    SheddingParams,
)
from .simulate import AggregatedSeries


class SchemaError(ValueError):
    """Malformed series file; the message names the first offending cell."""


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isnan(value):
        return ""
    return format(float(value), ".12g")


def write_series_csv(series: AggregatedSeries, path) -> None:
    header = ["day", "H"]
    if series.s_true is not None:
        header.append("S_true")
    header.append("S_star")
    if series.complete is not None:
        header.append("L")
    header.append("W_total")
    k = series.num_variants or 0
    header += [f"W_k{j}" for j in range(1, k + 1)]
    header.append("C")
    p = series.covariates.shape[1]
    header += [f"x{j}" for j in range(1, p + 1)]

    cum = series.cumulative_admissions
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(series.num_days):
            row = [t, int(series.hosp[t])]
            if series.s_true is not None:
                row.append(int(series.s_true[t]))
            row.append(int(series.s_star[t]))
            if series.complete is not None:
                row.append(bool(series.complete[t]))
            row.append(series.w_total[t])
            for j in range(k):
                row.append(series.w_by_variant[t, j])
            row.append(int(cum[t]))
            for j in range(p):
                row.append(series.covariates[t, j])
            writer.writerow(_fmt(v) for v in row)


def _parse_count(text: str, row: int, col: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"row {row}, column {col}: {text!r} is not a number")
    if not value.is_integer():
        raise SchemaError(f"row {row}, column {col}: count {text!r} is not an integer")
    if value < 0:
        raise SchemaError(f"row {row}, column {col}: negative count {text!r}")
    return int(value)


def _parse_signal(text: str, row: int, col: str) -> float:
    if text == "":
        return float("nan")
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"row {row}, column {col}: {text!r} is not a number")
    if value < 0:
        raise SchemaError(f"row {row}, column {col}: negative signal {text!r}")
    return value


def _parse_flag(text: str, row: int, col: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true"):
        return True
    if lowered in ("0", "false"):
        return False
    raise SchemaError(f"row {row}, column {col}: {text!r} is not a boolean")


def read_series_csv(path, population: int | None = None) -> AggregatedSeries:
    """Parse and validate a surveillance CSV.

    Rejects non-contiguous days, negative counts, reported cases above the
    population size (when a size is given), and any unrecognized column; the
    error message pins the first offending row and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file")
        rows = [r for r in reader if r]

    known = {"day", "H", "S_true", "S_star", "L", "W_total", "C"}
    w_cols = sorted(
        (c for c in header if re.fullmatch(r"W_k\d+", c)),
        key=lambda c: int(c[3:]),
    )
    x_cols = sorted(
        (c for c in header if re.fullmatch(r"x\d+", c)), key=lambda c: int(c[1:])
    )
    for col in header:
        if col not in known and col not in w_cols and col not in x_cols:
            raise SchemaError(f"unrecognized column {col!r}")
    if len(set(header)) != len(header):
        raise SchemaError("duplicated column in header")
    for required in ("day", "H", "S_star"):
        if required not in header:
            raise SchemaError(f"missing required column {required!r}")
    if "W_total" not in header and not w_cols:
        raise SchemaError("missing signal columns: need W_total or W_k1..W_kK")
    if w_cols and [int(c[3:]) for c in w_cols] != list(range(1, len(w_cols) + 1)):
        raise SchemaError("per-variant signal columns must be W_k1..W_kK")
    if x_cols and [int(c[1:]) for c in x_cols] != list(range(1, len(x_cols) + 1)):
        raise SchemaError("covariate columns must be x1..xp")
    if not rows:
        raise SchemaError("no data rows")

    idx = {c: i for i, c in enumerate(header)}
    t_days = len(rows)
    hosp = np.zeros(t_days, dtype=np.int64)
    s_star = np.zeros(t_days, dtype=np.int64)
    s_true = np.zeros(t_days, dtype=np.int64) if "S_true" in idx else None
    complete = np.zeros(t_days, dtype=bool) if "L" in idx else None
    w_total = np.zeros(t_days)
    w_by_variant = np.zeros((t_days, len(w_cols))) if w_cols else None
    covariates = np.zeros((t_days, len(x_cols)))
    c_col = np.zeros(t_days, dtype=np.int64) if "C" in idx else None

    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based file line, after the header
        if len(row) != len(header):
            raise SchemaError(f"row {rownum}: expected {len(header)} cells, got {len(row)}")
        day = _parse_count(row[idx["day"]], rownum, "day")
        if day != i:
            raise SchemaError(
                f"row {rownum}, column day: days must be contiguous from 0, got {day}"
            )
        hosp[i] = _parse_count(row[idx["H"]], rownum, "H")
        s_star[i] = _parse_count(row[idx["S_star"]], rownum, "S_star")
        if s_true is not None:
            s_true[i] = _parse_count(row[idx["S_true"]], rownum, "S_true")
        if complete is not None:
            complete[i] = _parse_flag(row[idx["L"]], rownum, "L")
        if c_col is not None:
            c_col[i] = _parse_count(row[idx["C"]], rownum, "C")
        if w_by_variant is not None:
            for j, col in enumerate(w_cols):
                w_by_variant[i, j] = _parse_signal(row[idx[col]], rownum, col)
            w_total[i] = np.nansum(w_by_variant[i]) if np.isfinite(
                w_by_variant[i]
            ).any() else float("nan")
            if "W_total" in idx and row[idx["W_total"]] != "":
                w_total[i] = _parse_signal(row[idx["W_total"]], rownum, "W_total")
        else:
            w_total[i] = _parse_signal(row[idx["W_total"]], rownum, "W_total")
        for j, col in enumerate(x_cols):
            text = row[idx[col]]
            if text == "":
                raise SchemaError(f"row {rownum}, column {col}: empty covariate cell")
            covariates[i, j] = float(text)
        if population is not None and s_star[i] > population:
            raise SchemaError(
                f"row {rownum}, column S_star: {s_star[i]} exceeds the population "
                f"size {population}"
            )

    if s_true is not None and np.any(s_star > s_true):
        bad = int(np.nonzero(s_star > s_true)[0][0])
        raise SchemaError(
            f"row {bad + 2}, column S_star: reported cases exceed true cases"
        )
    if c_col is not None:
        expect = np.cumsum(hosp)
        if np.any(c_col != expect):
            bad = int(np.nonzero(c_col != expect)[0][0])
            raise SchemaError(
                f"row {bad + 2}, column C: cumulative admissions disagree with H"
            )
    return AggregatedSeries(
        hosp=hosp,
        w_total=w_total,
        s_star=s_star,
        covariates=covariates,
        w_by_variant=w_by_variant,
        s_true=s_true,
        complete=complete,
    )


def model_params_to_dict(params: ModelParams) -> dict:
    return {
        "population": params.population,
        "horizon": params.horizon,
        "time_step": params.time_step,
        "infection": {
            "amplitudes": [list(a) for a in params.infection.amplitudes],
            "centers": [list(b) for b in params.infection.centers],
            "widths": [list(c) for c in params.infection.widths],
            "recovery": list(params.infection.recovery),
        },
        "shedding": {
            "shape": list(params.shedding.shape),
            "intercept": list(params.shedding.intercept),
            "coefs": [list(c) for c in params.shedding.coefs],
        },
        "hazard": {
            "intercept": list(params.hazard.intercept),
            "coefs": [list(c) for c in params.hazard.coefs],
        },
    }


def model_params_from_dict(data: dict) -> ModelParams:
    return ModelParams(
        infection=InfectionParams(
            amplitudes=data["infection"]["amplitudes"],
            centers=data["infection"]["centers"],
            widths=data["infection"]["widths"],
            recovery=data["infection"]["recovery"],
        ),
        shedding=SheddingParams(
            shape=data["shedding"]["shape"],
            intercept=data["shedding"]["intercept"],
            coefs=data["shedding"]["coefs"],
        ),
        hazard=HazardParams(
            intercept=data["hazard"]["intercept"],
            coefs=data["hazard"]["coefs"],
        ),
        population=data["population"],
        horizon=data["horizon"],
        time_step=data["time_step"],
    )
