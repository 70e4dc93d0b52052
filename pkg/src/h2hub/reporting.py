"""Tidy result tables, artifact files, run manifests and run comparison.

Every artifact is a long table whose last two columns are ``metric`` and
``value``; the leading columns identify the series (scenario, period, regime,
type, ...).  Tables are written as CSV or JSON records and read back
losslessly: floats are written with ``repr`` precision.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .contracts import Interval
from .model import PRODUCERS, TYPES
from .solvers import Regime

MANIFEST = "manifest.json"

ARTIFACTS = {
    "penetration": ("scenario", "period", "year", "regime", "metric", "value"),
    "market_shares": ("scenario", "period", "year", "regime", "type", "metric", "value"),
    "prices": ("scenario", "period", "year", "regime", "type", "producer", "metric", "value"),
    "profits": ("scenario", "period", "year", "regime", "type", "member", "metric", "value"),
    "commission_sweep": ("delta", "type", "member", "metric", "value"),
    "lump_sum_feasibility": ("period", "year", "type", "omega", "omega_prime", "metric", "value"),
    "bargaining_cases": ("case", "z_shp", "z_chpe", "z_hub", "period", "year", "type", "metric", "value"),
}

KEY_COLUMNS = {name: cols[:-1] for name, cols in ARTIFACTS.items()}


def _num(v):
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return float(v)
    return float(v)


# -- table builders ----------------------------------------------------------------------


def penetration_rows(runs: dict) -> list[dict]:
    rows = []
    for name, run in runs.items():
        years = run.calibration.years
        for regime, path in run.paths.items():
            for t, r in enumerate(path.penetration):
                rows.append(dict(scenario=name, period=t, year=years[t], regime=regime.value, metric="r", value=r))
            if path.terminal is not None:
                t = len(path.penetration)
                rows.append(
                    dict(scenario=name, period=t, year=years[0] + t, regime=regime.value, metric="r", value=path.terminal)
                )
    return rows


def share_rows(runs: dict) -> list[dict]:
    rows = []
    for name, run in runs.items():
        years = run.calibration.years
        for regime, path in run.paths.items():
            for t, out in enumerate(path.outcomes):
                shares = out.market_shares
                for i in TYPES:
                    base = dict(scenario=name, period=t, year=years[t], regime=regime.value, type=i.label)
                    rows.append(dict(base, metric="share", value=shares[i]))
                    rows.append(dict(base, metric="quantity", value=out.quantities[i].sum()))
    return rows


def price_rows(runs: dict) -> list[dict]:
    rows = []
    for name, run in runs.items():
        years = run.calibration.years
        for regime, path in run.paths.items():
            for t, out in enumerate(path.outcomes):
                for sol in out.solutions:
                    if sol is None:
                        continue
                    base = dict(scenario=name, period=t, year=years[t], regime=regime.value, type=sol.type.label)
                    for j in PRODUCERS:
                        if sol.price[j] is None:
                            continue
                        rows.append(dict(base, producer=j.label, metric="price", value=sol.price[j]))
                        rows.append(dict(base, producer=j.label, metric="quantity", value=sol.quantity[j]))
                    rows.append(dict(base, producer="", metric="average_price", value=sol.average_price))
    return rows


def profit_rows(runs: dict) -> list[dict]:
    rows = []
    for name, run in runs.items():
        years = run.calibration.years
        for regime, path in run.paths.items():
            for t, out in enumerate(path.outcomes):
                for i in TYPES:
                    for member, val in out.profits[i].as_dict().items():
                        rows.append(
                            dict(
                                scenario=name,
                                period=t,
                                year=years[t],
                                regime=regime.value,
                                type=i.label,
                                member=member,
                                metric="profit",
                                value=val,
                            )
                        )
                rows.append(
                    dict(
                        scenario=name, period=t, year=years[t], regime=regime.value, type="", member="", metric="y", value=out.y
                    )
                )
    return rows


def commission_rows(sweep) -> list[dict]:
    rows = []
    for p in sweep.points:
        for member, val in p.profits.as_dict().items():
            rows.append(dict(delta=p.delta, type="", member=member, metric="profit", value=val))
        rows.append(dict(delta=p.delta, type="", member="HUB", metric="commission_income", value=p.commission))
        rows.append(dict(delta=p.delta, type="", member="", metric="feasible", value=p.feasible))
        for i in TYPES:
            rows.append(dict(delta=p.delta, type=i.label, member="", metric="average_price", value=p.prices[i]))
            rows.append(dict(delta=p.delta, type=i.label, member="", metric="share", value=p.shares[i]))
    return rows


def feasibility_rows(outcomes, years, grid_points: int = 11) -> list[dict]:
    """Contract coefficients, lump-sum ranges and a feasibility grid per period and type.

    The grid spans the union of both ranges padded by a quarter of their
    width, so the boundary of the feasible triangle is visible.
    """
    rows = []
    for out in outcomes:
        t = out.state.t
        for term in out.contract.terms:
            if term is None:
                continue
            base = dict(period=t, year=years[t], type=term.type.label, omega=None, omega_prime=None)
            for metric, val in (
                ("phi", term.phi),
                ("phi_prime", term.phi_prime),
                ("omega", term.omega),
                ("omega_prime", term.omega_prime),
                ("omega_lo", term.omega_bounds.lo),
                ("omega_hi", term.omega_bounds.hi),
                ("omega_prime_lo", term.omega_prime_bounds.lo),
                ("omega_prime_hi", term.omega_prime_bounds.hi),
                ("surplus", term.surplus),
            ):
                rows.append(dict(base, metric=metric, value=val))
            w_axis = _axis(term.omega_bounds, grid_points)
            wp_axis = _axis(term.omega_prime_bounds, grid_points)
            # feasible iff each member keeps at least its Cournot profit:
            # omega <= omega_hi, omega_prime <= omega_prime_hi, omega + omega_prime >= need
            need = term.omega_bounds.lo + term.omega_prime_bounds.hi
            for w in w_axis:
                for wp in wp_axis:
                    ok = w <= term.omega_bounds.hi and wp <= term.omega_prime_bounds.hi and w + wp >= need
                    rows.append(dict(base, omega=w, omega_prime=wp, metric="feasible", value=ok))
    return rows


def _axis(iv: Interval, n: int) -> list[float]:
    lo, hi = min(iv.lo, iv.hi), max(iv.lo, iv.hi)
    pad = 0.25 * (hi - lo) if hi > lo else 1.0
    return [float(v) for v in np.linspace(lo - pad, hi + pad, n)]


def bargaining_rows(rows_in, years) -> list[dict]:
    rows = []
    for r in rows_in:
        base = dict(
            case=r.case, z_shp=r.powers.z_shp, z_chpe=r.powers.z_chpe, z_hub=r.powers.z_hub, period=r.t, year=years[r.t], type=r.type
        )
        rows.append(dict(base, metric="omega", value=r.omega))
        rows.append(dict(base, metric="omega_prime", value=r.omega_prime))
        for member, val in r.profits.as_dict().items():
            rows.append(dict(base, metric=f"profit_{member}", value=val))
        for member, val in r.cournot.as_dict().items():
            rows.append(dict(base, metric=f"cournot_{member}", value=val))
        rows.append(dict(base, metric="feasible", value=r.feasible))
        rows.append(dict(base, metric="participation", value=r.participation))
    return rows


# -- serialisation -----------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return float(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def render_table(name: str, rows: list[dict], fmt: str) -> str:
    cols = ARTIFACTS[name]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in cols])
        return buf.getvalue()
    if fmt == "json":
        records = [{c: _jsonable(row.get(c)) for c in cols} for row in rows]
        return json.dumps({"artifact": name, "columns": list(cols), "rows": records}, indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


_INT_COLUMNS = {"period", "year", "case"}
_FLOAT_COLUMNS = {"value", "delta", "omega", "omega_prime", "z_shp", "z_chpe", "z_hub"}


def parse_table(text: str, fmt: str) -> tuple[str | None, list[dict]]:
    """Read a table written by ``render_table``; returns (artifact name or None, rows)."""
    if fmt == "json":
        data = json.loads(text)
        rows = []
        for rec in data["rows"]:
            row = {}
            for k, v in rec.items():
                row[k] = float(v) if k in _FLOAT_COLUMNS and isinstance(v, str) else v
            rows.append(row)
        return data["artifact"], rows
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        row = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None if k in _FLOAT_COLUMNS | _INT_COLUMNS else ""
            elif k in _INT_COLUMNS:
                row[k] = int(v)
            elif k in _FLOAT_COLUMNS:
                row[k] = float(v)
            else:
                row[k] = v
        rows.append(row)
    return None, rows


def write_artifacts(out_dir, tables: dict, fmt: str, manifest: dict) -> dict:
    """Write each table plus a manifest holding file digests; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(tables):
        text = render_table(name, tables[name], fmt)
        fname = f"{name}.{fmt}"
        (out_dir / fname).write_text(text)
        files[name] = {"file": fname, "rows": len(tables[name]), "sha256": hashlib.sha256(text.encode()).hexdigest()}
    manifest = dict(manifest, format=fmt, artifacts=files)
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_run(path) -> tuple[dict, dict]:
    """Load a run directory: (manifest, {artifact: rows})."""
    path = Path(path)
    manifest_file = path / MANIFEST
    if not manifest_file.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {path}")
    manifest = json.loads(manifest_file.read_text())
    fmt = manifest["format"]
    tables = {}
    for name, info in manifest["artifacts"].items():
        _, rows = parse_table((path / info["file"]).read_text(), fmt)
        tables[name] = rows
    return manifest, tables


# -- comparison --------------------------------------------------------------------------


class IncompatibleRunsError(ValueError):
    pass


def _series(rows, keys):
    out = {}
    for row in rows:
        key = tuple(row.get(k) for k in keys)
        out[key] = row.get("value")
    return out


def diff_tables(a: dict, b: dict, ignore=("scenario",)) -> dict:
    """Compare artifacts present in both runs, metric by metric.

    Rows are matched on their identifying columns (ignoring ``scenario`` so a
    scenario run can be compared with the baseline).  Returns per artifact and
    metric the maximum absolute and relative deltas, plus per-series deltas
    for the last period when the artifact is period-indexed.
    """
    report = {}
    for name in sorted(set(a) & set(b)):
        keys = [k for k in KEY_COLUMNS[name] if k not in ignore]
        sa, sb = _series(a[name], keys), _series(b[name], keys)
        if set(sa) != set(sb):
            raise IncompatibleRunsError(f"{name}: series keys differ ({len(sa)} vs {len(sb)} rows)")
        by_metric = {}
        midx = keys.index("metric")
        for key in sorted(sa, key=lambda k: tuple("" if v is None else str(v) for v in k)):
            va, vb = sa[key], sb[key]
            if va is None or vb is None:
                continue
            d = vb - va
            rel = abs(d) / abs(va) if va != 0 else (0.0 if d == 0 else math.inf)
            m = by_metric.setdefault(key[midx], {"max_abs": 0.0, "max_rel": 0.0, "n": 0})
            m["max_abs"] = max(m["max_abs"], abs(d))
            m["max_rel"] = max(m["max_rel"], rel)
            m["n"] += 1
        report[name] = by_metric
    return report


def final_period_deltas(a: dict, b: dict, artifact: str = "market_shares", metric: str = "share") -> dict:
    """Per (regime, type) change of a metric in the last period: b minus a."""
    out = {}
    for tables, sign in ((a, -1.0), (b, 1.0)):
        rows = [r for r in tables[artifact] if r["metric"] == metric]
        last = max(r["period"] for r in rows)
        for r in rows:
            if r["period"] == last:
                key = (r["regime"], r.get("type", ""))
                out[key] = out.get(key, 0.0) + sign * r["value"]
    return out


def diff_runs(a, b) -> dict:
    """Structured comparison of two run directories (see ``diff_tables``)."""
    ma, ta = read_run(a)
    mb, tb = read_run(b)
    report = {
        "a": str(a),
        "b": str(b),
        "calibration_hash": {"a": ma.get("calibration_hash"), "b": mb.get("calibration_hash")},
        "artifacts": diff_tables(ta, tb),
    }
    if "market_shares" in ta and "market_shares" in tb:
        report["final_share_delta"] = {
            f"{reg}/{typ}": v for (reg, typ), v in sorted(final_period_deltas(ta, tb).items())
        }
    return report
