"""Human-readable summary of a run directory against the target tolerances.

The report reads only the manifest and the CSV files it records.  Every
recorded file is checksum-verified before use, and files carrying an
unknown schema version are refused.  Metrics whose inputs are absent
(stage not run, or a quantity that needs an ensemble of runs) are marked
``not run`` so partial runs still report cleanly.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .config import STAGES as STAGE_ORDER
from .io import SchemaError, read_csv, read_manifest, verify_checksum
from .runner import MANIFEST_NAME, MANIFEST_SCHEMA, SCHEMAS

PASS = "pass"
FAIL = "FAIL"
NOT_RUN = "not run"


class _RunData:
    """Checksum-verified CSV tables keyed by file name."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        manifest_path = self.run_dir / MANIFEST_NAME
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest at {manifest_path}")
        self.manifest = read_manifest(manifest_path)
        if self.manifest.get("schema") != MANIFEST_SCHEMA:
            raise SchemaError(
                f"manifest schema {self.manifest.get('schema')!r} is not "
                f"{MANIFEST_SCHEMA!r}"
            )
        self.tables: dict[str, tuple[dict[str, int], list[list[str]]]] = {}
        for stage, record in self.manifest.get("stages", {}).items():
            if record.get("status") != "ok":
                continue
            for name, digest in record.get("outputs", {}).items():
                fpath = self.run_dir / name
                if not fpath.exists():
                    continue  # gap; dependent metrics report "not run"
                verify_checksum(fpath, digest)
                if name.endswith(".csv"):
                    cols, rows = read_csv(fpath, SCHEMAS[name])
                    self.tables[name] = ({c: i for i, c in enumerate(cols)}, rows)

    def rows(self, name: str, **match: str) -> list[dict[str, str]] | None:
        """Rows of one table as dicts, filtered by exact cell matches."""
        if name not in self.tables:
            return None
        colmap, rows = self.tables[name]
        out = []
        for row in rows:
            d = {c: row[i] for c, i in colmap.items()}
            if all(d.get(k) == v for k, v in match.items()):
                out.append(d)
        return out


def _f(cell: str | None) -> float | None:
    if cell is None or cell == "":
        return None
    return float(cell)


def _metric_weyl_count(data: _RunData):
    rows = data.rows("weyl.csv", kind="count")
    if not rows:
        return None, None
    norm = _f(rows[0]["mean"])
    ref = _f(rows[0]["phase_space_average"])
    dev = abs(norm - ref) / ref
    return f"deviation {dev:.2%} at lambda={_f(rows[0]['lambda']):g}", dev <= 0.03


def _metric_weyl_window(data: _RunData):
    rows = data.rows("weyl.csv", kind="window")
    if not rows:
        return None, None
    norm = _f(rows[0]["mean"])
    ref = _f(rows[0]["phase_space_average"])
    dev = abs(norm - ref) / ref
    return f"deviation {dev:.2%} ({rows[0]['window']} window)", dev <= 0.10


def _trace_rows(data: _RunData):
    rows = data.rows("trace.csv")
    if not rows:
        return None
    rows = sorted(rows, key=lambda r: -_f(r["t"]))
    return [( _f(r["t"]), _f(r["t_times_trace"]), _f(r["reference"])) for r in rows]


def _metric_trace_band(data: _RunData):
    rows = _trace_rows(data)
    if not rows:
        return None, None
    t, val, ref = rows[-1]
    rel = (val - ref) / ref
    return f"t*trace off by {rel:+.2%} at t={t:g}", -0.04 <= rel <= 0.01


def _metric_trace_monotone(data: _RunData):
    rows = _trace_rows(data)
    if rows is None or len(rows) < 2:
        return None, None
    devs = [(val - ref) / ref for _, val, ref in rows]
    ok = all(b > a for a, b in zip(devs, devs[1:]))
    return f"signed deviations {', '.join(f'{d:+.2%}' for d in devs)}", ok


def _metric_haar_moments(data: _RunData):
    rows = data.rows("concentration.csv", kind="haar")
    if not rows:
        return None, None
    worst = max(_f(r["tail"]) / _f(r["stderr"]) for r in rows)
    ok = all(_f(r["tail"]) <= _f(r["bound"]) for r in rows)
    return f"worst |z| = {worst:.2f} over {len(rows)} entries", ok


def _metric_rotation_tails(data: _RunData):
    rows = data.rows("concentration.csv", kind="rotation")
    if not rows:
        return None, None
    rows = sorted(rows, key=lambda r: int(r["n"]))
    tails = [_f(r["tail"]) for r in rows]
    decreasing = all(b < a for a, b in zip(tails, tails[1:]))
    ok = decreasing and tails[-1] <= 0.01
    return f"tails {', '.join(f'{t:.4f}' for t in tails)}", ok


def _metric_hanson_wright(data: _RunData):
    rows = data.rows("concentration.csv", kind="hw", label="gaussian")
    if not rows:
        return None, None
    below = all(_f(r["tail"]) <= _f(r["bound"]) + 1e-12 for r in rows)
    zs = []
    for r in rows:
        oracle = _f(r["oracle"])
        stderr = _f(r["stderr"])
        if oracle is None:
            continue
        zs.append(abs(_f(r["tail"]) - oracle) / max(stderr, 1e-12))
    near = bool(zs) and max(zs) <= 3.0
    worst = max(zs) if zs else math.nan
    return f"all below bound: {below}; worst oracle |z| = {worst:.2f}", below and near


def _metric_perturb_norm(data: _RunData):
    rows = data.rows("perturb.csv")
    if not rows:
        return None, None
    eps, norm = _f(rows[0]["epsilon"]), _f(rows[0]["norm_s"])
    return f"|S| = {norm:.4g} at eps={eps:g}", norm <= 10.0 * eps


def _metric_eigenstructure(data: _RunData):
    rows = data.rows("perturb.csv")
    if not rows:
        return None, None
    ev = _f(rows[0]["max_eigenvalue_error"])
    vec = _f(rows[0]["max_eigenvector_mismatch"])
    return f"eigenvalue err {ev:.2e}, vector mismatch {vec:.2e}", (
        ev <= 1e-10 and vec <= 1e-8
    )


def _metric_quasimode_slope(data: _RunData):
    summary = data.rows("perturb.csv")
    rows = data.rows("quasimodes.csv")
    if not summary or not rows:
        return None, None
    gamma = _f(summary[0]["gamma"])
    if gamma != 1.0:
        return f"needs a gamma=1 run (this run has gamma={gamma:g})", None
    lam = np.array([_f(r["lambda_dprime"]) for r in rows])
    defect = np.array([_f(r["defect"]) for r in rows])
    keep = (lam >= 30.0) & (lam <= 120.0) & (defect > 0.0)
    if keep.sum() < 5:
        return "fewer than 5 usable quasimodes in [30, 120]", None
    slope = float(np.polyfit(np.log(lam[keep]), np.log(defect[keep]), 1)[0])
    return f"log-log slope {slope:.3f} over {int(keep.sum())} modes", (
        abs(slope + 1.0) <= 0.2
    )


def _metric_que(data: _RunData):
    rows = data.rows("que.csv")
    if not rows:
        return None, None
    devs = [_f(r["max_deviation"]) for r in rows if r["count"] != "0"]
    if not devs:
        return "all configured windows were empty", None
    worst = max(devs)
    return f"worst rotated deviation {worst:.4f}", worst <= 0.1


def _metric_kernel_mc(data: _RunData):
    rows = data.rows("heatkernel.csv", kind="kernel")
    if not rows:
        return None, None
    r = rows[0]
    value, stderr, ref = _f(r["value"]), _f(r["stderr"]), _f(r["reference"])
    gap = abs(value - ref)
    tol = max(3.0 * stderr, 1e-3)
    return f"|MC - eigenexpansion| = {gap:.2e} (tol {tol:.2e})", gap <= tol


def _metric_positivity(data: _RunData):
    rows = data.rows("heatkernel.csv", kind="kernel")
    if not rows:
        return None, None
    value, stderr = _f(rows[0]["value"]), _f(rows[0]["stderr"])
    return f"estimate {value:.5g}, stderr {stderr:.2g}", value >= -3.0 * stderr


def _metric_defect(data: _RunData):
    rows = data.rows("heatkernel.csv", kind="defect")
    if not rows:
        return None, None
    r = rows[0]
    value = _f(r["value"])
    t = _f(r["t"])
    return (
        f"defect {value:.3e} at t={t:g} (constant fit needs a t sweep)",
        None,
    )


_METRICS = [
    ("weyl count vs 1/(4 pi)", "within 3%", _metric_weyl_count),
    ("window count vs limit", "within 10%", _metric_weyl_window),
    ("heat trace small-t band", "in [-4%, +1%]", _metric_trace_band),
    ("heat trace deviation trend", "monotone toward 0", _metric_trace_monotone),
    ("haar row moments", "all |dev| <= 3 stderr", _metric_haar_moments),
    ("rotation tails", "decreasing, final <= 0.01", _metric_rotation_tails),
    ("hanson-wright tails", "below bound, 3 sigma of oracle", _metric_hanson_wright),
    ("perturbation norm", "|S| <= 10 eps", _metric_perturb_norm),
    ("eigenstructure", "1e-10 eigenvalues, sign-matched vectors", _metric_eigenstructure),
    ("quasimode slope", "-1 +/- 0.2", _metric_quasimode_slope),
    ("rotated observable averages", "max deviation <= 0.1", _metric_que),
    ("heat-kernel monte carlo", "max(3 stderr, 1e-3)", _metric_kernel_mc),
    ("kernel positivity", ">= -3 stderr", _metric_positivity),
    ("boundary defect size", "fitted C stable", _metric_defect),
]


def _table(rows: list[list[str]], headers: list[str]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
    return "\n".join(lines)


def report(run_dir: str | Path) -> str:
    """Render the summary for one run directory."""
    data = _RunData(run_dir)
    m = data.manifest
    lines = [
        f"run directory: {data.run_dir}",
        f"config hash:   {m.get('config_hash', '?')}",
        f"tool version:  {m.get('tool_version', '?')}",
        f"seed: {m.get('seed')}   backend: {m.get('backend')}   "
        f"workers: {m.get('workers')}",
        "",
    ]

    stages = m.get("stages", {})
    ordered = [st for st in STAGE_ORDER if st in stages]
    ordered += [st for st in stages if st not in STAGE_ORDER]
    stage_rows = []
    for stage, record in ((st, stages[st]) for st in ordered):
        err = record.get("error") or ""
        stage_rows.append(
            [stage, record.get("status", "?"), f"{record.get('wall_time_s', 0.0):.3f}",
             err]
        )
    lines.append(_table(stage_rows, ["stage", "status", "wall (s)", "error"]))
    lines.append("")

    metric_rows = []
    for name, target, fn in _METRICS:
        value, ok = fn(data)
        if value is None:
            metric_rows.append([name, "", target, NOT_RUN])
        elif ok is None:
            metric_rows.append([name, value, target, NOT_RUN])
        else:
            metric_rows.append([name, value, target, PASS if ok else FAIL])
    lines.append(_table(metric_rows, ["metric", "value", "target", "status"]))

    warnings = m.get("warnings", [])
    if warnings:
        lines.append("")
        lines.append("warnings:")
        for w in warnings:
            lines.append(f"  - {w}")
    lines.append("")
    return "\n".join(lines)
