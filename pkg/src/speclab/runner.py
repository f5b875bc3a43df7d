"""Experiment orchestration: staged runs, CSV outputs, and the manifest.

Each stage recomputes what it needs in memory (results are cached within
one invocation) and writes only its own CSV files, so single-stage runs
stay cheap and the on-disk outputs are a pure function of (config, seed)
regardless of which subsets ran when.  The manifest records per-stage
status, wall time, output checksums, and accumulated warnings; it is
written even when stages fail, and independent stages keep running after
a failure.
"""
from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .concentration import (
    MOMENT_PAIRS_50,
    chi_square_two_sided_tail,
    hanson_wright_sweep,
    haar_moment_check,
    isolated_mode_members,
    rotation_tail,
)
from .config import STAGES, ExperimentConfig
from .heatmc import (
    TruncationError,
    defect_estimate,
    dirichlet_kernel_mc,
    free_kernel,
    heat_trace,
    kernel_eigen,
    survival_eigen,
    survival_mc,
    to_half_time,
    weyl_count,
    window_count,
)
from .io import git_describe, read_manifest, sha256_file, write_csv, write_manifest
from .observables import (
    matrix_table,
    named_observable,
    phase_space_average,
    rotated_diagonal,
    window_indices,
)
from .operators import build_perturbed, eigencheck, operator_norm, quasimode_defects
from .pathkern import active_backend
from .spectral import fd_spectrum, rectangle_spectrum, save_spectrum
from .geometry import Rectangle

MANIFEST_SCHEMA = "speclab.manifest.v1"
MANIFEST_NAME = "manifest.json"

SCHEMAS = {
    "spectrum.csv": "speclab.spectrum.v1",
    "partition.csv": "speclab.partition.v1",
    "reassign.csv": "speclab.reassign.v1",
    "perturb.csv": "speclab.perturb.v1",
    "quasimodes.csv": "speclab.quasimodes.v1",
    "weyl.csv": "speclab.weyl.v1",
    "que.csv": "speclab.que.v1",
    "concentration.csv": "speclab.concentration.v1",
    "heatkernel.csv": "speclab.heatkernel.v1",
    "trace.csv": "speclab.trace.v1",
}

# Which earlier stage each stage leans on; used only to mark a stage as
# skipped when a prerequisite already failed in this invocation.
_DEPS = {
    "spectrum": (),
    "partition": ("spectrum",),
    "perturb": ("spectrum",),
    "weyl": ("spectrum",),
    "que": ("spectrum", "perturb"),
    "concentration": ("spectrum",),
    "heatkernel": ("spectrum",),
}


class _Context:
    """Caches the expensive intermediates shared between stages."""

    def __init__(
        self, cfg: ExperimentConfig, seed: int, workers: int | None, out: Path
    ):
        self.cfg = cfg
        self.seed = seed
        self.workers = workers
        self.out = out
        self.warnings: list[str] = []
        self._cache: dict[str, tuple[str, object]] = {}

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def _memo(self, key: str, fn):
        if key not in self._cache:
            try:
                self._cache[key] = ("ok", fn())
            except Exception as exc:  # cached so dependents see the same error
                self._cache[key] = ("error", exc)
        status, value = self._cache[key]
        if status == "error":
            raise value  # type: ignore[misc]
        return value

    def spectrum(self):
        return self._memo("spectrum", self._build_spectrum)

    def _build_spectrum(self):
        cfg = self.cfg
        if cfg.backend == "analytic":
            if not isinstance(cfg.domain, Rectangle):
                raise ValueError(
                    "the analytic spectrum backend needs a rectangle domain"
                )
            return rectangle_spectrum(cfg.domain.lx, cfg.domain.ly, cfg.lambda_max)
        return fd_spectrum(cfg.domain, cfg.fd_h, cfg.fd_count)

    def perturbed(self):
        return self._memo("perturbed", self._build_perturbed)

    def _build_perturbed(self):
        cfg = self.cfg
        op, r = build_perturbed(
            self.spectrum(),
            cfg.epsilon,
            cfg.gamma,
            self.seed,
            cfg.truncation,
            strategy=cfg.strategy,
        )
        if 0.0 < r.lambda_star < math.inf:
            self.warn(
                f"two-scale eigenvalue bound holds above lambda* = {r.lambda_star:.6g}"
            )
        return op, r


# ----------------------------------------------------------------------
# Stage bodies: each returns [(filename, columns, rows), ...]


def _stage_spectrum(ctx: _Context):
    s = ctx.spectrum()
    save_spectrum(s, ctx.out / "spectrum.txt")
    rows = []
    for i in range(len(s)):
        if s.modes is not None:
            m, n = int(s.modes[i][0]), int(s.modes[i][1])
        else:
            m = n = None
        lam = float(s.lambdas[i])
        rows.append([i, lam, m, n, lam * lam])
    return [
        ("spectrum.txt", None, None),
        ("spectrum.csv", ["index", "lam", "m", "n", "mu"], rows),
    ]


def _stage_partition(ctx: _Context):
    s = ctx.spectrum()
    _, r = ctx.perturbed()
    p = r.partition
    block_rows = [
        [b.n, b.j, b.lambda_minus, b.lambda_plus, len(b.members)] for b in p.blocks
    ]
    block_cols = ["n", "j", "lambda_minus", "lambda_plus", "members"]

    block_of = p.block_of()
    rows = []
    for i in range(len(s)):
        b = block_of.get(i)
        rows.append(
            [
                i,
                float(s.lambdas[i]),
                b.label if b is not None else "low",
                float(r.lambda_prime[i]),
                float(r.lambda_dprime[i]),
            ]
        )
    cols = ["index", "lam", "block", "lambda_prime", "lambda_dprime"]
    return [
        ("partition.csv", block_cols, block_rows),
        ("reassign.csv", cols, rows),
    ]


def _stage_perturb(ctx: _Context):
    cfg = ctx.cfg
    op, _ = ctx.perturbed()
    norm_s = operator_norm(op.s)
    checks = eigencheck(op)
    defects = quasimode_defects(op)
    summary_cols = [
        "epsilon",
        "gamma",
        "requested_truncation",
        "effective_truncation",
        "norm_s",
        "norm_s_over_epsilon",
        "max_defect",
        "max_eigenvalue_error",
        "max_eigenvector_mismatch",
        "max_residual",
    ]
    summary = [
        [
            cfg.epsilon,
            cfg.gamma,
            cfg.truncation,
            op.n,
            norm_s,
            norm_s / cfg.epsilon,
            float(np.max(defects)),
            checks["max_rel_eigenvalue_error"],
            checks["max_eigenvector_mismatch"],
            checks["max_residual"],
        ]
    ]
    lam_dpp = np.sqrt(op.mu_dprime)
    quasi = [
        [i, float(lam_dpp[i]), float(defects[i])] for i in range(op.n)
    ]
    return [
        ("perturb.csv", summary_cols, summary),
        ("quasimodes.csv", ["index", "lambda_dprime", "defect"], quasi),
    ]


_WEYL_COLS = [
    "kind",
    "lambda",
    "window",
    "count",
    "sum",
    "mean",
    "phase_space_average",
    "residual",
]


def _stage_weyl(ctx: _Context):
    """Counting rows: mean = count / lambda^2, reference = the Weyl limit."""
    cfg = ctx.cfg
    s = ctx.spectrum()
    vol = s.domain.volume()
    lam_top = float(s.lambda_max if s.lambda_max is not None else s.lambdas[-1])
    rows = []

    count = weyl_count(s, lam_top)
    ref = vol / (4.0 * math.pi)
    norm = count / lam_top**2
    rows.append(["count", lam_top, f"[0, {lam_top:g}]", count, count, norm, ref,
                 norm - ref])

    eps = cfg.epsilon
    lam_w = lam_top / (1.0 + eps)
    while lam_w * (1.0 + eps) > lam_top:  # keep the window top at the cutoff
        lam_w = float(np.nextafter(lam_w, 0.0))
    wcount = window_count(s, lam_w, eps)
    wref = vol * ((1.0 + eps) ** 2 - 1.0) / (4.0 * math.pi)
    wnorm = wcount / lam_w**2
    rows.append(["window", lam_w, f"x{1.0 + eps:g}", wcount, wcount, wnorm, wref,
                 wnorm - wref])

    for lo, hi in cfg.windows:
        icount = len(window_indices(s, lo, hi))
        iref = vol * ((hi / lo) ** 2 - 1.0) / (4.0 * math.pi)
        inorm = icount / lo**2
        rows.append(["interval", lo, f"[{lo:g}, {hi:g})", icount, icount, inorm,
                     iref, inorm - iref])
        if icount == 0:
            ctx.warn(f"window [{lo:.6g}, {hi:.6g}) contains no eigenvalues")

    return [("weyl.csv", _WEYL_COLS, rows)]


_QUE_COLS = [
    "observable",
    "lambda",
    "window",
    "count",
    "sum",
    "mean",
    "phase_space_average",
    "residual",
    "max_deviation",
    "max_deviation_unrotated",
]


def _stage_que(ctx: _Context):
    """Rotated-diagonal window averages against the phase-space average."""
    cfg = ctx.cfg
    s = ctx.spectrum()
    op, _ = ctx.perturbed()
    lam_dpp = np.sqrt(op.mu_dprime)
    rows = []
    for name in cfg.observables:
        obs = named_observable(name, s.domain)
        h = matrix_table(s, obs, range(op.n))
        diag_rot = rotated_diagonal(h, op.u_rot)
        diag_unrot = np.diag(h)
        psa = phase_space_average(s.domain, obs)
        for lo, hi in cfg.windows:
            label = f"[{lo:g}, {hi:g})"
            idx = np.nonzero((lam_dpp >= lo) & (lam_dpp < hi))[0]
            if idx.size == 0:
                ctx.warn(
                    f"observable {name}: window [{lo:.6g}, {hi:.6g}) has no modes"
                    f" below the truncation"
                )
                rows.append([name, lo, label, 0, None, None, psa, None, None, None])
                continue
            total = float(math.fsum(diag_rot[idx]))
            mean = total / idx.size
            rows.append(
                [
                    name,
                    lo,
                    label,
                    int(idx.size),
                    total,
                    mean,
                    psa,
                    mean - psa,
                    float(np.max(np.abs(diag_rot[idx] - psa))),
                    float(np.max(np.abs(diag_unrot[idx] - psa))),
                ]
            )
    return [("que.csv", _QUE_COLS, rows)]


def _stage_concentration(ctx: _Context):
    cfg = ctx.cfg
    s = ctx.spectrum()
    obs = named_observable("cos-x", s.domain)
    rows = []
    for entry in haar_moment_check(50, MOMENT_PAIRS_50, 2000, ctx.seed):
        dev = abs(entry["empirical"] - entry["target"])
        rows.append(
            [
                "haar",
                f"{entry['j']}:{entry['k']}",
                50,
                None,
                2000,
                dev,
                entry["stderr"],
                None,
                3.0 * entry["stderr"],
                None,
            ]
        )
    for n in cfg.conc_ns:
        members = isolated_mode_members(s, n)
        rep = rotation_tail(s, members, obs, cfg.conc_t, cfg.conc_replicas, ctx.seed)
        rows.append(
            [
                "rotation",
                "cos-x",
                rep.n,
                rep.t,
                rep.replicas,
                rep.empirical_tail,
                rep.stderr,
                None,
                None,
                None,
            ]
        )
    eye = np.eye(cfg.hw_n)
    for distribution in ("gaussian", "rademacher"):
        reports = hanson_wright_sweep(
            eye, distribution, cfg.hw_ts, cfg.hw_replicas, ctx.seed
        )
        ctx.warn(
            f"hanson-wright {distribution}: fitted tail constant"
            f" c = {reports[0].fitted_c:.6g}"
        )
        for rep in reports:
            oracle = (
                chi_square_two_sided_tail(rep.n, rep.t)
                if distribution == "gaussian"
                else None
            )
            rows.append(
                [
                    "hw",
                    distribution,
                    rep.n,
                    rep.t,
                    rep.replicas,
                    rep.empirical_tail,
                    rep.stderr,
                    rep.fitted_c,
                    rep.bound_value,
                    oracle,
                ]
            )
    cols = [
        "kind",
        "label",
        "n",
        "t",
        "replicas",
        "tail",
        "stderr",
        "fitted_c",
        "bound",
        "oracle",
    ]
    return [("concentration.csv", cols, rows)]


def _stage_heatkernel(ctx: _Context):
    cfg = ctx.cfg
    s = ctx.spectrum()
    dom = s.domain
    t, x, y = cfg.mc_t, cfg.mc_x, cfg.mc_y
    conv = cfg.mc_convention
    rows = []

    rho = free_kernel(t, x, y, conv)
    rows.append(["free", t, *x, *y, rho, None, 0, conv, None])

    eigen_val, eigen_tail = kernel_eigen(s, t, x, y, conv)
    rows.append(["eigen", t, *x, *y, eigen_val, eigen_tail, 0, conv, None])

    if cfg.mc_paths > 0:
        th = to_half_time(t, conv)
        surv, surv_err = survival_mc(
            dom, x, th, cfg.mc_paths, cfg.mc_dt, ctx.seed,
            bridge=cfg.mc_bridge, workers=ctx.workers,
        )
        rows.append(
            ["survival", t, *x, *y, surv, surv_err, cfg.mc_paths, conv,
             survival_eigen(s, x, th)]
        )
        defect = defect_estimate(
            dom, th, x, y, cfg.mc_paths, cfg.mc_dt, ctx.seed,
            bridge=cfg.mc_bridge, workers=ctx.workers,
        )
        rows.append(
            ["defect", t, *x, *y, defect.value, defect.stderr, cfg.mc_paths,
             conv, None]
        )
        est = dirichlet_kernel_mc(
            dom, t, x, y, cfg.mc_paths, cfg.mc_dt, ctx.seed,
            convention=conv, bridge=cfg.mc_bridge, workers=ctx.workers,
        )
        rows.append(
            ["kernel", t, *x, *y, est.value, est.stderr, cfg.mc_paths, conv,
             eigen_val]
        )

    cols = [
        "kind", "t", "x0", "y0", "x1", "y1",
        "value", "stderr", "n_paths", "convention", "reference",
    ]
    out = [("heatkernel.csv", cols, rows)]

    trace_rows = []
    ref = dom.volume() / (4.0 * math.pi)
    for tt in cfg.trace_ts:
        try:
            tr = heat_trace(s, tt, "full_generator")
        except TruncationError as exc:
            ctx.warn(f"heat trace at t={tt:.6g} skipped: {exc}")
            continue
        trace_rows.append(
            ["full_generator", tt, tr, tt * tr, ref, tt * tr - ref]
        )
    out.append(
        (
            "trace.csv",
            ["convention", "t", "trace", "t_times_trace", "reference", "residual"],
            trace_rows,
        )
    )
    return out


_STAGE_BODY = {
    "spectrum": _stage_spectrum,
    "partition": _stage_partition,
    "perturb": _stage_perturb,
    "weyl": _stage_weyl,
    "que": _stage_que,
    "concentration": _stage_concentration,
    "heatkernel": _stage_heatkernel,
}


# ----------------------------------------------------------------------
# Orchestration


def _fresh_manifest(cfg: ExperimentConfig, seed: int, workers: int | None) -> dict:
    here = Path(__file__).resolve().parent
    return {
        "schema": MANIFEST_SCHEMA,
        "config_hash": cfg.config_hash(),
        "tool_version": f"speclab {__version__} ({git_describe(cwd=here)})",
        "seed": seed,
        "workers": workers,
        "backend": active_backend(),
        "stages": {},
        "warnings": [],
    }


def run(
    cfg: ExperimentConfig,
    *,
    stages: list[str] | None = None,
    seed: int | None = None,
    workers: int | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    """Execute the requested stages and write CSVs plus the manifest.

    Re-running the same (config, seed) byte-reproduces every CSV.  The
    manifest merges across invocations of the same (config, seed), so a
    run can be assembled stage by stage; a different config or seed
    starts a fresh manifest.
    """
    if stages is None:
        stages = list(cfg.stages)
    for st in stages:
        if st not in STAGES:
            raise ValueError(f"unknown stage {st!r}")
    stages = [st for st in STAGES if st in stages]
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = _fresh_manifest(cfg, seed, workers)
    existing = None
    path = out / MANIFEST_NAME
    if path.exists():
        try:
            existing = read_manifest(path)
        except ValueError:
            existing = None
    if (
        existing is not None
        and existing.get("schema") == MANIFEST_SCHEMA
        and existing.get("config_hash") == manifest["config_hash"]
        and existing.get("seed") == seed
    ):
        manifest["stages"] = dict(existing.get("stages", {}))
        manifest["warnings"] = list(existing.get("warnings", []))

    ctx = _Context(cfg, seed, workers, out)
    ctx.warnings = list(manifest["warnings"])
    failed: set[str] = set()

    for st in stages:
        record: dict = {"status": "ok", "wall_time_s": 0.0, "error": None, "outputs": {}}
        bad_dep = next((d for d in _DEPS[st] if d in failed), None)
        if bad_dep is not None:
            record["status"] = "skipped"
            record["error"] = f"prerequisite stage {bad_dep!r} failed"
            manifest["stages"][st] = record
            continue
        start = time.perf_counter()
        try:
            files = _STAGE_BODY[st](ctx)
            for name, cols, rows in files:
                fpath = out / name
                if cols is not None:  # None: the stage already wrote the file
                    write_csv(fpath, SCHEMAS[name], cols, rows)
                record["outputs"][name] = sha256_file(fpath)
        except Exception as exc:
            record["status"] = "failed"
            record["error"] = f"{type(exc).__name__}: {exc}"
            failed.add(st)
        record["wall_time_s"] = time.perf_counter() - start
        manifest["stages"][st] = record

    manifest["warnings"] = ctx.warnings
    write_manifest(path, manifest)
    return manifest
