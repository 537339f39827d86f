"""Command line front end: panel file ingestion, configuration, and result emission.

Subcommands
-----------
fit         estimate loadings and factors at fixed ranks, write R/C/F + diagnostics
select      pick the number of row and column factors (RM / IC / ER / VEC)
simulate    draw a synthetic panel and its ground truth
experiment  run a replication study (selection / loading / clt) and tabulate it
impute      fill missing entries with the fitted common component
similarity  overlap between two loading spaces

Panel files are either long CSV (header ``t,i,j,value``, 1-based indices,
absent rows are missing entries) or a JSON manifest describing a dense
little-endian float64 blob, t-major, with NaN marking missing entries.
Every command is a pure function of (input files, config, seed); reruns
write byte-identical output.  Exit codes: 0 success, 1 bad input or I/O,
2 finished without convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class CliError(ValueError):
    """Input, config, or file format problem; maps to exit code 1."""


_FMT = ".17g"


def _fmt(x) -> str:
    return format(float(x), _FMT)


# ---------------------------------------------------------------------------
# config handling


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"config {path}: expected a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed) -> None:
    for key in cfg:
        if key not in allowed:
            raise CliError(
                f"config: unknown key {key!r} (allowed: {', '.join(sorted(allowed))})"
            )


def _need_int(cfg: dict, key: str) -> int:
    if key not in cfg:
        raise CliError(f"config: missing required key {key!r}")
    return _as_int(cfg, key)


def _as_int(cfg: dict, key: str, default=None):
    val = cfg.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, int):
        raise CliError(f"config: {key} must be an integer, got {val!r}")
    return val


def _as_float(cfg: dict, key: str, default=None):
    val = cfg.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CliError(f"config: {key} must be a number, got {val!r}")
    return float(val)


def _as_bool(cfg: dict, key: str, default=False):
    val = cfg.get(key, default)
    if not isinstance(val, bool):
        raise CliError(f"config: {key} must be true or false, got {val!r}")
    return val


def _as_str(cfg: dict, key: str, default=None):
    val = cfg.get(key, default)
    if val is None:
        return None
    if not isinstance(val, str):
        raise CliError(f"config: {key} must be a string, got {val!r}")
    return val


def _fit_options(cfg: dict, seed_override) -> dict:
    """Solver options shared by every command that runs the estimator."""
    options = {}
    for key in ("max_outer_iters", "n_restarts", "seed"):
        val = _as_int(cfg, key)
        if val is not None:
            options[key] = val
    for key in ("obj_rel_tol", "param_tol"):
        val = _as_float(cfg, key)
        if val is not None:
            options[key] = val
    if seed_override is not None:
        options["seed"] = seed_override
    return options


_SOLVER_KEYS = ("max_outer_iters", "obj_rel_tol", "param_tol", "n_restarts", "seed")


# ---------------------------------------------------------------------------
# panel and matrix files


def read_panel(path: str):
    """Load a panel from long CSV or a dense-binary JSON manifest."""
    import numpy as np

    from .core import MatrixPanel

    if path.endswith(".json"):
        return _read_dense_manifest(path)

    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "t,i,j,value":
            raise CliError(f"{path}: line 1: expected header 't,i,j,value'")
        ts, is_, js, vals = [], [], [], []
        seen = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise CliError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
            try:
                t, i, j = int(parts[0]), int(parts[1]), int(parts[2])
                v = float(parts[3])
            except ValueError:
                raise CliError(f"{path}: line {lineno}: could not parse 't,i,j,value'")
            if t < 1 or i < 1 or j < 1:
                raise CliError(f"{path}: line {lineno}: indices are 1-based")
            if (t, i, j) in seen:
                raise CliError(f"{path}: line {lineno}: duplicate entry ({t},{i},{j})")
            seen.add((t, i, j))
            if v != v:  # NaN value means missing, same as an absent row
                continue
            ts.append(t)
            is_.append(i)
            js.append(j)
            vals.append(v)
    if not ts:
        raise CliError(f"{path}: no observed entries")
    T, p1, p2 = max(ts), max(is_), max(js)
    values = np.zeros((T, p1, p2))
    mask = np.zeros((T, p1, p2), dtype=bool)
    idx = (np.asarray(ts) - 1, np.asarray(is_) - 1, np.asarray(js) - 1)
    values[idx] = vals
    mask[idx] = True
    return MatrixPanel(values=values, mask=mask)


def _read_dense_manifest(path: str):
    import numpy as np

    from .core import MatrixPanel

    with open(path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("T", "p1", "p2", "data"):
        if key not in manifest:
            raise CliError(f"{path}: manifest missing key {key!r}")
    fmt = manifest.get("format", "dense-f64-le")
    if fmt != "dense-f64-le":
        raise CliError(f"{path}: unsupported format {fmt!r}")
    dims = []
    for key in ("T", "p1", "p2"):
        val = manifest[key]
        if isinstance(val, bool) or not isinstance(val, int) or val < 1:
            raise CliError(f"{path}: manifest key {key!r} must be a positive integer")
        dims.append(val)
    T, p1, p2 = dims
    blob = os.path.join(os.path.dirname(path), manifest["data"])
    raw = np.fromfile(blob, dtype="<f8")
    if raw.size != T * p1 * p2:
        raise CliError(
            f"{blob}: expected {T * p1 * p2} float64 values, found {raw.size}"
        )
    values = raw.reshape(T, p1, p2)
    mask = np.isfinite(values)
    if not mask.any():
        raise CliError(f"{blob}: no observed entries")
    return MatrixPanel(values=np.where(mask, values, 0.0), mask=mask)


def write_panel_csv(panel, path: str) -> None:
    """Write a panel as long CSV, omitting masked entries."""
    import numpy as np

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,i,j,value\n")
        ts, is_, js = np.nonzero(panel.mask)
        vals = panel.values[ts, is_, js]
        for t, i, j, v in zip(ts, is_, js, vals):
            fh.write(f"{t + 1},{i + 1},{j + 1},{_fmt(v)}\n")


def write_panel_dense(panel, path: str) -> None:
    """Write a manifest + binary blob; masked entries become NaN."""
    import numpy as np

    blob_name = os.path.splitext(os.path.basename(path))[0] + ".bin"
    blob_path = os.path.join(os.path.dirname(path), blob_name)
    dense = np.where(panel.mask, panel.values, np.nan).astype("<f8")
    dense.tofile(blob_path)
    manifest = {
        "format": "dense-f64-le",
        "T": panel.T,
        "p1": panel.p1,
        "p2": panel.p2,
        "data": blob_name,
    }
    _write_json(manifest, path)


def write_matrix_csv(matrix, path: str) -> None:
    import numpy as np

    arr = np.asarray(matrix, dtype=float)
    if arr.ndim == 3:  # factor stack: T blocks of k1 x k2 rows
        arr = arr.reshape(arr.shape[0] * arr.shape[1], arr.shape[2])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in arr:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path: str):
    import numpy as np

    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(p) for p in line.split(",")])
            except ValueError:
                raise CliError(f"{path}: line {lineno}: could not parse numbers")
    if not rows:
        raise CliError(f"{path}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise CliError(f"{path}: ragged rows")
    return np.asarray(rows)


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_table_csv(rows, path: str) -> None:
    if not rows:
        raise CliError("experiment produced no rows")
    cols = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for col in cols:
                val = row[col]
                cells.append(_fmt(val) if isinstance(val, float) else str(val))
            fh.write(",".join(cells) + "\n")


def _out_dir(args, cfg: dict) -> str:
    out = args.out or _as_str(cfg, "out")
    if out is None:
        raise CliError("no output directory (pass --out or set 'out' in the config)")
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


_FIT_KEYS = _SOLVER_KEYS + (
    "tau", "k1", "k2", "smoothed", "kernel_order", "bandwidth_c",
    "bandwidth_scale", "bandwidth", "out",
)


def cmd_fit(args) -> int:
    from . import core, estimator, kernels

    cfg = _load_config(args.config)
    _check_keys(cfg, _FIT_KEYS)
    out = _out_dir(args, cfg)
    panel = read_panel(args.input)
    tau = _as_float(cfg, "tau", 0.5)
    fit_cfg = estimator.FitConfig(
        k1=_need_int(cfg, "k1"), k2=_need_int(cfg, "k2"), **_fit_options(cfg, args.seed)
    )
    smoothed = _as_bool(cfg, "smoothed", False)
    if smoothed:
        order = _as_int(cfg, "kernel_order", 8)
        bandwidth = _as_float(cfg, "bandwidth")
        if bandwidth is None:
            bandwidth = kernels.default_bandwidth(
                panel.T, order,
                _as_float(cfg, "bandwidth_c", 0.15),
                _as_float(cfg, "bandwidth_scale", 1.0),
            )
        kernel = kernels.build_kernel(order, bandwidth)
        result = estimator.smoothed_fit(panel, tau, fit_cfg, kernel)
    else:
        result = estimator.fit(panel, tau, fit_cfg)

    write_matrix_csv(result.params.R, os.path.join(out, "R.csv"))
    write_matrix_csv(result.params.C, os.path.join(out, "C.csv"))
    write_matrix_csv(result.params.F, os.path.join(out, "F.csv"))
    diagnostics = {
        "command": "fit",
        "tau": tau,
        "k1": fit_cfg.k1,
        "k2": fit_cfg.k2,
        "smoothed": smoothed,
        "objective": result.objective,
        "objective_trace": list(result.objective_trace),
        "sigma1": list(result.sigma1),
        "sigma2": list(result.sigma2),
        "iterations": result.iterations,
        "converged": result.converged,
        "seed": fit_cfg.seed,
    }
    if args.truth is not None:
        truth = _read_truth_dir(args.truth)
        import numpy as np

        diagnostics["dist_R"] = core.loading_distance(truth.R, result.params.R)
        diagnostics["dist_C"] = core.loading_distance(truth.C, result.params.C)
        diagnostics["dist_W"] = core.loading_distance(
            np.kron(truth.C, truth.R), np.kron(result.params.C, result.params.R)
        )
        diagnostics["theta_distance"] = core.theta_distance(truth, result.params)
    _write_json(diagnostics, os.path.join(out, "diagnostics.json"))
    return 0 if result.converged else 2


def _read_truth_dir(path: str):
    """Load FactorParams from a directory written by cmd_fit or cmd_simulate."""
    from .core import FactorParams

    manifest_path = os.path.join(path, "truth.json")
    R = read_matrix_csv(os.path.join(path, "R.csv"))
    C = read_matrix_csv(os.path.join(path, "C.csv"))
    flat = read_matrix_csv(os.path.join(path, "F.csv"))
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            k1 = json.load(fh)["effective_k1"]
    else:
        k1 = R.shape[1]
    if flat.shape[0] % k1:
        raise CliError(f"{path}/F.csv: row count not a multiple of k1={k1}")
    F = flat.reshape(flat.shape[0] // k1, k1, flat.shape[1])
    return FactorParams(R=R, C=C, F=F)


_SELECT_KEYS = _SOLVER_KEYS + (
    "tau", "method", "K1", "K2", "c0", "full_grid", "k_max", "out",
)


def cmd_select(args) -> int:
    from . import selection

    cfg = _load_config(args.config)
    _check_keys(cfg, _SELECT_KEYS)
    out = _out_dir(args, cfg)
    panel = read_panel(args.input)
    tau = _as_float(cfg, "tau", 0.5)
    method = _as_str(cfg, "method", "er").lower()
    options = _fit_options(cfg, args.seed) or None
    K1 = _as_int(cfg, "K1", 6)
    K2 = _as_int(cfg, "K2", 6)

    if method == "vec":
        k_hat = selection.vec_select_rm(
            panel, tau, k_max=_as_int(cfg, "k_max", 12), fit_options=options
        )
        report = {"command": "select", "method": "VEC", "tau": tau, "k_hat": k_hat}
        _write_json(report, os.path.join(out, "selection.json"))
        return 0

    if method == "rm":
        sel = selection.select_rm(panel, tau, K1, K2, fit_options=options)
    elif method == "er":
        sel = selection.select_er(
            panel, tau, K1, K2,
            c0=_as_float(cfg, "c0", selection.DEFAULT_C0),
            fit_options=options,
        )
    elif method == "ic":
        sel = selection.select_ic(
            panel, tau, K1, K2,
            full_grid=_as_bool(cfg, "full_grid", False),
            fit_options=options,
        )
    else:
        raise CliError(f"config: unknown method {method!r} (rm, ic, er, vec)")

    report = {
        "command": "select",
        "method": sel.method,
        "tau": tau,
        "k1_hat": sel.k1_hat,
        "k2_hat": sel.k2_hat,
        "sigma1": list(sel.sigma1_full),
        "sigma2": list(sel.sigma2_full),
    }
    if sel.threshold_used is not None:
        report["threshold"] = sel.threshold_used
    if sel.c0 is not None:
        report["c0"] = sel.c0
    if sel.ic_surface is not None:
        report["ic_surface"] = {f"{l1},{l2}": v for (l1, l2), v in sorted(sel.ic_surface.items())}
    _write_json(report, os.path.join(out, "selection.json"))
    return 0


_SIMULATE_KEYS = (
    "T", "p1", "p2", "k1", "k2", "theta_star", "noise", "ar_coef",
    "dependent_errors", "constant_noise_scale", "tau", "seed",
    "mask_fraction", "mask_seed", "format", "out",
)


def cmd_simulate(args) -> int:
    from . import simulate

    cfg = _load_config(args.config)
    _check_keys(cfg, _SIMULATE_KEYS)
    out = _out_dir(args, cfg)
    tau = _as_float(cfg, "tau", 0.5)
    seed = args.seed if args.seed is not None else _as_int(cfg, "seed", 0)
    dgp = simulate.DgpConfig(
        T=_need_int(cfg, "T"),
        p1=_need_int(cfg, "p1"),
        p2=_need_int(cfg, "p2"),
        k1=_as_int(cfg, "k1", 2),
        k2=_as_int(cfg, "k2", 3),
        theta_star=_as_float(cfg, "theta_star", 3.0),
        noise=_as_str(cfg, "noise", "normal"),
        ar_coef=_as_float(cfg, "ar_coef", 0.2),
        dependent_errors=_as_bool(cfg, "dependent_errors", False),
        constant_noise_scale=_as_bool(cfg, "constant_noise_scale", False),
        seed=seed,
    )
    panel, truth = simulate.gen_panel(dgp, tau)
    mask_fraction = _as_float(cfg, "mask_fraction", 0.0)
    if mask_fraction:
        panel = simulate.mask_random(
            panel, mask_fraction, seed=_as_int(cfg, "mask_seed", seed + 1)
        )

    fmt = _as_str(cfg, "format", "csv")
    if fmt == "csv":
        write_panel_csv(panel, os.path.join(out, "panel.csv"))
    elif fmt == "binary":
        write_panel_dense(panel, os.path.join(out, "panel.json"))
    else:
        raise CliError(f"config: unknown format {fmt!r} (csv, binary)")
    write_matrix_csv(truth.params.R, os.path.join(out, "R.csv"))
    write_matrix_csv(truth.params.C, os.path.join(out, "C.csv"))
    write_matrix_csv(truth.params.F, os.path.join(out, "F.csv"))
    manifest = {
        "command": "simulate",
        "T": dgp.T,
        "p1": dgp.p1,
        "p2": dgp.p2,
        "k1": dgp.k1,
        "k2": dgp.k2,
        "effective_k1": truth.effective_k1,
        "effective_k2": truth.effective_k2,
        "q_tau": truth.q_tau,
        "tau": tau,
        "theta_star": dgp.theta_star,
        "noise": dgp.noise,
        "ar_coef": dgp.ar_coef,
        "seed": seed,
        "mask_fraction": mask_fraction,
        "n_observed": panel.n_observed,
    }
    _write_json(manifest, os.path.join(out, "truth.json"))
    return 0


_EXPERIMENT_KEYS = (
    "experiment", "tau", "n_reps", "sizes", "noises", "methods",
    "T", "p1", "p2", "k1", "k2", "theta_star", "noise", "ar_coef",
    "K1", "K2", "c0", "kernel_order", "bandwidth_c",
    "fit_options", "smoothed_options", "seed", "out",
)


def cmd_experiment(args) -> int:
    from . import selection, simulate

    cfg = _load_config(args.config)
    _check_keys(cfg, _EXPERIMENT_KEYS)
    out = _out_dir(args, cfg)
    kind = _as_str(cfg, "experiment")
    if kind is None:
        raise CliError("config: missing required key 'experiment'")
    tau = _as_float(cfg, "tau", 0.5)
    n_reps = _as_int(cfg, "n_reps", 50)
    seed = args.seed if args.seed is not None else _as_int(cfg, "seed", 0)
    fit_options = cfg.get("fit_options")
    if fit_options is not None and not isinstance(fit_options, dict):
        raise CliError("config: fit_options must be an object")

    if kind in ("selection", "loading"):
        grid = _experiment_grid(cfg, seed)
        if kind == "selection":
            methods = cfg.get("methods", ["ER", "RM", "IC"])
            if not isinstance(methods, list) or not methods:
                raise CliError("config: methods must be a non-empty list")
            rows = simulate.run_selection_experiment(
                grid, tau, n_reps,
                methods=tuple(methods),
                K1=_as_int(cfg, "K1", 6),
                K2=_as_int(cfg, "K2", 6),
                c0=_as_float(cfg, "c0", selection.DEFAULT_C0),
                fit_options=fit_options,
            )
        else:
            rows = simulate.run_loading_experiment(grid, tau, n_reps, fit_options=fit_options)
        _write_table_csv(rows, os.path.join(out, "table.csv"))
        return 0

    if kind == "clt":
        smoothed_options = cfg.get("smoothed_options")
        if smoothed_options is not None and not isinstance(smoothed_options, dict):
            raise CliError("config: smoothed_options must be an object")
        dgp = simulate.DgpConfig(
            T=_need_int(cfg, "T"),
            p1=_need_int(cfg, "p1"),
            p2=_need_int(cfg, "p2"),
            k1=_as_int(cfg, "k1", 2),
            k2=_as_int(cfg, "k2", 3),
            theta_star=_as_float(cfg, "theta_star", 3.0),
            noise=_as_str(cfg, "noise", "normal"),
            seed=seed,
        )
        stats = simulate.run_clt_experiment(
            dgp, tau, n_reps,
            kernel_order=_as_int(cfg, "kernel_order", 8),
            bandwidth_exponent=_as_float(cfg, "bandwidth_c", 0.15),
            fit_options=fit_options,
            smoothed_options=smoothed_options,
        )
        with open(os.path.join(out, "sample.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("stat\n")
            for s in stats:
                fh.write(_fmt(s) + "\n")
        summary = {
            "command": "experiment",
            "experiment": "clt",
            "n_reps": n_reps,
            "mean": float(stats.mean()),
            "variance": float(stats.var()),
        }
        _write_json(summary, os.path.join(out, "summary.json"))
        return 0

    raise CliError(f"config: unknown experiment {kind!r} (selection, loading, clt)")


def _experiment_grid(cfg: dict, seed: int):
    from .simulate import DgpConfig

    sizes = cfg.get("sizes")
    if sizes is None:
        sizes = [[_need_int(cfg, "T"), _need_int(cfg, "p1"), _need_int(cfg, "p2")]]
    if not isinstance(sizes, list) or not sizes:
        raise CliError("config: sizes must be a non-empty list of [T, p1, p2]")
    noises = cfg.get("noises", [_as_str(cfg, "noise", "normal")])
    if not isinstance(noises, list) or not noises:
        raise CliError("config: noises must be a non-empty list")
    grid = []
    for noise in noises:
        for size in sizes:
            if not (isinstance(size, list) and len(size) == 3):
                raise CliError(f"config: each size must be [T, p1, p2], got {size!r}")
            grid.append(
                DgpConfig(
                    T=size[0], p1=size[1], p2=size[2],
                    k1=_as_int(cfg, "k1", 2),
                    k2=_as_int(cfg, "k2", 3),
                    theta_star=_as_float(cfg, "theta_star", 3.0),
                    noise=noise,
                    ar_coef=_as_float(cfg, "ar_coef", 0.2),
                    seed=seed,
                )
            )
    return grid


_IMPUTE_KEYS = _SOLVER_KEYS + ("tau", "k1", "k2", "out")


def cmd_impute(args) -> int:
    import numpy as np

    from . import estimator

    cfg = _load_config(args.config)
    _check_keys(cfg, _IMPUTE_KEYS)
    out = _out_dir(args, cfg)
    panel = read_panel(args.input)
    tau = _as_float(cfg, "tau", 0.5)
    fit_cfg = estimator.FitConfig(
        k1=_need_int(cfg, "k1"), k2=_need_int(cfg, "k2"), **_fit_options(cfg, args.seed)
    )
    result = estimator.fit(panel, tau, fit_cfg)
    filled = estimator.impute(panel, result)
    write_panel_csv(filled, os.path.join(out, "imputed.csv"))

    missing = ~panel.mask
    report = {
        "command": "impute",
        "tau": tau,
        "k1": fit_cfg.k1,
        "k2": fit_cfg.k2,
        "n_missing": int(missing.sum()),
        "objective": result.objective,
        "converged": result.converged,
    }
    if args.truth is not None:
        truth_panel = read_panel(args.truth)
        if truth_panel.values.shape != panel.values.shape:
            raise CliError(
                f"truth shape {truth_panel.values.shape} does not match "
                f"input shape {panel.values.shape}"
            )
        if missing.any():
            if not truth_panel.mask[missing].all():
                raise CliError("truth panel is missing values at imputed positions")
            errs = filled.values[missing] - truth_panel.values[missing]
            a1 = float(np.sqrt(np.mean(errs**2)))
            a0 = float(np.sqrt(np.mean(truth_panel.values[missing] ** 2)))
            report["a1"] = a1
            report["a0"] = a0
            report["a1_over_a0"] = a1 / a0 if a0 > 0 else float("nan")
        else:
            report["a1"] = report["a0"] = report["a1_over_a0"] = None
    _write_json(report, os.path.join(out, "report.json"))
    return 0 if result.converged else 2


def cmd_similarity(args) -> int:
    import numpy as np

    from . import core

    def load_space(path: str):
        if os.path.isdir(path):
            R = read_matrix_csv(os.path.join(path, "R.csv"))
            C = read_matrix_csv(os.path.join(path, "C.csv"))
            return np.kron(C, R)
        return read_matrix_csv(path)

    A = load_space(args.a)
    B = load_space(args.b)
    if A.shape[0] != B.shape[0]:
        raise CliError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")

    def orthonormal(M):
        # scale so M'M/p = I, the form space_similarity expects
        if np.linalg.matrix_rank(M) < M.shape[1]:
            raise CliError("rank-deficient loading matrix")
        Q, _ = np.linalg.qr(M)
        return np.sqrt(M.shape[0]) * Q

    s = core.space_similarity(orthonormal(A), orthonormal(B))
    print(_fmt(s))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(
            {"command": "similarity", "similarity": s},
            os.path.join(args.out, "similarity.json"),
        )
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mqfactor",
        description="Matrix quantile factor models: estimation, rank selection, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *, input_arg=False, truth_help=None):
        p = sub.add_parser(name, help=help_text)
        if input_arg:
            p.add_argument("--input", required=True, help="panel file (long CSV or JSON manifest)")
        if truth_help:
            p.add_argument("--truth", help=truth_help)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument(
            "--threads", type=int,
            help="BLAS thread count (or set MQFACTOR_THREADS)",
        )
        return p

    add("fit", "estimate loadings and factors at fixed ranks",
        input_arg=True, truth_help="directory with true R.csv/C.csv/F.csv for error reporting")
    add("select", "estimate the number of row and column factors", input_arg=True)
    add("simulate", "generate a synthetic panel with known truth")
    add("experiment", "run a replication study and tabulate results")
    add("impute", "fill missing entries with the fitted common component",
        input_arg=True, truth_help="fully observed panel file for error reporting")
    sim = add("similarity", "column space overlap of two loading files")
    sim.add_argument("a", help="loading matrix CSV, or a fit output directory")
    sim.add_argument("b", help="loading matrix CSV, or a fit output directory")
    return parser


def _configure_threads(args) -> None:
    n = args.threads
    if n is None:
        env = os.environ.get("MQFACTOR_THREADS")
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise CliError(f"MQFACTOR_THREADS must be an integer, got {env!r}")
    if n is None:
        return
    if n < 1:
        raise CliError(f"thread count must be positive, got {n}")
    # must happen before numpy is first imported to take effect
    for var in (
        "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


_DISPATCH = {
    "fit": cmd_fit,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "impute": cmd_impute,
    "similarity": cmd_similarity,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _configure_threads(args)
        return _DISPATCH[args.command](args)
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # validation errors raised by the library surface the same way
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
