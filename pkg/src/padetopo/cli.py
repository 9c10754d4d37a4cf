"""Command-line scenario runners.

Every subcommand reads a YAML scenario file (or the built-in defaults for
its kind), writes the fully resolved configuration next to its results and
emits plain CSV with a header row. Exit codes: 0 success, 2 configuration
error, 3 numerical failure (the failing stage is named on stderr).
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bem, config as cfgmod, mesh as meshmod, oracles, pade, scenarios, sensitivity, subdivision
from .config import ConfigError, ScenarioConfig

log = logging.getLogger(__name__)

__all__ = [
    "NumericalFailure",
    "build_geometry",
    "build_incident",
    "accuracy_window",
    "run_sweep_compare",
    "run_dt_validate",
    "run_optimise",
    "run_mesh_dump",
    "run_oracle",
    "main",
]

SIDECAR = "resolved_config.yaml"


class NumericalFailure(RuntimeError):
    """A numerical stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    """Tag numerical exceptions raised inside the block with a stage name."""
    try:
        yield
    except (ArithmeticError, np.linalg.LinAlgError, sensitivity.GeometryError) as exc:
        raise NumericalFailure(name, exc) from exc


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_geometry(spec: cfgmod.GeometrySpec) -> meshmod.BoundaryMesh:
    """Boundary mesh described by a geometry entry of the config."""
    if spec.kind == "four_scatterers":
        return scenarios.four_scatterers(spec.n_elem, spec.distance, spec.radius, spec.lobes, spec.depth)
    if spec.kind == "dt_validation":
        return scenarios.dt_validation_scatterers(spec.n_elem)
    if spec.kind == "circles":
        try:
            parts = [meshmod.build_circle((x, y), r, int(n)) for x, y, r, n in spec.circles]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"geometry.circles entries must be [x, y, r, n_elem]: {exc}") from exc
        return meshmod.concatenate(parts) if parts else meshmod.empty_mesh()
    if spec.kind == "mesh_csv":
        try:
            return meshmod.BoundaryMesh.from_csv(spec.path)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read mesh {spec.path}: {exc}") from exc
    return meshmod.empty_mesh()


def build_incident(cfg: ScenarioConfig) -> bem.PlaneWave:
    d = np.asarray(cfg.incident.direction, dtype=float)
    if d.shape != (2,) or not np.linalg.norm(d) > 0:
        raise ConfigError("incident.direction must be a nonzero [x, y] vector")
    d = d / np.linalg.norm(d)
    return bem.PlaneWave((float(d[0]), float(d[1])), cfg.incident.amplitude)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    """CSV with a header row; floats at full double precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def accuracy_window(omegas, approx, ref, omega0: float, threshold: float):
    """Contiguous grid interval around ``omega0`` where ``|approx - ref| < threshold``.

    Returns ``(lo, hi)``; both are NaN when the grid point nearest
    ``omega0`` already fails.
    """
    om = np.asarray(omegas, dtype=float)
    ok = np.abs(np.asarray(approx) - np.asarray(ref)) < threshold
    i0 = int(np.argmin(np.abs(om - omega0)))
    if not ok[i0]:
        return float("nan"), float("nan")
    a = i0
    while a > 0 and ok[a - 1]:
        a -= 1
    b = i0
    while b < om.size - 1 and ok[b + 1]:
        b += 1
    return float(om[a]), float(om[b])


def _prepare(cfg: ScenarioConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / SIDECAR)
    return out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _approximations(uj, K: int, omega0: float, om):
    """Indirect [K/2, K/2], direct [K/2, K/2] and order-K Taylor estimates of f on ``om``."""
    m = K // 2
    fc = pade.f_coefficients(uj[: K + 1])
    out = {}
    try:
        out["indirect"] = sum(pade.indirect_fit(uj[: K + 1, i], m, m, omega0).rf(om) for i in range(uj.shape[1]))
    except ArithmeticError as exc:
        log.warning("indirect fit of order %d failed: %s", K, exc)
        out["indirect"] = np.full(om.shape, np.nan)
    try:
        pa = pade.fit_with_fallback(fc[: K + 1], m, m, omega0)
        out["direct"] = np.real(pade.eval_rational(pa.p.real, pa.q.real, omega0, om))
    except ArithmeticError as exc:
        log.warning("direct fit of order %d failed: %s", K, exc)
        out["direct"] = np.full(om.shape, np.nan)
    out["taylor"] = pade.horner(fc[: K + 1], om - omega0).real
    return out


def run_sweep_compare(cfg: ScenarioConfig, out) -> dict:
    """f on a dense grid with indirect, direct and Taylor estimates and their accuracy windows.

    Writes ``approximations.csv`` (one column per method and order) and
    ``windows.csv``; returns the windows as ``{(method, order): (lo, hi)}``.
    """
    sc = cfg.sweep_compare
    if any(k % 2 or k < 2 for k in sc.orders):
        raise ConfigError("sweep_compare.orders must be even and >= 2")
    out = _prepare(cfg, out)
    mesh = build_geometry(cfg.geometry)
    inc = build_incident(cfg)
    obs = np.asarray(cfg.obs, dtype=float)
    c = cfg.incident.c
    om = np.linspace(sc.grid[0], sc.grid[1], int(sc.grid[2]))
    with stage("reference-sweep"):
        u = oracles.sweep_responses(mesh, om, inc, obs, c)
    f = 0.5 * np.sum(np.abs(u) ** 2, axis=1)
    K = max(sc.orders)
    with stage("jets"):
        op = bem.assemble(mesh, sc.omega0, K, c)
        uj = bem.eval_field(bem.solve_primal(op, inc), obs).u[:, :, 0]
    header, cols, windows = ["omega", "f_bem"], [om, f], {}
    with stage("approximation"):
        for k in sorted(sc.orders):
            for method, g in _approximations(uj, k, sc.omega0, om).items():
                header.append(f"{method}_{k}")
                cols.append(g)
                windows[(method, k)] = accuracy_window(om, g, f, sc.omega0, sc.threshold)
    write_csv(out / "approximations.csv", header, zip(*cols))
    write_csv(out / "windows.csv", ["method", "order", "lo", "hi", "width"],
              [(m, k, lo, hi, hi - lo) for (m, k), (lo, hi) in sorted(windows.items())])
    return windows


def run_dt_validate(cfg: ScenarioConfig, out, with_fd: bool = True) -> dict:
    """Chain-rule D_T J against the hole-insertion finite difference.

    Writes ``dtj.csv`` (per point), ``ranges.csv`` (per-point validity
    range at the band centre), ``dtf_curves.csv`` (chain-rule and
    finite-difference D_T f for the configured curve points) and
    ``summary.json``.
    """
    dv = cfg.dt_validate
    out = _prepare(cfg, out)
    mesh = build_geometry(cfg.geometry)
    inc = build_incident(cfg)
    obs = np.asarray(cfg.obs, dtype=float)
    pts = np.asarray(cfg.points if cfg.points else scenarios.dt_validation_points(), dtype=float)
    M, N = cfg.degrees
    c = cfg.incident.c
    band = tuple(cfg.band)
    mid = 0.5 * (band[0] + band[1])
    with stage("sweep"):
        res = subdivision.sweep(mesh, band, inc, obs, pts, M, N, cfg.delta, c, max_points=max(64, len(pts)))
    with stage("validity-range"):
        rj = sensitivity.response_jets(bem.assemble(mesh, mid, M + N, c), inc, obs, pts)
        full = subdivision.dt_f_estimate(rj, M, N)
        red = subdivision.dt_f_estimate(rj, M - 1, N - 1)
        _, left, right = subdivision.valid_range(lambda w: subdivision.dt_f_error(w, full, red), band, mid,
                                                 cfg.delta, per_point=True)
    write_csv(out / "ranges.csv", ["point", "x", "y", "lo", "hi"],
              [(i, *pts[i], left[i], right[i]) for i in range(len(pts))])

    curve_idx = [i for i in dv.curve_points if 0 <= i < len(pts)]
    curve_om = np.linspace(band[0], band[1], dv.n_curve)
    chain = np.zeros((curve_om.size, len(curve_idx)))
    if curve_idx:
        with stage("dtf-curves"):
            edges = res.plan.edges
            for k, centre in enumerate(res.plan.centres):
                sel = (curve_om >= edges[k]) & ((curve_om < edges[k + 1]) | (k == res.plan.n_div - 1))
                rjk = sensitivity.response_jets(bem.assemble(mesh, centre, M + N, c), inc, obs, pts[curve_idx])
                chain[sel] = subdivision.dt_f_estimate(rjk, M, N).dt_f(curve_om[sel])
    rows = [("chain", i, w, chain[j, n]) for n, i in enumerate(curve_idx) for j, w in enumerate(curve_om)]

    summary = {"J": res.J, "n_div": res.plan.n_div, "plan": res.plan.to_dict(), "n_points": len(pts),
               "f_discrepancy": res.f_discrepancy}
    fd = np.full(len(pts), np.nan)
    fd2 = np.full(len(pts), np.nan)
    if with_fd:
        with stage("finite-difference"):
            fd, fd_om, Df = sensitivity.fd_topological_derivative(mesh, pts, dv.eps, band, inc, obs, dv.n_quad, c,
                                                                   dv.n_hole)
            if dv.eps2:
                fd2, _, _ = sensitivity.fd_topological_derivative(mesh, pts, dv.eps2, band, inc, obs, dv.n_quad, c,
                                                                   dv.n_hole)
        rows += [("fd", i, w, Df[j, i]) for i in curve_idx for j, w in enumerate(fd_om)]
        dev = np.abs(res.DJ - fd)
        tol = np.maximum(0.01, 0.02 * np.abs(fd))
        summary.update({"max_abs_dev": float(dev.max()), "max_abs_fd": float(np.abs(fd).max()),
                        "n_agree": int(np.sum(dev <= tol))})
    # epsilon -> 0 by Richardson extrapolation assuming an eps^2 error term
    e1, e2 = dv.eps**2, (dv.eps2 or 0.0) ** 2
    fd0 = (e2 * fd - e1 * fd2) / (e2 - e1) if e2 else np.full(len(pts), np.nan)
    write_csv(out / "dtf_curves.csv", ["method", "point", "omega", "dt_f"], rows)
    write_csv(out / "dtj.csv", ["point", "x", "y", "inside", "chain", "fd", "fd_eps2", "fd_extrapolated"],
              [(i, *pts[i], bool(res.inside[i]), res.DJ[i], fd[i], fd2[i], fd0[i]) for i in range(len(pts))])
    write_json(out / "summary.json", summary)
    return summary


def optimiser_settings(cfg: ScenarioConfig):
    from .optimizer import OptimiserSettings

    op = cfg.optimiser
    return OptimiserSettings(domain=tuple(map(tuple, op.domain)), band=tuple(cfg.band),
                             obs=np.asarray(cfg.obs, dtype=float), degrees=tuple(cfg.degrees), delta=cfg.delta,
                             maximise=op.maximise, shape=tuple(op.shape), dt=op.dt, max_steps=op.max_steps,
                             tol=op.tol, window=op.window, contour_grid=op.contour_grid,
                             element_size=op.element_size, direction=tuple(build_incident(cfg).direction),
                             c=cfg.incident.c, max_points=op.max_points, max_div=op.max_div)


def run_optimise(cfg: ScenarioConfig, out) -> dict:
    """Level-set optimisation with per-step outputs and a cost summary."""
    from . import optimizer

    out = _prepare(cfg, out)
    settings = optimiser_settings(cfg)
    settings.output = str(out)
    with stage("optimise"):
        hist, final = optimizer.run(settings, build_incident(cfg))
    final.to_csv(out / "final_mesh.csv")
    recs = hist.records
    summary = {"status": hist.status, "steps": len(recs), "J_first": float(hist.J[0]), "J_last": float(hist.J[-1]),
               "mean_n_div": float(np.mean(hist.n_div)),
               "mean_interval_time": float(np.mean([r.interval_time for r in recs])),
               "mean_step_time": float(np.mean([r.wall_time for r in recs]))}
    write_json(out / "summary.json", summary)
    return summary


def run_mesh_dump(cfg: ScenarioConfig, out) -> dict:
    """Write the configured geometry as mesh CSV with its diagnostics."""
    out = _prepare(cfg, out)
    mesh = build_geometry(cfg.geometry)
    mesh.to_csv(out / "mesh.csv")
    diag = meshmod.validate(mesh) if mesh.n_elements else None
    info = {"n_elements": mesh.n_elements, "n_loops": len(mesh.loops),
            "ok": bool(diag.ok) if diag else True,
            "min_length": diag.min_length if diag else None, "max_length": diag.max_length if diag else None}
    write_json(out / "mesh_info.json", info)
    return info


def run_oracle(cfg: ScenarioConfig, out, kind: str = "trapezoid", n_quad: int = 100) -> dict:
    """Standalone reference computations: trapezoid objective or finite-difference D_T J."""
    out = _prepare(cfg, out)
    mesh = build_geometry(cfg.geometry)
    inc = build_incident(cfg)
    obs = np.asarray(cfg.obs, dtype=float)
    c = cfg.incident.c
    if kind == "trapezoid":
        with stage("trapezoid-oracle"):
            J, om, f = oracles.trapezoid_objective(mesh, tuple(cfg.band), inc, obs, n_quad, c)
        write_csv(out / "oracle_f.csv", ["omega", "f"], zip(om, f))
        result = {"J": float(J), "n_quad": n_quad}
    elif kind == "fd":
        pts = np.asarray(cfg.points if cfg.points else scenarios.dt_validation_points(), dtype=float)
        dv = cfg.dt_validate
        with stage("finite-difference"):
            DJ, _, _ = sensitivity.fd_topological_derivative(mesh, pts, dv.eps, tuple(cfg.band), inc, obs, n_quad,
                                                             c, dv.n_hole)
        write_csv(out / "oracle_dtj.csv", ["point", "x", "y", "fd"], [(i, *pts[i], DJ[i]) for i in range(len(pts))])
        result = {"n_points": len(pts), "n_quad": n_quad, "eps": dv.eps}
    else:
        raise ConfigError(f"unknown oracle kind {kind!r}")
    write_json(out / "oracle.json", result)
    return result


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

DEFAULT_KIND = {"sweep-compare": "sweep-compare", "dt-validate": "dt-validate", "optimise": "optimise-shield",
                "mesh-dump": "custom", "oracle": "custom"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="padetopo", description="Pade-accelerated wide-band acoustic topology tools")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("sweep-compare", "compare indirect, direct and Taylor estimates of f"),
                       ("dt-validate", "chain-rule D_T J against finite differences"),
                       ("optimise", "level-set optimisation"),
                       ("mesh-dump", "write the configured geometry as CSV"),
                       ("oracle", "trapezoid or finite-difference reference values")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("-c", "--config", help="YAML scenario file (defaults for the subcommand if omitted)")
        s.add_argument("-o", "--output", help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, help="cap on BLAS/LAPACK threads")
        if name == "optimise":
            s.add_argument("--scenario", choices=["optimise-shield", "optimise-lens"],
                           help="default scenario when no config is given")
        if name == "dt-validate":
            s.add_argument("--no-fd", action="store_true", help="skip the finite-difference oracle")
        if name == "oracle":
            s.add_argument("--kind", choices=["trapezoid", "fd"], default="trapezoid")
            s.add_argument("--n-quad", type=int, default=100)
    return p


def _resolve(args) -> ScenarioConfig:
    if args.config:
        cfg = cfgmod.load(args.config)
    else:
        kind = getattr(args, "scenario", None) or DEFAULT_KIND[args.command]
        cfg = cfgmod.default_config(kind).validate()
    if args.output:
        cfg.output = args.output
    return cfg


def _dispatch(args, cfg):
    if args.command == "sweep-compare":
        run_sweep_compare(cfg, cfg.output)
    elif args.command == "dt-validate":
        run_dt_validate(cfg, cfg.output, with_fd=not args.no_fd)
    elif args.command == "optimise":
        run_optimise(cfg, cfg.output)
    elif args.command == "mesh-dump":
        run_mesh_dump(cfg, cfg.output)
    else:
        if args.n_quad < 2:
            raise ConfigError("--n-quad must be at least 2")
        run_oracle(cfg, cfg.output, args.kind, args.n_quad)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        cfg = _resolve(args)
        limits = contextlib.nullcontext()
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            from threadpoolctl import threadpool_limits

            limits = threadpool_limits(args.threads)
        with limits:
            _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure in stage {exc.stage}: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
