"""Command-line front end: degrade, restore, evaluate, sweep, bench.

Configuration files and manifests share one grammar: flat ``key = value``
lines, UTF-8, ``#`` comments.  Unknown keys are hard errors so a typo in a
lambda name cannot silently fall back to a default.  Every command writes
a manifest sufficient to re-run it bit-identically (wall-clock fields
aside); informational manifest keys are recognized and ignored on input.

Exit codes: 0 success, 2 validation (bad flags, bad config, malformed
input files), 3 I/O, 4 solver divergence, 5 inner-solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, blur, metrics, relaxed, solver
from .grid import ImageGrid, PgmError, load_pgm, save_pgm
from .nonlocalops import apply_frac_p_laplacian, build_plan

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_NONCONVERGENCE = 5

REPORT_HEADER = (
    "image,kernel,sigma,seed,psnr_degraded,ssim_degraded,"
    "psnr_restored,ssim_restored,steps,wall_ms"
)
HISTORY_HEADER = "step,psnr,residual,umin,umax,wall_ms"

# Keys a manifest may carry beyond a command's inputs; accepted and ignored
# when a manifest is replayed through --config.
_INFO_KEYS = {
    "command",
    "tool_version",
    "noise_generator",
    "wall_ms",
    "psnr_degraded",
    "ssim_degraded",
    "psnr_restored",
    "ssim_restored",
    "steps_taken",
    "best_psnr",
}

_KERNEL_KEYS = {"kernel", "radius", "size", "length", "angle"}
_SOLVER_KEYS = {
    "dt", "delta", "gamma", "s", "p",
    "lambda1", "lambda2", "lambda3",
    "eps", "e", "h",
    "nonlocal_mode", "nonlocal_radius", "exclusion", "max_steps",
    "stop", "steps", "tol", "patience",
}

_COMMAND_KEYS = {
    "degrade": {"input", "output", "sigma", "seed", "noise_file"} | _KERNEL_KEYS,
    "restore": {"input", "output", "reference", "history", "snapshot_every",
                "snapshot_dir"} | _KERNEL_KEYS | _SOLVER_KEYS,
    "sweep": {"input", "reference", "grid", "output"} | _KERNEL_KEYS | _SOLVER_KEYS,
}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse the flat ``key = value`` grammar (shared by configs and manifests)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, allowed: set[str]) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        entries = parse_kv_text(fh.read())
    unknown = set(entries) - allowed - _INFO_KEYS
    if unknown:
        raise ValueError(
            f"unknown config keys in {path}: {', '.join(sorted(unknown))}"
        )
    return {k: v for k, v in entries.items() if k not in _INFO_KEYS}


def write_manifest(path, entries: list[tuple[str, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries:
            if value is None:
                continue
            fh.write(f"{key} = {value}\n")


def _fmt(value) -> object:
    return repr(value) if isinstance(value, float) else value


class _Resolver:
    """Merge precedence: flags beat config file beats defaults."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self.args = args
        self.config = config

    def get(self, key: str, cast, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.config:
            raw = self.config[key]
            try:
                return cast(raw)
            except ValueError:
                raise ValueError(f"config key {key} = {raw!r}: not a valid {cast.__name__}")
        return default

    def require(self, key: str, cast, what: str):
        value = self.get(key, cast)
        if value is None:
            raise ValueError(f"missing required {what} (flag --{key.replace('_', '-')} or config key {key})")
        return value


def _build_kernel(res: _Resolver) -> blur.BlurKernel:
    kind = res.get("kernel", str, "identity")
    if kind == "identity":
        return blur.make_average_kernel(1)
    if kind == "average":
        return blur.make_average_kernel(res.require("size", int, "average kernel size"))
    if kind == "disk":
        return blur.make_disk_kernel(res.require("radius", float, "disk radius"))
    if kind == "motion":
        return blur.make_motion_kernel(
            res.require("length", float, "motion length"),
            res.require("angle", float, "motion angle"),
        )
    raise ValueError(f"unknown kernel kind {kind!r}")


def _kernel_entries(kernel: blur.BlurKernel) -> list[tuple[str, object]]:
    rows = [("kernel", kernel.kind)]
    if kernel.kind == "average":
        rows.append(("size", kernel.params[0]))
    elif kernel.kind == "disk":
        rows.append(("radius", _fmt(float(kernel.params[0]))))
    elif kernel.kind == "motion":
        rows.append(("length", _fmt(float(kernel.params[0]))))
        rows.append(("angle", _fmt(float(kernel.params[1]))))
    return rows


def _build_solver_config(res: _Resolver, reference: ImageGrid | None) -> solver.SolverConfig:
    stop_mode = res.get("stop", str, "oracle" if reference is not None else "fixed")
    if stop_mode == "oracle":
        if reference is None:
            raise ValueError("oracle stopping requires --reference")
        policy = solver.StoppingPolicy.oracle(
            reference, patience=res.get("patience", int, 5)
        )
    elif stop_mode == "fixed":
        policy = solver.StoppingPolicy.fixed(res.get("steps", int, 100))
    elif stop_mode == "residual":
        policy = solver.StoppingPolicy.residual(res.require("tol", float, "residual tolerance"))
    else:
        raise ValueError(f"unknown stopping mode {stop_mode!r}")

    return solver.SolverConfig(
        dt=res.get("dt", float, 0.01),
        delta=res.get("delta", float, 0.28),
        gamma=res.get("gamma", float, 1.33),
        s=res.get("s", float, 0.8),
        p=res.get("p", float, 1.0),
        lambda1=res.get("lambda1", float, 0.0),
        lambda2=res.get("lambda2", float, 0.15),
        lambda3=res.get("lambda3", float, 5.0),
        eps=res.get("eps", int, 0),
        e=res.get("e", float, 1e-8),
        h=res.get("h", float, 1.0),
        nonlocal_mode=res.get("nonlocal_mode", str, "auto"),
        radius=res.get("nonlocal_radius", int, 15),
        exclusion=res.get("exclusion", str, "center"),
        max_steps=res.get("max_steps", int, 1000),
        stop=policy,
    )


def _solver_entries(cfg: solver.SolverConfig, res: _Resolver) -> list[tuple[str, object]]:
    rows = [
        ("dt", _fmt(cfg.dt)), ("delta", _fmt(cfg.delta)), ("gamma", _fmt(cfg.gamma)),
        ("s", _fmt(cfg.s)), ("p", _fmt(cfg.p)),
        ("lambda1", _fmt(cfg.lambda1)), ("lambda2", _fmt(cfg.lambda2)),
        ("lambda3", _fmt(cfg.lambda3)),
        ("eps", cfg.eps), ("e", _fmt(cfg.e)), ("h", _fmt(cfg.h)),
        ("nonlocal_mode", cfg.nonlocal_mode), ("nonlocal_radius", cfg.radius),
        ("exclusion", cfg.exclusion), ("max_steps", cfg.max_steps),
        ("stop", cfg.stop.mode),
    ]
    if cfg.stop.mode == "fixed":
        rows.append(("steps", cfg.stop.steps))
    elif cfg.stop.mode == "residual":
        rows.append(("tol", _fmt(cfg.stop.tol)))
    else:
        rows.append(("patience", cfg.stop.patience))
    return rows


def cmd_degrade(args: argparse.Namespace) -> int:
    config = load_config(args.config, _COMMAND_KEYS["degrade"]) if args.config else {}
    res = _Resolver(args, config)
    in_path = args.input or res.require("input", str, "input image")
    out_path = res.require("output", str, "output path")
    sigma = res.get("sigma", float, 3.0)
    seed = res.get("seed", int, 0)
    noise_file = res.get("noise_file", str)

    t0 = time.perf_counter()
    clean = load_pgm(in_path)
    kernel = _build_kernel(res)
    spec = blur.DegradationSpec(kernel=kernel, sigma=sigma, seed=seed)
    noise = blur.load_noise_file(noise_file, clean.rows, clean.cols) if noise_file else None
    degraded = blur.degrade(clean, spec, noise=noise)
    save_pgm(degraded, out_path)
    wall_ms = (time.perf_counter() - t0) * 1e3

    entries = [
        ("command", "degrade"),
        ("input", in_path),
        ("output", out_path),
        *_kernel_entries(kernel),
        ("sigma", _fmt(sigma)),
        ("seed", seed),
        ("noise_file", noise_file),
        ("noise_generator", blur.NOISE_GENERATOR),
        ("tool_version", __version__),
        ("wall_ms", _fmt(wall_ms)),
    ]
    write_manifest(out_path + ".manifest", entries)
    print(f"degraded {in_path} -> {out_path} (kernel={kernel.kind}, sigma={sigma}, seed={seed})")
    return EXIT_OK


def _write_history(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for rec in history:
            psnr_txt = "" if math.isnan(rec.psnr) else repr(rec.psnr)
            fh.write(
                f"{rec.step},{psnr_txt},{rec.residual!r},"
                f"{rec.umin!r},{rec.umax!r},{rec.wall_ms!r}\n"
            )


def cmd_restore(args: argparse.Namespace) -> int:
    config = load_config(args.config, _COMMAND_KEYS["restore"]) if args.config else {}
    res = _Resolver(args, config)
    in_path = args.input or res.require("input", str, "degraded image")
    out_path = res.require("output", str, "output path")
    ref_path = res.get("reference", str)

    t0 = time.perf_counter()
    degraded = load_pgm(in_path)
    reference = load_pgm(ref_path) if ref_path else None
    kernel = _build_kernel(res)
    cfg = _build_solver_config(res, reference)

    result = solver.run(
        degraded, cfg, kernel,
        snapshot_every=res.get("snapshot_every", int, 0),
        snapshot_dir=res.get("snapshot_dir", str),
    )
    save_pgm(result.state.u, out_path)
    wall_ms = (time.perf_counter() - t0) * 1e3

    history_path = res.get("history", str, out_path + ".history.csv")
    _write_history(history_path, result.history)

    entries = [
        ("command", "restore"),
        ("input", in_path),
        ("output", out_path),
        ("reference", ref_path),
        ("history", history_path),
        *_kernel_entries(kernel),
        *_solver_entries(cfg, res),
        ("tool_version", __version__),
        ("steps_taken", result.state.step),
        ("wall_ms", _fmt(wall_ms)),
    ]
    if reference is not None:
        entries += [
            ("psnr_degraded", _fmt(metrics.psnr(degraded, reference))),
            ("ssim_degraded", _fmt(metrics.ssim(degraded, reference))),
            ("psnr_restored", _fmt(metrics.psnr(result.state.u, reference))),
            ("ssim_restored", _fmt(metrics.ssim(result.state.u, reference))),
        ]
    write_manifest(out_path + ".manifest", entries)

    if reference is not None:
        print(
            f"restored {in_path} -> {out_path}: "
            f"psnr {metrics.psnr(degraded, reference):.2f} -> "
            f"{metrics.psnr(result.state.u, reference):.2f} dB "
            f"({result.state.step} steps)"
        )
    else:
        print(f"restored {in_path} -> {out_path} ({result.state.step} steps)")
    if result.exhausted:
        print("warning: residual tolerance not reached within max_steps", file=sys.stderr)
    return EXIT_OK


def _append_report_row(path, row: dict[str, object]) -> None:
    columns = REPORT_HEADER.split(",")
    new = False
    try:
        with open(path, "r", encoding="utf-8") as fh:
            new = fh.readline().strip() != REPORT_HEADER
    except FileNotFoundError:
        new = True
    with open(path, "a", encoding="utf-8", newline="") as fh:
        if new:
            fh.write(REPORT_HEADER + "\n")
        fh.write(",".join(str(row.get(c, "")) for c in columns) + "\n")


def cmd_evaluate(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    reference = load_pgm(args.reference)
    image = load_pgm(args.image)
    report = metrics.evaluate_pair(image, reference)
    print(f"psnr = {report.psnr!r}")
    print(f"ssim = {report.ssim!r}")

    if args.csv:
        row: dict[str, object] = {
            "image": args.image,
            "kernel": args.kernel_label or "",
            "sigma": "" if args.sigma is None else repr(args.sigma),
            "seed": "" if args.seed is None else args.seed,
            "psnr_restored": repr(report.psnr),
            "ssim_restored": repr(report.ssim),
            "steps": "" if args.steps is None else args.steps,
            "wall_ms": repr((time.perf_counter() - t0) * 1e3),
        }
        if args.degraded:
            deg = load_pgm(args.degraded)
            row["psnr_degraded"] = repr(metrics.psnr(deg, reference))
            row["ssim_degraded"] = repr(metrics.ssim(deg, reference))
        _append_report_row(args.csv, row)
    return EXIT_OK


def _load_sweep_grid(path) -> list[dict[str, float]]:
    allowed = ("lambda1", "lambda2", "lambda3", "gamma", "s")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"sweep grid {path} is empty")
        unknown = set(reader.fieldnames) - set(allowed)
        if unknown:
            raise ValueError(
                f"unknown sweep grid columns: {', '.join(sorted(unknown))} "
                f"(allowed: {', '.join(allowed)})"
            )
        rows = []
        for rec in reader:
            rows.append({k: float(v) for k, v in rec.items() if v not in (None, "")})
    if not rows:
        raise ValueError(f"sweep grid {path} lists no parameter tuples")
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, _COMMAND_KEYS["sweep"]) if args.config else {}
    res = _Resolver(args, config)
    in_path = args.input or res.require("input", str, "degraded image")
    ref_path = args.reference or res.require("reference", str, "reference image")
    grid_path = res.require("grid", str, "sweep grid file")
    out_path = res.require("output", str, "output CSV path")

    degraded = load_pgm(in_path)
    reference = load_pgm(ref_path)
    kernel = _build_kernel(res)
    base = _build_solver_config(res, reference)
    tuples = _load_sweep_grid(grid_path)

    results = []
    for i, overrides in enumerate(tuples):
        cfg = replace(base, **overrides)
        run = solver.run(degraded, cfg, kernel)
        rest = run.state.u
        results.append(
            {
                "lambda1": cfg.lambda1,
                "lambda2": cfg.lambda2,
                "lambda3": cfg.lambda3,
                "gamma": cfg.gamma,
                "s": cfg.s,
                "psnr": metrics.psnr(rest, reference),
                "ssim": metrics.ssim(rest, reference),
                "steps": run.state.step,
            }
        )
        print(
            f"tuple {i}: lambda=({cfg.lambda1}, {cfg.lambda2}, {cfg.lambda3}) "
            f"gamma={cfg.gamma} s={cfg.s} -> psnr {results[-1]['psnr']:.2f} dB, "
            f"ssim {results[-1]['ssim']:.4f}, {run.state.step} steps"
        )

    best = max(range(len(results)), key=lambda i: results[i]["psnr"])
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("lambda1,lambda2,lambda3,gamma,s,psnr,ssim,steps,best\n")
        for i, r in enumerate(results):
            fh.write(
                f"{r['lambda1']!r},{r['lambda2']!r},{r['lambda3']!r},"
                f"{r['gamma']!r},{r['s']!r},{r['psnr']!r},{r['ssim']!r},"
                f"{r['steps']},{1 if i == best else 0}\n"
            )
    print(f"best tuple: row {best} (psnr {results[best]['psnr']:.2f} dB) -> {out_path}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(t) for t in args.sizes.split(",")]
    modes = args.modes.split(",")
    ps = [float(t) for t in args.p.split(",")]
    reps = args.reps
    rng = np.random.default_rng(0)
    rows = []
    for size in sizes:
        w = ImageGrid(rng.uniform(0, 255, (size, size)))
        dense_out: dict[float, np.ndarray] = {}
        for mode_spec in modes:
            if mode_spec.startswith("truncated"):
                mode = "truncated"
                radius = int(mode_spec.split(":", 1)[1]) if ":" in mode_spec else 15
            else:
                mode, radius = mode_spec, 15
            for p in ps:
                if mode == "fft_p2" and p != 2.0:
                    continue
                plan = build_plan(size, size, 1.0, 0.8, p, mode, radius=radius)
                out = apply_frac_p_laplacian(plan, w)  # warm-up/compile
                t0 = time.perf_counter()
                for _ in range(reps):
                    out = apply_frac_p_laplacian(plan, w)
                ms = (time.perf_counter() - t0) * 1e3 / reps
                if mode == "dense":
                    dense_out[p] = out.data
                diff = ""
                if mode != "dense" and p in dense_out:
                    diff = repr(float(np.max(np.abs(out.data - dense_out[p]))))
                rows.append((size, mode_spec, p, ms, diff))
                print(f"{size:5d}  {mode_spec:14s} p={p}: {ms:9.2f} ms/step")
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write("size,mode,p,ms_per_step,max_abs_diff_vs_dense\n")
            for size, mode, p, ms, diff in rows:
                fh.write(f"{size},{mode},{p!r},{ms!r},{diff}\n")
    return EXIT_OK


def _add_kernel_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--kernel", choices=["identity", "average", "disk", "motion"],
                    help="blur kernel kind (default identity)")
    sp.add_argument("--size", type=int, help="average kernel size (odd)")
    sp.add_argument("--radius", type=float, help="disk kernel radius")
    sp.add_argument("--length", type=float, help="motion kernel length")
    sp.add_argument("--angle", type=float, help="motion kernel angle (radians)")


def _add_solver_flags(sp: argparse.ArgumentParser) -> None:
    for name, typ in [
        ("dt", float), ("delta", float), ("gamma", float), ("s", float), ("p", float),
        ("lambda1", float), ("lambda2", float), ("lambda3", float),
        ("eps", int), ("e", float), ("h", float),
        ("nonlocal-radius", int), ("max-steps", int),
        ("steps", int), ("tol", float), ("patience", int),
    ]:
        sp.add_argument(f"--{name}", type=typ)
    sp.add_argument("--nonlocal-mode", choices=["auto", "dense", "truncated", "fft_p2"])
    sp.add_argument("--exclusion", choices=["center", "axes"])
    sp.add_argument("--stop", choices=["oracle", "fixed", "residual"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbfrac",
        description="Forward-backward / fractional reaction-diffusion image restoration",
    )
    parser.add_argument("--version", action="version", version=f"fbfrac {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    dg = sub.add_parser("degrade", help="blur and add seeded Gaussian noise")
    dg.add_argument("input", nargs="?", help="clean PGM")
    dg.add_argument("--output", "-o", help="degraded PGM path")
    dg.add_argument("--sigma", type=float, help="noise standard deviation (default 3)")
    dg.add_argument("--seed", type=int, help="noise seed (default 0)")
    dg.add_argument("--noise-file", help="raw little-endian float64 noise field")
    dg.add_argument("--config", help="key = value config/manifest file")
    _add_kernel_flags(dg)
    dg.set_defaults(func=cmd_degrade)

    rs = sub.add_parser("restore", help="run the restoration scheme")
    rs.add_argument("input", nargs="?", help="degraded PGM")
    rs.add_argument("--output", "-o", help="restored PGM path")
    rs.add_argument("--reference", help="clean PGM for oracle stopping/metrics")
    rs.add_argument("--history", help="per-step history CSV path")
    rs.add_argument("--snapshot-every", type=int, help="dump u, w every k steps")
    rs.add_argument("--snapshot-dir", help="directory for snapshots")
    rs.add_argument("--config", help="key = value config file")
    _add_kernel_flags(rs)
    _add_solver_flags(rs)
    rs.set_defaults(func=cmd_restore)

    ev = sub.add_parser("evaluate", help="PSNR/SSIM of an image against a reference")
    ev.add_argument("reference", help="reference PGM")
    ev.add_argument("image", help="image PGM to score")
    ev.add_argument("--csv", help="append a report row to this CSV")
    ev.add_argument("--degraded", help="degraded PGM for the degraded columns")
    ev.add_argument("--kernel-label", help="kernel column value for the report")
    ev.add_argument("--sigma", type=float, help="sigma column value")
    ev.add_argument("--seed", type=int, help="seed column value")
    ev.add_argument("--steps", type=int, help="steps column value")
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="restore once per parameter tuple")
    sw.add_argument("input", nargs="?", help="degraded PGM")
    sw.add_argument("reference", nargs="?", help="clean PGM")
    sw.add_argument("--grid", help="CSV of parameter tuples (lambda1,lambda2,lambda3,gamma,s)")
    sw.add_argument("--output", "-o", help="sweep results CSV")
    sw.add_argument("--config", help="key = value config file")
    _add_kernel_flags(sw)
    _add_solver_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    bn = sub.add_parser("bench", help="time the nonlocal backends")
    bn.add_argument("--sizes", default="64,128", help="comma-separated grid sizes")
    bn.add_argument("--modes", default="dense,truncated:15",
                    help="comma-separated modes (dense, truncated:R, fft_p2)")
    bn.add_argument("--p", default="1", help="comma-separated exponents")
    bn.add_argument("--reps", type=int, default=3, help="timing repetitions")
    bn.add_argument("--output", "-o", help="bench CSV path")
    bn.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PgmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except solver.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except relaxed.InnerSolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
