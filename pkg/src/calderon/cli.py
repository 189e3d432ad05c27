"""Command line interface.

Every subcommand reads a ``key = value`` config and writes into a run
directory.  Exit codes: 0 success, 2 stage failure (or failing selftest),
3 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io, pipeline, recon
from .config import RunConfig, load_config
from .errors import CalderonError, ConfigError, StageFailure

EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 2, 3

_STOP = {"forward": "forward", "recover-boundary": "recover-boundary", "transfer": "transfer",
         "scatter": "scatter", "pipeline": None}


def _parser():
    p = argparse.ArgumentParser(prog="calderon", description="Conductivity reconstruction from DtN data.")
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--out", type=Path, default=Path("run"), help="run directory")
    p.add_argument("--threads", type=int, help="worker threads for per-k work")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "recover-boundary", "transfer", "scatter", "pipeline"):
        sub.add_parser(name, help=f"run the pipeline{' through ' + name if _STOP[name] else ''}")
    rc = sub.add_parser("reconstruct", help="q̂ grid file → q, w, γ")
    rc.add_argument("--qhat", type=Path, help="scattering grid file (default: run the chain)")
    sub.add_parser("selftest", help="run the invariant checks and print a pass/fail table")
    return p


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig(threads=args.threads or 1)
    return load_config(args.config, threads=args.threads)


def _reconstruct_from_file(cfg: RunConfig, qhat: Path, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    sg = io.read_grid(qhat)
    q = recon.invert_fourier(sg, cfg.R, cfg.grid_n)
    w = recon.solve_w(q, cfg.R, L=cfg.w_L, Nr=cfg.w_Nr, tol=cfg.w_tol)
    g = recon.gamma_from_w(w)
    for name, grid in (("q.grid", q), ("w.grid", w), ("gamma.grid", g)):
        io.write_grid(out / name, grid)
    io.write_pgm(out / "gamma_z.pgm", g.values[:, :, cfg.grid_n // 2].T)


# -- selftest ---------------------------------------------------------------------


def _selftest_checks():
    from . import cgo, faddeev, forward, sphere, transfer

    def dtn_exact():
        d = forward.dtn_radial(forward.ConductivityField.constant(1.0).__class__.radial(
            lambda r: np.ones_like(r), lambda r: np.zeros_like(r)), 16)
        return float(np.max(np.abs(d.eigenvalues - np.arange(17)) / np.maximum(np.arange(17), 1))), 1e-8

    def layer_identity():
        return faddeev.assemble_layers(faddeev.ComplexFrequency.from_frame(6.0, [1, 0, 0], [0, 1, 0]), 8, 1.0) \
            .identity_residual(), 1e-12

    def kernel_scaling():
        rho = faddeev.ComplexFrequency.from_frame(3.0, [1, 0.2, 0], [0, 1, 0.3])
        x = np.array([[0.3, -0.2, 0.5], [1.0, 0.4, -0.1]])
        g = faddeev.eval_g(rho, x)
        return float(np.max(np.abs(2 * faddeev.eval_g(rho.scaled(0.5), 2 * x) - g) / np.abs(g))), 1e-6

    def bie_identity():
        d = forward.harmonic_dtn(8, 1.0)
        p = cgo.build_pair(np.array([1.0, 0, 0]), 5.0, np.array([0, 1.0, 0]))
        return cgo.solve_bie(d, p.rho1).residual, 1e-6

    def transfer_identity():
        one = lambda r: np.ones_like(np.asarray(r, float))
        zero = lambda r: np.zeros_like(np.asarray(r, float))
        gam = forward.ConductivityField.radial(one, zero, R=1.0)
        d = forward.dtn_radial(gam, 8, 1.0)
        gb = sphere.BoundaryField(np.array([np.sqrt(4 * np.pi)] + [0] * 8, complex))
        ext = transfer.extend_conductivity(gb, gb * 0.0, 1.0, 1.5, 2.0)
        res = transfer.transfer_dtn(d, forward.annulus_dtn(ext.field, 8, Nr=12, R1=1.0, R=2.0), shell=ext.field)
        return float(np.max(np.abs(res.dtn.defect))), 1e-12

    def manufactured_w():
        from .grids import PotentialGrid
        m = recon.ManufacturedW(1.0, 0.2)
        out = PotentialGrid.zeros(1.2, 16)
        w = recon.solve_w(m.q, 1.0, L=8, Nr=10, out=out)
        mask = out.radius() < 1
        wt = m.w(out.points())
        return float(np.linalg.norm((w.values - wt)[mask]) / np.linalg.norm(wt[mask])), 1e-5

    def io_roundtrip():
        import tempfile
        d = forward.harmonic_dtn(4, 1.5)
        with tempfile.TemporaryDirectory() as tmp:
            io.write_dtn(Path(tmp) / "a.dtn", d)
            e = io.read_dtn(Path(tmp) / "a.dtn")
        return float(np.max(np.abs(e.eigenvalues - d.eigenvalues))) + abs(e.R - d.R), 0.0

    return [("DtN exactness (γ≡1)", dtn_exact), ("layer trace identity", layer_identity),
            ("Faddeev scaling law", kernel_scaling), ("BIE on γ≡1", bie_identity),
            ("transfer on γ≡1", transfer_identity), ("manufactured w", manufactured_w),
            ("DtN file round trip", io_roundtrip)]


def selftest(stream=None) -> bool:
    stream = sys.stdout if stream is None else stream
    ok_all = True
    stream.write(f"{'check':<28} {'value':>12} {'tol':>10}  status\n")
    for name, fn in _selftest_checks():
        try:
            value, tol = fn()
            ok = bool(value <= tol)
            line = f"{name:<28} {value:12.3e} {tol:10.1e}  {'PASS' if ok else 'FAIL'}"
        except Exception as exc:  # a crashing check is a failing check
            ok = False
            line = f"{name:<28} {'error':>12} {'':>10}  FAIL ({type(exc).__name__}: {exc})"
        ok_all &= ok
        stream.write(line + "\n")
    stream.write(f"selftest {'passed' if ok_all else 'FAILED'}\n")
    return ok_all


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return EXIT_OK if selftest() else EXIT_STAGE
        cfg = _config(args)
        t0 = time.perf_counter()
        if args.command == "reconstruct" and args.qhat is not None:
            _reconstruct_from_file(cfg, args.qhat, args.out)
        else:
            stop = None if args.command == "reconstruct" else _STOP[args.command]
            res = pipeline.run_pipeline(cfg, args.out, stop_after=stop)
            for key in sorted(k for k in res.manifest if k.startswith("error.")):
                print(f"{key} = {res.manifest[key]}")
        logging.getLogger(__name__).info("done in %.1f s", time.perf_counter() - t0)
        print(f"wrote {args.out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except CalderonError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
