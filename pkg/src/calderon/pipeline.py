"""End-to-end reconstruction: Λγ → boundary values → extension → Λ̃ → q̂ → q → w → γ."""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cgo, io, recon, sphere
from .config import RunConfig
from .errors import CalderonError, StageFailure
from .forward import ConductivityField, DtNMap, annulus_dtn, dtn_radial, gaussian_profile, poly_bump_profile
from .grids import PotentialGrid, ScatteringGrid
from .probe import probe_ladder, recover_gamma_boundary, recover_gradient_boundary, required_degree, tangent_frame
from .sphere import BoundaryField
from .transfer import extend_conductivity, transfer_dtn

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    out: Path
    manifest: dict
    artifacts: dict = field(default_factory=dict)
    gamma: PotentialGrid | None = None
    truth: object = None


def synthetic_conductivity(cfg: RunConfig) -> ConductivityField:
    """The radial truth named by the configuration, on B_{R1}."""
    if cfg.gamma == "unit":
        return ConductivityField.radial(lambda r: np.ones_like(np.asarray(r, float)),
                                        lambda r: np.zeros_like(np.asarray(r, float)), R=cfg.R1, label="unit")
    if cfg.gamma == "bump":
        f, df = poly_bump_profile(cfg.gamma_amplitude, cfg.gamma_support, cfg.gamma_power)
        return ConductivityField.radial(f, df, R=cfg.R1, R0=min(cfg.gamma_support, cfg.R1),
                                        breakpoints=(cfg.gamma_support,), label="bump")
    f, df = gaussian_profile(cfg.gamma_amplitude, cfg.gamma_center, cfg.gamma_width)
    return ConductivityField.radial(f, df, R=cfg.R1, label="gaussian")


def k_grid_half(n: int):
    """Indices of a k-grid with one representative of every ±k pair (the centre included)."""
    idx = np.indices((n,) * 3).reshape(3, -1).T
    flat = idx @ np.array([n * n, n, 1])
    mirror = (n - 1 - idx) @ np.array([n * n, n, 1])
    return idx[flat <= mirror]


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {f"config.{k}": v for k, v in cfg.items()}
        self.artifacts = {}

    def record(self, key, value):
        if isinstance(value, float):
            value = repr(value)
        self.manifest[key] = str(value)

    def artifact(self, name, writer, *args):
        path = self.out / name
        writer(path, *args)
        self.artifacts[name] = path
        return path

    def write_manifest(self):
        for name, path in sorted(self.artifacts.items()):
            self.manifest[f"artifact.{name}"] = _sha(path)
        text = "".join(f"{k} = {self.manifest[k]}\n" for k in sorted(self.manifest))
        (self.out / "manifest.txt").write_text(text)

    # -- stages ---------------------------------------------------------------

    def forward(self):
        cfg = self.cfg
        if cfg.mode == "dtn-file":
            dtn = io.read_dtn(cfg.dtn_path)
            if abs(dtn.R - cfg.R1) > 1e-12 * cfg.R1:
                raise StageFailure("forward", f"DtN file radius {dtn.R} differs from R1 = {cfg.R1}")
            if dtn.L != cfg.L:
                dtn = dtn.truncate(min(dtn.L, cfg.L)) if dtn.L > cfg.L else dtn
            self.truth = None
        else:
            self.truth = synthetic_conductivity(cfg)
            dtn = dtn_radial(self.truth, cfg.L, cfg.R1)
        self.dtn = dtn
        self.record("forward.L", dtn.L)
        self.artifact("dtn_inner.dtn", io.write_dtn, dtn)

    def recover_boundary(self):
        cfg = self.cfg
        Lb = cfg.probe_degree
        if cfg.boundary == "exact":
            if self.truth is None:
                raise StageFailure("recover-boundary", "exact boundary values need a synthetic conductivity")
            g = sphere.sphere_grid(Lb, cfg.R1)
            gv = self.truth(g.nodes())
            nu = g.unit_nodes()
            dv = np.sum(self.truth.gradient(g.nodes()) * nu, axis=-1)
        else:
            Ns = sorted(cfg.probe_N)
            if self.truth is not None and self.truth.kind == "radial":
                # radial maps are cheap at any degree: resolve the full ladder
                Lp = required_degree(max(Ns), cfg.R1)
                pdtn = dtn_radial(self.truth, Lp, cfg.R1)
            else:
                pdtn = self.dtn
                Ns = [N for N in Ns if required_degree(N, cfg.R1) <= pdtn.L]
                if not Ns:
                    raise StageFailure("recover-boundary",
                                       f"DtN degree {pdtn.L} resolves no probe of the ladder {cfg.probe_N}")
                Lp = pdtn.L
            g = sphere.sphere_grid(Lb, cfg.R1)
            pts = g.nodes().reshape(-1, 3)
            gv = np.empty(len(pts))
            dv = np.empty(len(pts))
            seqs = []
            for i, x in enumerate(pts):
                nu, t1, _ = tangent_frame(x)
                probes = probe_ladder(x, t1, Ns, R=cfg.R1, L=Lp)
                # the gradient identity amplifies errors in γ_b by ~N², so both steps extrapolate
                est = recover_gamma_boundary(pdtn, probes, extrapolate=len(probes) > 1)
                gv[i] = est.estimate
                dv[i] = recover_gradient_boundary(pdtn, est.estimate, probes, nu, extrapolate=len(probes) > 1).estimate
                seqs.append(est.sequence)
            gv = gv.reshape(g.shape)
            dv = dv.reshape(g.shape)
            self.record("boundary.probe_N", " ".join(repr(float(n)) for n in Ns))
            self.record("boundary.probe_degree_L", Lp)
            self.artifact("boundary_sequences.tsv", io.write_table,
                          {f"N{int(n)}": np.array(seqs)[:, j] for j, n in enumerate(Ns)})
        gb = BoundaryField(g.analyze(np.asarray(gv, complex), Lb))
        db = BoundaryField(g.analyze(np.asarray(dv, complex), Lb))
        self.gamma_b, self.dgamma_b = gb, db
        self.record("boundary.gamma_min", float(np.min(gv)))
        self.record("boundary.gamma_max", float(np.max(gv)))
        self.record("boundary.dgamma_min", float(np.min(dv)))
        self.record("boundary.dgamma_max", float(np.max(dv)))
        self.artifact("gamma_b.field", io.write_field, gb, cfg.R1)
        self.artifact("dgamma_b.field", io.write_field, db, cfg.R1)

    def transfer(self):
        cfg = self.cfg
        ext = extend_conductivity(self.gamma_b, self.dgamma_b, cfg.R1, cfg.R0, cfg.R, radial_tol=1e-10)
        self.ext = ext
        blocks = annulus_dtn(ext.field, self.dtn.L, Nr=cfg.shell_degree, R1=cfg.R1, R=cfg.R)
        res = transfer_dtn(self.dtn, blocks, shell=ext.field)
        self.outer = res.dtn
        self.record("transfer.radial_extension", ext.info.get("radial", False))
        self.record("transfer.delta", ext.delta if ext.delta is not None else "none")
        self.record("transfer.condition", float(res.condition))
        self.record("transfer.defect_tail", cgo.defect_tail(res.dtn))
        self.record("transfer.method", res.dtn.info["method"])
        if "block_formula_gap" in res.dtn.info:
            self.record("transfer.block_formula_gap", res.dtn.info["block_formula_gap"])
        self.artifact("dtn_outer.dtn", io.write_dtn, res.dtn)

    def scatter(self):
        cfg = self.cfg
        sg = ScatteringGrid.zeros(cfg.k_max, cfg.n_k)
        ks = sg.points()
        half = k_grid_half(cfg.n_k)

        def one(ijk):
            k = ks[tuple(ijk)]
            return cgo.scattering_qhat(self.outer, k, cfg.lam, cfg.M_s, cfg.M_eta, max_condition=cfg.max_condition)

        if self.outer.is_diagonal:
            # a rotation-invariant Λ̃ has a radial scattering transform: one estimate per |k|
            norms = np.round(np.linalg.norm(ks[tuple(half.T)], axis=-1), 10)
            uniq, first, inverse = np.unique(norms, return_index=True, return_inverse=True)
            reps = half[first]
            self.record("scatter.radial_symmetry", f"used ({len(uniq)} distinct |k|)")
        else:
            reps = half
            inverse = np.arange(len(half))
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rep_ests = list(pool.map(one, reps))
        ests = [rep_ests[i] for i in inverse]
        worst = trunc = 0.0
        skipped = 0
        for ijk, e in zip(half, ests):
            i, j, k = ijk
            m = (cfg.n_k - 1 - i, cfg.n_k - 1 - j, cfg.n_k - 1 - k)
            flag = 2 if e.flagged else (1 if e.skipped else 0)
            sg.values[i, j, k] = e.value
            sg.values[m] = np.conj(e.value)
            sg.flags[i, j, k] = sg.flags[m] = flag
            worst = max(worst, e.info["max_condition"])
            trunc = max(trunc, e.info["max_truncation"])
        for e in rep_ests:
            skipped += e.skipped
        self.record("scatter.hermitian_deviation", sg.symmetrize())
        self.record("scatter.max_condition", float(worst))
        self.record("scatter.max_truncation", float(trunc))
        self.record("scatter.skipped_samples", skipped)
        self.record("scatter.flagged_k", int(np.count_nonzero(sg.flags == 2)))
        self.qhat = sg
        self.artifact("qhat.grid", io.write_grid, sg)

    def reconstruct(self):
        cfg = self.cfg
        q = recon.invert_fourier(self.qhat, cfg.R, cfg.grid_n)
        w = recon.solve_w(q, cfg.R, L=cfg.w_L, Nr=cfg.w_Nr, tol=cfg.w_tol)
        gamma = recon.gamma_from_w(w)
        self.q, self.w, self.gamma = q, w, gamma
        self.record("reconstruct.imag_residue", q.info["imag_residue"])
        self.record("reconstruct.w_iterations", w.info["iterations"])
        self.record("reconstruct.w_mass_outside", w.info["mass_outside"])
        self.artifact("q.grid", io.write_grid, q)
        self.artifact("w.grid", io.write_grid, w)
        self.artifact("gamma.grid", io.write_grid, gamma)
        self.artifact("w_convergence.tsv", io.write_table,
                      {"iteration": np.arange(1, len(w.info["history"]) + 1), "step": w.info["history"]})
        mid = cfg.grid_n // 2
        self.artifact("gamma_z.pgm", io.write_pgm, gamma.values[:, :, mid].T)
        self.artifact("q_z.pgm", io.write_pgm, q.values[:, :, mid].T)
        r = gamma.axis
        prof = {"r": r[mid:], "gamma_rec": gamma.values[mid:, mid, mid], "q_rec": q.values[mid:, mid, mid]}
        if self.truth is not None:
            prof["gamma_true"] = self.truth_on_big_ball(np.stack([r[mid:], 0 * r[mid:], 0 * r[mid:]], -1))
        self.artifact("radial_profile.tsv", io.write_table, prof)

    def truth_on_big_ball(self, x):
        """The synthetic γ inside B_{R1} continued by the exact-data extension in the shell."""
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        g = sphere.sphere_grid(self.cfg.probe_degree, self.cfg.R1)
        nu = g.unit_nodes()
        gb = BoundaryField(g.analyze(self.truth(g.nodes()).astype(complex)))
        db = BoundaryField(g.analyze(np.sum(self.truth.gradient(g.nodes()) * nu, -1).astype(complex)))
        ext = extend_conductivity(gb, db, self.cfg.R1, self.cfg.R0, self.cfg.R, radial_tol=1e-10)
        out = np.ones(r.shape)
        inner = r < self.cfg.R1
        out[inner] = self.truth(x[inner])
        shell = (r >= self.cfg.R1) & (r < self.cfg.R)
        out[shell] = ext(x[shell])
        return out

    def compare(self):
        cfg = self.cfg
        if self.truth is None:
            return
        g = self.gamma
        self.record("error.rel_l2_BR", recon.relative_error(g, self.truth_on_big_ball, cfg.R))
        self.record("error.rel_l2_BR1", recon.relative_error(g, self.truth_on_big_ball, cfg.R1))
        pts1 = g.points()[np.linalg.norm(g.points(), axis=-1) < cfg.R1]
        if np.max(np.abs(self.truth_on_big_ball(pts1) - 1.0)) > 1e-12:
            self.record("error.contrast_l2_BR1",
                        recon.relative_error(g, self.truth_on_big_ball, cfg.R1, background=1.0))
        else:
            self.record("error.contrast_l2_BR1", "n/a")
        pts = g.points()
        mask = np.linalg.norm(pts, axis=-1) < cfg.R
        self.record("error.sup_BR", float(np.max(np.abs(g.values[mask] - self.truth_on_big_ball(pts[mask])))))


STAGES = ("forward", "recover-boundary", "transfer", "scatter", "reconstruct")


def run_pipeline(cfg: RunConfig, out, stop_after: str | None = None) -> RunResult:
    """Run the stages in order; a failing stage raises StageFailure after the manifest is written."""
    run = _Run(cfg, Path(out))
    methods = {"forward": run.forward, "recover-boundary": run.recover_boundary, "transfer": run.transfer,
               "scatter": run.scatter, "reconstruct": run.reconstruct}
    np.random.seed(cfg.seed)
    for name in STAGES:
        log.info("stage %s", name)
        try:
            methods[name]()
        except StageFailure as exc:
            run.record("failed_stage", exc.stage)
            run.record("failure", str(exc))
            run.write_manifest()
            raise
        except (CalderonError, ValueError, OSError, np.linalg.LinAlgError) as exc:
            run.record("failed_stage", name)
            run.record("failure", f"{type(exc).__name__}: {exc}")
            run.write_manifest()
            raise StageFailure(name, f"{type(exc).__name__}: {exc}") from exc
        run.record(f"stage.{name}", "ok")
        if stop_after == name:
            break
    else:
        run.compare()
    run.write_manifest()
    return RunResult(run.out, dict(run.manifest), dict(run.artifacts), getattr(run, "gamma", None), run.truth)
