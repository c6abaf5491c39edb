"""Stage-cached experiment pipeline from benchmark assembly to sweep summary.

Stages run in a fixed order

    build -> steady -> snapshots -> pod -> expansion/<alpha> -> sweep

with every stage keyed by a digest of its configuration slice and upstream
keys; a stage whose key and artifacts are already on disk is reused, never
recomputed.  Reports, trajectories, and the summary table are plain CSV; the
run manifest records the configuration digest and a content hash of every
artifact, so two runs from identical configurations produce identical
manifest hashes and byte-identical files.

Failures surface as :class:`StageError` tagged with the stage name.  The
independent cells of the expansion and sweep stages run on a bounded thread
pool; every cell writes only inside its own directory and summary rows are
ordered by cell key, so results do not depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .arrayio import load_array, save_array, save_csv
from .bench import make_benchmark
from .config import PipelineConfig, config_hash, config_to_dict
from .feedback import SdreExpansion, assemble, save_gains
from .mateq import ImplicitOperator, LowRankIndef, LowRankPsd, lyap_rhs_factor
from .mateq import solve_lyapunov, solve_riccati
from .model import load_system, save_system, build_affine_lpv
from .pod import SnapshotSet, compute_pod, load_basis, save_basis
from .sim import (BracketError, SimConfig, find_critical_tc, run, stabilized,
                  steady_state)

CACHE_ENV = "XSDRE_CACHE_DIR"


class StageError(RuntimeError):
    """Pipeline failure carrying the name of the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class StageResult:
    name: str
    key: str
    path: Path
    cached: bool
    seconds: float
    outputs: dict   # artifact path relative to the stage dir -> sha256


def _hash_obj(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _slug(x: float) -> str:
    """Filesystem-safe tag for a float parameter value."""
    return format(float(x), ".10g").replace("-", "m").replace(".", "p")


class Pipeline:
    """Runs the stage graph for one configuration.

    Artifacts live under the cache root: the configured output directory, or
    the XSDRE_CACHE_DIR environment variable when set.  The manifest and the
    sweep summary are additionally written to the output directory.
    """

    ORDER = ("build", "steady", "snapshots", "pod", "expansion", "sweep")

    def __init__(self, cfg: PipelineConfig, jobs: int = 1, log=print,
                 cache_dir=None):
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.log = log or (lambda *_: None)
        root = cache_dir or os.environ.get(CACHE_ENV) or cfg.out_dir
        self.root = Path(root)
        self.stages: dict[str, StageResult] = {}

    # -- stage bookkeeping ------------------------------------------------

    def _run_stage(self, name: str, key: str, compute) -> StageResult:
        d = self.root / name
        stamp = d / "stage.json"
        if stamp.exists():
            try:
                meta = json.loads(stamp.read_text())
            except json.JSONDecodeError:
                meta = {}
            if meta.get("key") == key and all(
                (d / rel).exists() for rel in meta.get("outputs", {})
            ):
                res = StageResult(name, key, d, True, 0.0, meta["outputs"])
                self.stages[name] = res
                self.log(f"[{name}] cached")
                return res
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        t0 = time.perf_counter()
        try:
            compute(d)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        seconds = time.perf_counter() - t0
        outputs = {
            str(p.relative_to(d)): _hash_file(p)
            for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "stage.json"
        }
        stamp.write_text(json.dumps(
            {"stage": name, "key": key, "outputs": outputs,
             "seconds": round(seconds, 3)},
            sort_keys=True, indent=1) + "\n")
        res = StageResult(name, key, d, False, seconds, outputs)
        self.stages[name] = res
        self.log(f"[{name}] done in {seconds:.1f}s")
        return res

    def _key(self, name: str, config_slice, *upstream: StageResult) -> str:
        return _hash_obj({"stage": name, "config": config_slice,
                          "inputs": [u.key for u in upstream],
                          "version": __version__})

    # -- stages -----------------------------------------------------------

    def _stage_build(self) -> StageResult:
        conf = config_to_dict(self.cfg)["benchmark"]

        def compute(d):
            system = make_benchmark(self.cfg.benchmark)
            save_system(system, d / "system")

        return self._run_stage("build", self._key("build", conf), compute)

    def _stage_steady(self, build: StageResult) -> StageResult:
        def compute(d):
            system = load_system(build.path / "system")
            res = steady_state(system, tol=1e-11, max_iter=100)
            save_array(d / "v_ss.xarr", res.v)
            if res.p is not None:
                save_array(d / "p_ss.xarr", res.p)
            save_system(res.shifted, d / "shifted")

        return self._run_stage("steady", self._key("steady", None, build),
                               compute)

    def _stage_snapshots(self, steady: StageResult) -> StageResult:
        cfg = self.cfg
        # integrate at the study step and sample every stride-th state when
        # the snapshot interval is a multiple of it; stepping at a coarse
        # snapshot interval misrepresents resonant growth over long windows
        ratio = cfg.snapshot_dt / cfg.dt
        stride = int(round(ratio))
        if stride >= 1 and abs(ratio - stride) <= 1e-9 * ratio:
            sim_dt = cfg.dt
        else:
            sim_dt, stride = cfg.snapshot_dt, 1
        conf = dict(config_to_dict(cfg)["snapshots"], integration_dt=sim_dt)

        def compute(d):
            shifted = load_system(steady.path / "shifted")
            sim = SimConfig(dt=sim_dt, t_end=cfg.snapshot_window,
                            test_signal=cfg.test_signal, store_states=True,
                            output_stride=stride)
            traj = run(shifted, sim)
            if traj.blowup:
                raise StageError(
                    "snapshots",
                    f"test-signal run diverged at t = {traj.blowup_time}")
            save_array(d / "states.xarr", traj.states)
            save_array(d / "times.xarr", np.asarray(traj.times))
            traj.to_csv(d / "trajectory.csv")

        return self._run_stage("snapshots",
                               self._key("snapshots", conf, steady), compute)

    def _stage_pod(self, steady: StageResult,
                   snapshots: StageResult) -> StageResult:
        cfg = self.cfg
        conf = {"r_max": cfg.r_max}

        def compute(d):
            shifted = load_system(steady.path / "shifted")
            states = load_array(snapshots.path / "states.xarr")
            times = load_array(snapshots.path / "times.xarr")
            snaps = SnapshotSet(states, shifted.M, times)
            basis = compute_pod(snaps, max(cfg.r_max, 1))
            save_basis(basis, d / "basis")
            idx = np.arange(1, basis.sigma.size + 1)
            tails = np.array([basis.tail_energy(int(r)) for r in idx])
            save_csv(d / "singular_values.csv",
                     {"index": idx, "sigma": basis.sigma, "tail": tails})

        return self._run_stage(
            "pod", self._key("pod", conf, steady, snapshots), compute)

    def _stage_expansion(self, alpha: float, steady: StageResult,
                         pod: StageResult) -> StageResult:
        cfg = self.cfg
        name = f"expansion/alpha{_slug(alpha)}"
        conf = {"alpha": alpha, "lambda": cfg.lam, "r_max": cfg.r_max,
                "mateq": config_to_dict(cfg)["mateq"]}

        def compute(d):
            shifted = load_system(steady.path / "shifted")
            opts = cfg.solver_options
            B_scaled = shifted.B / np.sqrt(alpha)
            Z, report = solve_riccati(shifted.M, shifted.A, B_scaled,
                                      shifted.C, opts=opts, J=shifted.J,
                                      probe_shifts=cfg.probe_shifts)
            Z = Z.compressed(cfg.factor_tol)
            Z.save(d / "P0")
            report.to_csv(d / "riccati_report.csv")
            orders = min(cfg.r_max, max(cfg.r_list))
            Ls = []
            if orders >= 1:
                basis = load_basis(pod.path / "basis")
                basis = basis.truncated(min(orders, basis.r))
                lpv = build_affine_lpv(shifted, basis, cfg.lam)
                K_cl = (B_scaled.T @ Z.Z) @ (Z.Z.T @ shifted.M)
                closed = ImplicitOperator(shifted.A, shifted.M,
                                          shifted.J).with_feedback(B_scaled,
                                                                   K_cl)

                def one(k):
                    Ck, Sk = lyap_rhs_factor(shifted.M, lpv.coeffs[k],
                                             Z.Z)
                    return solve_lyapunov(shifted.M, closed, Ck, S=Sk,
                                          opts=opts)

                with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                    solved = list(pool.map(one, range(basis.r)))
                for k, (L, rep) in enumerate(solved, start=1):
                    L.save(d / f"L{k}")
                    rep.to_csv(d / f"lyapunov_report_{k}.csv")
                    Ls.append(L)
                exp = assemble(Z, Ls, basis, shifted.B, shifted.M, alpha)
            else:
                exp = assemble(Z, [], None, shifted.B, shifted.M, alpha)
            save_gains(exp.gains, d / "gains")

        return self._run_stage(name, self._key(name, conf, steady, pod),
                               compute)

    def _load_expansion(self, alpha: float, steady: StageResult,
                        expansion: StageResult) -> SdreExpansion:
        shifted = load_system(steady.path / "shifted")
        P0 = LowRankPsd.load(expansion.path / "P0")
        Ls, k = [], 1
        while (expansion.path / f"L{k}").exists():
            Ls.append(LowRankIndef.load(expansion.path / f"L{k}"))
            k += 1
        basis = None
        if Ls:
            basis = load_basis(
                self.stages["pod"].path / "basis").truncated(len(Ls))
        return assemble(P0, Ls, basis, shifted.B, shifted.M, alpha)

    def controller(self, alpha: float) -> SdreExpansion:
        """Assembled feedback law for a penalty; stages must have run."""
        name = f"expansion/alpha{_slug(alpha)}"
        if "steady" not in self.stages or name not in self.stages:
            raise StageError("expansion",
                             f"stage artifacts for alpha = {alpha:g} not "
                             f"available; run the pipeline first")
        return self._load_expansion(alpha, self.stages["steady"],
                                    self.stages[name])

    def shifted_system(self):
        """Steady-state-shifted system; the steady stage must have run."""
        if "steady" not in self.stages:
            raise StageError("steady", "stage artifacts not available; "
                                       "run the pipeline first")
        return load_system(self.stages["steady"].path / "shifted")

    def _stage_sweep(self, steady: StageResult, pod: StageResult,
                     expansions: dict) -> StageResult:
        cfg = self.cfg
        conf = {"r_list": list(cfg.r_list),
                "simulation": config_to_dict(cfg)["simulation"]}

        def compute(d):
            shifted = load_system(steady.path / "shifted")
            controllers = {}
            for alpha in cfg.alphas:
                full = self._load_expansion(alpha, steady, expansions[alpha])
                for r in cfg.r_list:
                    if r > full.r:
                        raise StageError(
                            "sweep",
                            f"order {r} exceeds the {full.r} precomputed "
                            f"expansion terms (snapshot rank too small?)")
                    controllers[(alpha, r)] = full.truncated(r)
            if cfg.t_c_list is not None:
                rows = self._sweep_fixed(d, shifted, controllers)
                header = ("alpha", "r", "t_c", "stabilized", "peak_output",
                          "final_output", "blowup")
            else:
                rows = self._sweep_bisect(d, shifted, controllers)
                header = ("alpha", "r", "t_lo", "t_hi", "t_critical",
                          "n_evals", "status")
            rows.sort(key=lambda row: row[:3])
            save_csv(d / "summary.csv",
                     {name: np.asarray([row[i] for row in rows])
                      for i, name in enumerate(header)})

        keys = [steady, pod] + [expansions[a] for a in cfg.alphas]
        return self._run_stage("sweep", self._key("sweep", conf, *keys),
                               compute)

    def cell_sim(self, t_c: float, controller) -> SimConfig:
        """Simulation settings for one sweep cell."""
        cfg = self.cfg
        return SimConfig(dt=cfg.dt, t_end=cfg.t_end, t_c=t_c,
                         test_signal=cfg.test_signal, controller=controller,
                         output_stride=cfg.output_stride, clamp=cfg.clamp,
                         blowup_factor=cfg.blowup_factor)

    def _sweep_fixed(self, d: Path, shifted, controllers) -> list:
        cells = [(alpha, r, t_c) for (alpha, r) in sorted(controllers)
                 for t_c in self.cfg.t_c_list]

        def one(cell):
            alpha, r, t_c = cell
            traj = run(shifted, self.cell_sim(t_c, controllers[(alpha, r)]))
            cell_dir = (d / f"alpha{_slug(alpha)}" / f"r{r}"
                        / f"tc{_slug(t_c)}")
            cell_dir.mkdir(parents=True, exist_ok=True)
            traj.to_csv(cell_dir / "trajectory.csv")
            return (alpha, r, t_c, int(stabilized(traj)),
                    traj.peak_output(), traj.final_output(),
                    int(traj.blowup))

        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(one, cells))

    def _sweep_bisect(self, d: Path, shifted, controllers) -> list:
        lo, hi, tol = self.cfg.bisect

        def one(cell):
            alpha, r = cell
            cell_dir = d / f"alpha{_slug(alpha)}" / f"r{r}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            base = self.cell_sim(lo, controllers[cell])
            try:
                res = find_critical_tc(shifted, controllers[cell], lo, hi,
                                       tol, base)
                row = (alpha, r, res.t_lo, res.t_hi, res.t_critical,
                       res.n_evals, "ok")
                hist = res.history
            except BracketError as exc:
                status = ("no_stabilize" if "does not stabilize" in str(exc)
                          else "all_stabilize")
                row = (alpha, r, lo, hi, np.nan, 2, status)
                hist = []
            if hist:
                save_csv(cell_dir / "bisection.csv",
                         {"t_c": np.asarray([h[0] for h in hist]),
                          "stabilized": np.asarray(
                              [int(h[1]) for h in hist])})
            return row

        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(one, sorted(controllers)))

    # -- driver -----------------------------------------------------------

    def run(self, upto: str | None = None) -> dict:
        """Execute the stage graph, returning the manifest dictionary.

        ``upto`` stops after the named stage (inclusive); the manifest and
        summary are only produced by a full run.
        """
        if upto is not None and upto not in self.ORDER:
            raise StageError(upto, f"unknown stage; expected one of "
                                   f"{', '.join(self.ORDER)}")
        build = self._stage_build()
        if upto == "build":
            return {}
        steady = self._stage_steady(build)
        if upto == "steady":
            return {}
        snaps = self._stage_snapshots(steady)
        if upto == "snapshots":
            return {}
        pod = self._stage_pod(steady, snaps)
        if upto == "pod":
            return {}
        expansions = {alpha: self._stage_expansion(alpha, steady, pod)
                      for alpha in self.cfg.alphas}
        if upto == "expansion":
            return {}
        sweep = self._stage_sweep(steady, pod, expansions)
        return self._write_manifest(sweep)

    def _write_manifest(self, sweep: StageResult) -> dict:
        manifest = {
            "version": __version__,
            "config": config_to_dict(self.cfg),
            "config_hash": config_hash(self.cfg),
            "stages": {name: {"key": res.key, "outputs": res.outputs}
                       for name, res in sorted(self.stages.items())},
        }
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        blob = json.dumps(manifest, sort_keys=True, indent=1) + "\n"
        (self.cfg.out_dir / "manifest.json").write_text(blob)
        shutil.copyfile(sweep.path / "summary.csv",
                        self.cfg.out_dir / "summary.csv")
        self.log(f"manifest hash {manifest_hash(self.cfg.out_dir)}")
        return manifest


def manifest_hash(out_dir) -> str:
    """Digest of the manifest file bytes; equal configs give equal hashes."""
    return _hash_file(Path(out_dir) / "manifest.json")


def run_pipeline(cfg: PipelineConfig, jobs: int = 1, log=print,
                 upto: str | None = None, cache_dir=None) -> dict:
    return Pipeline(cfg, jobs=jobs, log=log, cache_dir=cache_dir).run(upto)
