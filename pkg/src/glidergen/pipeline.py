"""End-to-end orchestration: corpus, preprocessing, training, encoding,
latent-space search and export, with a JSON manifest per command."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import flightsim, mesh as meshlib, optimizer, sdf, synth
from .learner import (LatentVector, LearnerConfig, LearnerParams, decode, denormalize, encode_dataset,
                      normalize_sdf, train)
from .learner.io import load_checkpoint, save_checkpoint, write_loss_csv

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".stl")
SDF_SUFFIX = ".sdf"


class DataError(ValueError):
    """Unusable input data (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    """Every tunable in one place; serialized as JSON with one section per module."""

    dims: int = 17
    pad_cells: int = 2
    learner: LearnerConfig = field(default_factory=LearnerConfig.desk)
    ga: optimizer.GaConfig = field(default_factory=optimizer.GaConfig)
    task: flightsim.DesignTask = field(default_factory=flightsim.DesignTask)
    top_k: int = 10
    corpus_count: int = 200
    corpus_resolution: int = 33
    aero_table: str | None = None

    def to_dict(self) -> dict:
        return {"preprocess": {"dims": self.dims, "pad_cells": self.pad_cells},
                "learner": self.learner.to_dict(), "ga": self.ga.to_dict(), "task": self.task.to_dict(),
                "export": {"top_k": self.top_k},
                "corpus": {"count": self.corpus_count, "resolution": self.corpus_resolution},
                "aero_table": self.aero_table}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {"preprocess", "learner", "ga", "task", "export", "corpus", "aero_table"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        pre = d.get("preprocess", {})
        cfg.dims = int(pre.get("dims", cfg.dims))
        cfg.pad_cells = int(pre.get("pad_cells", cfg.pad_cells))
        if "learner" in d:
            base = cfg.learner.to_dict()
            base.update(d["learner"])
            cfg.learner = LearnerConfig(**base)
        if "ga" in d:
            base = cfg.ga.to_dict()
            base.update(d["ga"])
            cfg.ga = optimizer.GaConfig.from_dict(base)
        if "task" in d:
            base = cfg.task.to_dict()
            base.update(d["task"])
            cfg.task = flightsim.DesignTask.from_dict(base)
        cfg.top_k = int(d.get("export", {}).get("top_k", cfg.top_k))
        corpus = d.get("corpus", {})
        cfg.corpus_count = int(corpus.get("count", cfg.corpus_count))
        cfg.corpus_resolution = int(corpus.get("resolution", cfg.corpus_resolution))
        cfg.aero_table = d.get("aero_table", cfg.aero_table)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad config: {exc}") from exc

    def with_seed(self, seed: int) -> "PipelineConfig":
        cfg = PipelineConfig.from_dict(self.to_dict())
        cfg.learner.seed = seed
        cfg.ga = optimizer.GaConfig.from_dict({**cfg.ga.to_dict(), "seed": seed})
        return cfg

    def table(self):
        return flightsim.load_table(self.aero_table) if self.aero_table else flightsim.DEFAULT_TABLE

    def bounds(self) -> meshlib.Aabb:
        return sdf.default_bounds((self.dims,) * 3, pad_cells=self.pad_cells, extent=self.task.box)


# ---------------------------------------------------------------------------
# manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    finished: float | None = None

    def add_inputs(self, paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256(p)

    def add_artifacts(self, paths) -> None:
        for p in paths:
            self.artifacts[str(p)] = sha256(p)

    def write(self, path) -> Path:
        self.finished = time.time()
        path = Path(path)
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self) -> list[str]:
        """Artifacts that are missing or whose checksum changed."""
        bad = []
        for p, digest in self.artifacts.items():
            if not Path(p).exists() or sha256(p) != digest:
                bad.append(p)
        return bad


# ---------------------------------------------------------------------------
# helpers


def _pool_map(threads: int):
    """An ordered map over ``threads`` worker processes, or the builtin map."""
    if threads and threads > 1:
        pool = ProcessPoolExecutor(max_workers=threads)
        return pool, pool.map
    return None, map


def list_files(directory, suffixes) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in suffixes)


def preprocess_mesh(path, dims: int, bounds: meshlib.Aabb) -> sdf.SdfGrid:
    """load, clean, align, sample, nudge zero nodes."""
    m = meshlib.align_mesh(meshlib.clean_mesh(meshlib.load_mesh(path)))
    return sdf.perturb_zero_nodes(sdf.mesh_to_sdf(m, (dims,) * 3, bounds))


class _Preprocess:
    def __init__(self, dims, bounds, out_dir):
        self.dims, self.bounds, self.out_dir = dims, bounds, Path(out_dir)

    def __call__(self, path):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                grid = preprocess_mesh(path, self.dims, self.bounds)
        except Exception as exc:  # noqa: BLE001 - one bad file never aborts the batch
            return path, None, f"{type(exc).__name__}: {exc}"
        out = self.out_dir / (Path(path).stem + SDF_SUFFIX)
        sdf.write_sdf(grid, out)
        return path, out, None


@dataclass
class PreprocessSummary:
    written: list
    skipped: list


def run_preprocess(mesh_dir, out_dir, cfg: PipelineConfig, threads: int = 1) -> PreprocessSummary:
    paths = list_files(mesh_dir, MESH_SUFFIXES)
    if not paths:
        raise DataError(f"no OBJ/STL files in {mesh_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool, pmap = _pool_map(threads)
    try:
        results = list(pmap(_Preprocess(cfg.dims, cfg.bounds(), out_dir), paths))
    finally:
        if pool:
            pool.shutdown()
    written, skipped = [], []
    for path, out, err in results:
        if err:
            log.warning("skipping %s: %s", path, err)
            skipped.append((str(path), err))
        else:
            written.append(out)
    log.info("preprocess: %d written, %d skipped", len(written), len(skipped))
    if not written:
        raise DataError(f"every mesh in {mesh_dir} failed to preprocess")
    man = RunManifest("preprocess", cfg.to_dict(), {})
    man.add_inputs(paths)
    man.add_artifacts(written)
    man.write(out_dir / "manifest.json")
    return PreprocessSummary(written, skipped)


def load_sdf_dir(sdf_dir) -> list[tuple[str, sdf.SdfGrid]]:
    paths = list_files(sdf_dir, (SDF_SUFFIX,))
    if not paths:
        raise DataError(f"no {SDF_SUFFIX} files in {sdf_dir}")
    return [(p.stem, sdf.read_sdf(p)) for p in paths]


def normalized_dataset(grids: Sequence[sdf.SdfGrid], learner: LearnerConfig) -> list[np.ndarray]:
    out = []
    for g in grids:
        if g.dims != learner.resolution:
            raise DataError(f"grid {g.dims} does not match learner resolution {learner.resolution}")
        out.append(normalize_sdf(g, learner.d_max_cells * g.spacing))
    return out


def run_train(sdf_dir, out_dir, cfg: PipelineConfig, progress: Callable | None = None):
    names_grids = load_sdf_dir(sdf_dir)
    data = normalized_dataset([g for _, g in names_grids], cfg.learner)
    result = train(data, cfg.learner, progress=progress)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt, loss = out_dir / "checkpoint.vsl", out_dir / "loss.csv"
    save_checkpoint(result.params, ckpt)
    write_loss_csv(result.history, loss)
    man = RunManifest("train", cfg.to_dict(), {"learner": cfg.learner.seed})
    man.add_inputs(sorted(Path(sdf_dir).glob("*" + SDF_SUFFIX)))
    man.add_artifacts([ckpt, loss])
    man.write(out_dir / "manifest.json")
    return result, ckpt


# ---------------------------------------------------------------------------
# latent <-> design


class LatentEvaluator:
    """Genome -> landing height: decode, rescale to distances on the training
    lattice, nudge zero nodes, then surface and fly."""

    def __init__(self, params: LearnerParams, task: flightsim.DesignTask, lattice: sdf.SdfGrid | tuple,
                 table=None):
        self.params = params
        self.task = task
        self.table = table
        if isinstance(lattice, sdf.SdfGrid):
            lattice = (lattice.origin, lattice.spacing)
        self.origin = np.asarray(lattice[0], dtype=np.float64)
        self.spacing = float(lattice[1])

    def grid(self, genome) -> sdf.SdfGrid:
        occ = decode(np.asarray(genome, dtype=np.float64), self.params)
        d_max = self.params.config.d_max_cells * self.spacing
        return sdf.perturb_zero_nodes(denormalize(occ, d_max, self.origin, self.spacing))

    def evaluate(self, genome) -> flightsim.Evaluation:
        return flightsim.evaluate_design(self.grid(genome), self.task, self.table)

    def __call__(self, genome) -> float:
        return self.evaluate(genome).height


def latent_matrix(latents) -> np.ndarray:
    return np.stack([z.flat() if isinstance(z, LatentVector) else np.asarray(z, dtype=np.float64)
                     for z in latents])


def write_latents_csv(names, Z: np.ndarray, path, heights=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["name"] + (["height"] if heights is not None else []) + [f"z{i}" for i in range(Z.shape[1])]
        w.writerow(head)
        for i, name in enumerate(names):
            row = [name] + ([repr(float(heights[i]))] if heights is not None else [])
            w.writerow(row + [repr(float(v)) for v in Z[i]])


def read_latents_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no latent rows")
    keys = [k for k in rows[0] if k.startswith("z")]
    keys.sort(key=lambda k: int(k[1:]))
    try:
        Z = np.array([[float(r[k]) for k in keys] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return [r["name"] for r in rows], Z


def run_encode(checkpoint, sdf_dir, out_path, cfg: PipelineConfig) -> np.ndarray:
    params = load_checkpoint(checkpoint)
    names_grids = load_sdf_dir(sdf_dir)
    data = normalized_dataset([g for _, g in names_grids], params.config)
    Z = latent_matrix(encode_dataset(data, params))
    write_latents_csv([n for n, _ in names_grids], Z, out_path)
    return Z


def run_decode(checkpoint, latents_path, out_dir, cfg: PipelineConfig) -> list[Path]:
    params = load_checkpoint(checkpoint)
    names, Z = read_latents_csv(latents_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lattice = cfg.bounds()
    origin, spacing = sdf.lattice_for(params.config.resolution, lattice)
    ev = LatentEvaluator(params, cfg.task, (origin, spacing))
    written = []
    for name, z in zip(names, Z):
        grid = ev.grid(z)
        sdf.write_sdf(grid, out_dir / f"{name}{SDF_SUFFIX}")
        written.append(out_dir / f"{name}{SDF_SUFFIX}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sdf.OpenSurfaceWarning)
            m = sdf.extract_surface(grid)
        if not m.is_empty():
            meshlib.save_obj(m, out_dir / f"{name}.obj")
            written.append(out_dir / f"{name}.obj")
    return written


def run_simulate(path, out_dir, cfg: PipelineConfig) -> flightsim.Evaluation:
    path = Path(path)
    table = cfg.table()
    if path.suffix.lower() == SDF_SUFFIX:
        ev = flightsim.evaluate_design(sdf.read_sdf(path), cfg.task, table, trace=True)
    elif path.suffix.lower() in MESH_SUFFIXES:
        try:
            m = meshlib.load_mesh(path)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
        ev = flightsim.evaluate_mesh(m, cfg.task, table, trace=True)
    else:
        raise DataError(f"{path}: expected an OBJ, STL or {SDF_SUFFIX} file")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if ev.result is not None and ev.result.trace is not None:
        flightsim.write_trace_csv(ev.result.trace, out_dir / "trajectory.csv")
    summary = {"height": ev.height, "feasible": ev.feasible, "status": ev.status, "profile": ev.profile}
    if ev.geometry is not None:
        g = ev.geometry
        summary.update(mass=g.mass, wing_area=g.wing_area, forward_area=g.forward_area, area_ratio=g.area_ratio)
    (out_dir / "simulation.json").write_text(json.dumps(summary, indent=2))
    return ev


# ---------------------------------------------------------------------------
# round trip


@dataclass
class RoundTripReport:
    closed: bool
    boundary_edges: int
    max_deviation: float
    mean_deviation: float
    cell_diagonal: float

    @property
    def within_bound(self) -> bool:
        return self.max_deviation <= 1.5 * self.cell_diagonal


def surface_deviation(a: meshlib.TriangleMesh, b: meshlib.TriangleMesh) -> tuple[float, float]:
    """Symmetric (max, mean) of vertex-to-surface distances between two meshes."""
    d_ab = meshlib.surface_distances(b, a.vertices)
    d_ba = meshlib.surface_distances(a, b.vertices)
    both = np.concatenate([d_ab, d_ba])
    return float(both.max()), float(both.mean())


def roundtrip(m: meshlib.TriangleMesh, dims: int, pad_cells: int = 2, perturb: bool = True):
    box = m.bounds()
    spacing = float(box.extent.max()) / (dims - 1 - 2 * pad_cells)
    half = 0.5 * spacing * (dims - 1)
    bounds = meshlib.Aabb(box.center - half, box.center + half)
    grid = sdf.mesh_to_sdf(m, (dims,) * 3, bounds)
    if perturb:
        grid = sdf.perturb_zero_nodes(grid)
    out = sdf.extract_surface(grid)
    dmax, dmean = surface_deviation(m, out) if not out.is_empty() else (math.inf, math.inf)
    edges = meshlib.boundary_edge_count(out)
    return out, RoundTripReport(edges == 0, edges, dmax, dmean, math.sqrt(3.0) * grid.spacing)


def run_roundtrip(path, out_dir, cfg: PipelineConfig, perturb: bool = True) -> RoundTripReport:
    try:
        m = meshlib.clean_mesh(meshlib.load_mesh(path))
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    out, rep = roundtrip(m, cfg.dims, cfg.pad_cells, perturb)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshlib.save_obj(out, out_dir / (Path(path).stem + "_roundtrip.obj"))
    (out_dir / "roundtrip.json").write_text(json.dumps({**rep.__dict__, "within_bound": rep.within_bound},
                                                       indent=2))
    return rep


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimizeReport:
    target: float
    corpus_min: float
    corpus_max: float
    initial_within: dict
    final_within: dict
    initial_median: float
    final_median: float
    best_height: float
    best_fitness: float
    plateau: bool
    generations: int
    evaluations: int

    def table(self) -> str:
        lines = [f"target h* = {self.target:.3f} m; corpus heights [{self.corpus_min:.3f}, {self.corpus_max:.3f}] m",
                 "", "| delta (m) | Initial | Final |", "|---|---|---|"]
        for d in optimizer.DELTAS:
            lines.append(f"| {d} | {100 * self.initial_within[d]:.0f}% | {100 * self.final_within[d]:.0f}% |")
        lines += ["", f"median |h - h*|: {self.initial_median:.4f} -> {self.final_median:.4f} m",
                  f"best height {self.best_height:.4f} m (|h - h*| = {self.best_fitness:.4f} m) after "
                  f"{self.generations} generations, {self.evaluations} evaluations"]
        if self.plateau:
            lines.append("best fitness plateaued: the target looks unreachable from this corpus")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["initial_within"] = {str(k): v for k, v in self.initial_within.items()}
        d["final_within"] = {str(k): v for k, v in self.final_within.items()}
        return d


def plateaued(history, window: int = 50, tol: float = 1e-6) -> bool:
    """True when the best fitness moved less than ``tol`` over the last ``window`` generations."""
    if len(history) <= window:
        return False
    return history[-window - 1].stats.best - history[-1].stats.best < tol and history[-1].stats.best > 0.1


def make_report(result: optimizer.GaResult, corpus_heights) -> OptimizeReport:
    h = np.asarray(corpus_heights, dtype=float)
    ini, fin = result.initial.stats, result.final.stats
    best = result.final.best()
    return OptimizeReport(result.target, float(h.min()), float(h.max()), dict(ini.within), dict(fin.within),
                          ini.median, fin.median, float(best.height), float(best.fitness),
                          plateaued(result.history), fin.generation, result.evaluations)


@dataclass
class OptimizeRun:
    result: optimizer.GaResult
    report: OptimizeReport
    corpus_heights: np.ndarray
    out_dir: Path


def score_corpus(Z: np.ndarray, evaluator, threads: int = 1) -> np.ndarray:
    pool, pmap = _pool_map(threads)
    try:
        return np.array(list(pmap(evaluator, list(Z))))
    finally:
        if pool:
            pool.shutdown()


def optimize_latents(Z: np.ndarray, heights, evaluator, cfg: PipelineConfig, out_dir, threads: int = 1,
                     target: float | None = None) -> OptimizeRun:
    """Search the latent space seeded by an encoded, scored corpus and write
    the run outputs (snapshots, per-generation CSV, report, top designs)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = cfg.task.target_height if target is None else float(target)
    heights = np.asarray(heights, dtype=float)
    corpus = list(zip(Z, heights))
    pop0 = optimizer.init_population(corpus, cfg.ga.population_size, seed=cfg.ga.seed)
    gen_csv = open(out_dir / "generations.csv", "w", newline="", buffering=1)
    writer = csv.writer(gen_csv)
    writer.writerow(["generation", "best", "median", "mean"] + [f"within_{d}" for d in optimizer.DELTAS])

    def progress(stats):
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in stats.row()])
        if stats.generation % 10 == 0:
            log.info("generation %d: best %.4f median %.4f within0.1 %.2f", stats.generation, stats.best,
                     stats.median, stats.within[0.1])

    pool, pmap = _pool_map(threads)
    try:
        result = optimizer.evolve(pop0, evaluator, cfg.ga, target, map_fn=pmap, progress=progress)
    finally:
        gen_csv.close()
        if pool:
            pool.shutdown()
    optimizer.save_population(result.initial, out_dir / "population_initial.pop")
    optimizer.save_population(result.final, out_dir / "population_final.pop")
    report = make_report(result, heights)
    (out_dir / "report.md").write_text(report.table())
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return OptimizeRun(result, report, heights, out_dir)


def export_top(run: OptimizeRun, evaluator: LatentEvaluator, k: int) -> list[Path]:
    """Surface the ``k`` fittest distinct final genomes as OBJ meshes."""
    out = []
    seen = set()
    designs = run.out_dir / "designs"
    designs.mkdir(exist_ok=True)
    for ind in run.result.final.individuals:
        key = ind.genome.tobytes()
        if key in seen:
            continue
        seen.add(key)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sdf.OpenSurfaceWarning)
            m = sdf.extract_surface(evaluator.grid(ind.genome))
        if m.is_empty():
            continue
        path = designs / f"design_{len(out):02d}_h{ind.height:.3f}.obj"
        meshlib.save_obj(m, path)
        out.append(path)
        if len(out) >= k:
            break
    return out


def run_optimize(checkpoint, sdf_dir, out_dir, cfg: PipelineConfig, threads: int = 1) -> OptimizeRun:
    params = load_checkpoint(checkpoint)
    names_grids = load_sdf_dir(sdf_dir)
    grids = [g for _, g in names_grids]
    Z = latent_matrix(encode_dataset(normalized_dataset(grids, params.config), params))
    ev = LatentEvaluator(params, cfg.task, grids[0], cfg.table())
    heights = score_corpus(Z, ev, threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_latents_csv([n for n, _ in names_grids], Z, out_dir / "corpus_latents.csv", heights)
    run = optimize_latents(Z, heights, ev, cfg, out_dir, threads)
    exported = export_top(run, ev, cfg.top_k)
    man = RunManifest("optimize", cfg.to_dict(), {"ga": cfg.ga.seed})
    man.add_inputs([checkpoint] + sorted(Path(sdf_dir).glob("*" + SDF_SUFFIX)))
    man.add_artifacts([out_dir / n for n in ("corpus_latents.csv", "generations.csv", "population_initial.pop",
                                             "population_final.pop", "report.md", "report.json")] + exported)
    man.write(out_dir / "manifest.json")
    return run


def run_synth_corpus(out_dir, cfg: PipelineConfig, seed: int = 0) -> list[Path]:
    paths = synth.write_corpus(out_dir, cfg.corpus_count, seed=seed, resolution=cfg.corpus_resolution)
    man = RunManifest("synth-corpus", cfg.to_dict(), {"corpus": seed})
    man.add_artifacts(paths)
    man.write(Path(out_dir) / "manifest.json")
    return paths


def thread_count(requested: int | None) -> int:
    if requested is None:
        return 1
    if requested <= 0:
        return os.cpu_count() or 1
    return requested
