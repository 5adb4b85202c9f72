"""Command-line pipeline: precompute, train, match, upscale, eval, curves.

Exit codes: 0 success, 2 usage, 3 I/O (unreadable input, missing or corrupt
cache), 4 numerical failure.
"""

import argparse
import configparser
import contextlib
import fcntl
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import sparse

from . import fmb
from .descriptors import ShotConfig, compute_shot
from .errors import ChecksumError, FmcorrError, FormatError, NumericalError
from .evaluation import cmc_curve, error_summary, match_distance_histogram, princeton_curve
from .fmap import PointMap
from .fmnet import NetworkParams, ShapeBundle, TrainConfig, TrainPair, compute_map, forward, train
from .geodesics import DistanceCache, geodesic_errors
from .mesh import nearest_neighbor_injection, read_mesh
from .spectral import SpectralBasis, build_fem_laplacian, compute_eigenbasis
from .upscale import AdmmConfig, upscale_map

logger = logging.getLogger("fmcorr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
CACHE_ENV = "FMCORR_CACHE"
CACHE_VERSION = "1"
CACHE_FILES = ("laplacian", "mass", "eigenvalues", "eigenfunctions", "shot")


class UsageError(Exception):
    pass


class CacheError(FmcorrError):
    pass


@dataclass
class PipelineConfig:
    k: int = 30  # eigenpairs stored by precompute
    shot_radius_frac: float = 0.05
    train_k: int = None  # basis size for train/match/curves/upscale; None: the cached size
    iters: int = 200
    batch_matches: int = 1000
    seed: int = 0
    ridge: float = 1e-3
    loss: str = "soft_error"
    form: str = "sum"
    n_blocks: int = 7
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bidirectional: bool = True
    gamma: float = 0.5
    margin: float = 1.0
    rho: float = 1.0
    admm_iters: int = 1000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    sample: int = 0  # 0: evaluate every source vertex
    cache: str = None

    def validate(self):
        positive = ("k", "shot_radius_frac", "batch_matches", "n_blocks", "lr", "eps", "rho",
                    "tol_primal", "tol_dual", "margin")
        for name in positive:
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.train_k is not None and self.train_k < 1:
            raise UsageError("train k must be positive")
        for name in ("iters", "admm_iters", "sample", "ridge"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be nonnegative")
        if self.loss not in ("soft_error", "siamese"):
            raise UsageError(f"loss must be soft_error or siamese, got {self.loss!r}")
        if self.form not in ("sum", "frobenius"):
            raise UsageError(f"form must be sum or frobenius, got {self.form!r}")
        return self

    def train_config(self, k):
        return TrainConfig(k=k, iters=self.iters, batch_matches=self.batch_matches,
                           seed=self.seed, ridge=self.ridge, loss=self.loss, form=self.form,
                           n_blocks=self.n_blocks, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, bidirectional=self.bidirectional, gamma=self.gamma,
                           margin=self.margin)

    def admm_config(self):
        return AdmmConfig(self.rho, self.admm_iters, self.tol_primal, self.tol_dual)

    def digest(self, names=None):
        items = asdict(self)
        names = sorted(items) if names is None else names
        return fmb.checksum(";".join(f"{n}={items[n]!r}" for n in names if n != "cache"))


# config file key -> PipelineConfig field, per section
CONFIG_KEYS = {
    "spectral": {"k": "k"},
    "shot": {"radius_frac": "shot_radius_frac"},
    "train": {"k": "train_k", "iters": "iters", "batch_matches": "batch_matches", "seed": "seed",
              "ridge": "ridge", "loss": "loss", "form": "form", "n_blocks": "n_blocks", "lr": "lr",
              "beta1": "beta1", "beta2": "beta2", "eps": "eps", "bidirectional": "bidirectional",
              "gamma": "gamma", "margin": "margin"},
    "upscale": {"rho": "rho", "max_iter": "admm_iters", "tol_primal": "tol_primal",
                "tol_dual": "tol_dual"},
    "eval": {"sample": "sample"},
    "paths": {"cache": "cache"},
}
_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_FIELD_TYPES.update(train_k=int, cache=str)


def _coerce(name, raw):
    kind = _FIELD_TYPES[name]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw) if kind in (int, float, str) else raw
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path=None):
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    for section in parser.sections():
        keys = CONFIG_KEYS.get(section)
        if keys is None:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in keys:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            setattr(cfg, keys[key], _coerce(keys[key], raw))
    return cfg


def resolve_config(args):
    cfg = load_config(args.config)
    overrides = {"seed": args.seed, "loss": args.loss, "ridge": args.ridge, "rho": args.rho,
                 "sample": args.sample}
    if args.k is not None:
        overrides["k" if args.command == "precompute" else "train_k"] = args.k
    if args.iters is not None:
        overrides["admm_iters" if args.command == "upscale" else "iters"] = args.iters
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()


# --- cache --------------------------------------------------------------------


def cache_root(cfg):
    root = os.environ.get(CACHE_ENV) or cfg.cache
    if not root:
        root = os.path.join(os.path.expanduser("~"), ".cache", "fmcorr")
    return root


@contextlib.contextmanager
def locked(path, exclusive=True):
    """Advisory lock on ``path + '.lock'`` for the duration of the block."""
    with open(f"{path}.lock", "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _read_mesh(path):
    try:
        return read_mesh(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def cache_key(mesh, cfg):
    return fmb.checksum(CACHE_VERSION, mesh.content_checksum(),
                        f"shot_radius_frac={cfg.shot_radius_frac!r}")


def _verify(entry, manifest):
    for name in CACHE_FILES:
        path = os.path.join(entry, f"{name}.fmb")
        want = manifest.get(f"file.{name}")
        if want is None:
            raise CacheError(f"{entry}: manifest lists no {name} artifact")
        if not os.path.exists(path):
            raise CacheError(f"missing cached artifact {path}")
        got = fmb.file_checksum(path)
        if got != want:
            raise ChecksumError(path, want, got)


def _build_entry(mesh, cfg, key):
    op = build_fem_laplacian(mesh)
    k = min(cfg.k, mesh.n_vertices)
    basis = compute_eigenbasis(op, k, basis_id=key)
    shot = compute_shot(mesh, config=ShotConfig(cfg.shot_radius_frac))
    coo = sparse.triu(op.stiffness).tocoo()
    triplets = np.column_stack([coo.row, coo.col, coo.data]).astype(np.float64)
    arrays = {"laplacian": triplets, "mass": op.mass_diagonal[:, None],
              "eigenvalues": basis.eigenvalues[:, None], "eigenfunctions": basis.eigenfunctions,
              "shot": shot.values}
    return arrays, {"k": k, "shot_radius": repr(shot.meta["radius"]), "shot_empty": shot.meta["n_empty"]}


def precompute_one(mesh_path, cfg, force=False):
    """Fill the cache entry of one mesh; returns (entry dir, {artifact: 'cached'|'computed'})."""
    mesh = _read_mesh(mesh_path)
    key = cache_key(mesh, cfg)
    root = cache_root(cfg)
    os.makedirs(root, exist_ok=True)
    entry = os.path.join(root, key)
    manifest_path = os.path.join(entry, "manifest.txt")
    with locked(entry):
        if os.path.exists(manifest_path) and not force:
            manifest = fmb.read_manifest(manifest_path)
            want_k = min(cfg.k, mesh.n_vertices)
            if manifest.get("k") != str(want_k):
                raise CacheError(f"stale cache entry {entry}: holds k={manifest.get('k')}, "
                                 f"requested k={want_k}; use --force to recompute")
            _verify(entry, manifest)
            return entry, {name: "cached" for name in CACHE_FILES}
        os.makedirs(entry, exist_ok=True)
        arrays, extra = _build_entry(mesh, cfg, key)
        manifest = {"command": "precompute", "cache_version": CACHE_VERSION,
                    "config_hash": cfg.digest(["k", "shot_radius_frac"]),
                    "input.mesh": mesh_path, "input.mesh_checksum": mesh.content_checksum(),
                    "n": mesh.n_vertices, **extra}
        for name in CACHE_FILES:
            data = fmb.write_matrix(os.path.join(entry, f"{name}.fmb"), arrays[name])
            manifest[f"file.{name}"] = fmb.digest(data)
        fmb.write_manifest(manifest_path, manifest)
    if extra["shot_empty"]:
        logger.warning("%s: %d of %d vertices have no SHOT neighbors; consider a larger [shot] radius_frac",
                       mesh_path, extra["shot_empty"], mesh.n_vertices)
    return entry, {name: "computed" for name in CACHE_FILES}


def load_bundle(mesh_path, cfg, mesh=None):
    """ShapeBundle of a precomputed mesh (checksums verified)."""
    mesh = mesh or _read_mesh(mesh_path)
    key = cache_key(mesh, cfg)
    entry = os.path.join(cache_root(cfg), key)
    manifest_path = os.path.join(entry, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise CacheError(f"no cache entry for {mesh_path}; run 'fmcorr precompute' first")
    with locked(entry, exclusive=False):
        manifest = fmb.read_manifest(manifest_path)
        _verify(entry, manifest)
        load = {name: fmb.read_matrix(os.path.join(entry, f"{name}.fmb")) for name in CACHE_FILES}
    basis = SpectralBasis(load["eigenvalues"][:, 0], load["eigenfunctions"], load["mass"][:, 0], key)
    return ShapeBundle(basis, load["shot"], mesh), manifest


# --- artifacts ------------------------------------------------------------------


def _write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return fmb.digest(text)


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _read_pointmap(path):
    try:
        return PointMap.load(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_checkpoint(out, params, cfg, tc, inputs):
    manifest = {"command": "train", "q": params.q, "n_blocks": params.n_blocks, "seed": tc.seed,
                "iterations": tc.iters, "k": tc.k, "loss": tc.loss,
                "config_hash": cfg.digest()}
    manifest.update(inputs)
    for name, arr in params.items():
        data = fmb.write_matrix(os.path.join(out, f"{name}.fmb"), np.atleast_2d(arr.T).T)
        manifest[f"file.{name}"] = fmb.digest(data)
    fmb.write_manifest(os.path.join(out, "manifest.txt"), manifest)


def load_checkpoint(path):
    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise CacheError(f"{path}: not a checkpoint directory (no manifest.txt)")
    manifest = fmb.read_manifest(manifest_path)
    try:
        n_blocks, q = int(manifest["n_blocks"]), int(manifest["q"])
        k = int(manifest["k"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: bad or missing entry {exc}") from None
    items = {}
    for key, want in manifest.items():
        if not key.startswith("file."):
            continue
        name = key[5:]
        fpath = os.path.join(path, f"{name}.fmb")
        got = fmb.file_checksum(fpath)
        if got != want:
            raise ChecksumError(fpath, want, got)
        arr = fmb.read_matrix(fpath)
        items[name] = arr[:, 0] if name.endswith(".b1") or name.endswith(".b2") else arr
    try:
        params = NetworkParams.from_items(items, n_blocks, int(manifest.get("seed", 0)))
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint lacks weight {exc}") from None
    if params.q != q:
        raise FormatError(f"{path}: weights have dimension {params.q}, manifest says {q}")
    return params, k, manifest


def _read_pairs(path):
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'source target truth', got {line!r}")
            pairs.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    if not pairs:
        raise FormatError(f"{path}: no training pairs listed")
    return pairs


# --- commands -------------------------------------------------------------------


def _precompute_task(job):
    path, cfg, force = job
    return precompute_one(path, cfg, force)


def cmd_precompute(args, cfg):
    jobs = [(p, cfg, args.force) for p in args.meshes]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_precompute_task, jobs))
    else:
        results = [_precompute_task(j) for j in jobs]
    for path, (entry, status) in zip(args.meshes, results):
        print(f"{path} -> {entry}")
        for name in CACHE_FILES:
            print(f"  {name}: {status[name]}")
    return EXIT_OK


def cmd_train(args, cfg):
    listed = _read_pairs(args.pairs)
    bundles = {}
    for src, tgt, truth in listed:
        for p in (src, tgt):
            if p not in bundles:
                bundles[p] = load_bundle(p, cfg)[0]
        if not os.path.exists(truth):
            raise CacheError(f"missing ground-truth map {truth}")
    cached_k = min(b.basis.k for b in bundles.values())
    k = cfg.train_k or cached_k
    if k > cached_k:
        raise UsageError(f"k mismatch: k={k} requested but the cache holds {cached_k} eigenpairs")
    tc = cfg.train_config(k)
    pairs, inputs = [], {}
    for i, (src, tgt, truth) in enumerate(listed):
        pm = _read_pointmap(truth)
        try:
            pairs.append(TrainPair(bundles[src], bundles[tgt], pm.assignments))
        except ValueError as exc:
            raise FormatError(f"{truth}: {exc}") from None
        inputs[f"input.pair{i}"] = " ".join(os.path.basename(x) for x in (src, tgt, truth))
        inputs[f"input.pair{i}.checksum"] = fmb.checksum(bundles[src].basis.basis_id,
                                                         bundles[tgt].basis.basis_id,
                                                         fmb.file_checksum(truth))
    params, log = train(pairs, tc)
    out = _out_dir(args.out)
    save_checkpoint(out, params, cfg, tc, inputs)
    if args.timing:
        rows = [f"{i},{l!r},{w:.3f}" for i, (l, w) in enumerate(zip(log.losses, log.wall_ms))]
        header = "iter,loss,wall_ms"
    else:
        rows = [f"{i},{l!r}" for i, l in enumerate(log.losses)]
        header = "iter,loss"
    _write_text(os.path.join(out, "loss.csv"), "\n".join([header, *rows]) + "\n")
    if log.losses:
        print(f"trained {tc.iters} iterations: loss {log.losses[0]:.6g} -> {log.losses[-1]:.6g}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _network_for(args, cfg, src, tgt):
    """Returns (params or None, k) after checking the checkpoint against the caches."""
    if args.raw and args.checkpoint:
        raise UsageError("--raw and --checkpoint are mutually exclusive")
    if not args.raw and not args.checkpoint:
        raise UsageError("refined mode needs --checkpoint (or pass --raw)")
    k = cfg.train_k or min(src.basis.k, tgt.basis.k)
    params = None
    if args.checkpoint:
        if not os.path.isdir(args.checkpoint):
            raise UsageError(f"checkpoint {args.checkpoint} does not exist")
        params, ck_k, _ = load_checkpoint(args.checkpoint)
        if cfg.train_k is not None and cfg.train_k != ck_k:
            raise UsageError(f"k mismatch: checkpoint was trained with k={ck_k}, requested k={cfg.train_k}")
        k = ck_k
        if params.q != src.descriptors.shape[1]:
            raise UsageError(f"descriptor dimension mismatch: checkpoint q={params.q}, "
                             f"cache q={src.descriptors.shape[1]}")
    for b in (src, tgt):
        if b.basis.k < k:
            raise UsageError(f"k mismatch: k={k} requested but the cache holds {b.basis.k} eigenpairs")
    return params, k


def _input_entries(args_paths):
    return {f"input.{name}": f"{os.path.basename(p)} {fmb.file_checksum(p)}" for name, p in args_paths}


def cmd_match(args, cfg):
    src, _ = load_bundle(args.source, cfg)
    tgt, _ = load_bundle(args.target, cfg)
    params, k = _network_for(args, cfg, src, tgt)
    fmap, pm = compute_map(src, tgt, params, k, cfg.ridge)
    out = _out_dir(args.out)
    manifest = {"command": "match", "mode": "raw" if params is None else "refined", "k": k,
                "ridge": repr(cfg.ridge), "config_hash": cfg.digest()}
    manifest.update(_input_entries([("source", args.source), ("target", args.target)]))
    if args.checkpoint:
        manifest["input.checkpoint"] = fmb.file_checksum(os.path.join(args.checkpoint, "manifest.txt"))
    manifest["file.map"] = _write_text(os.path.join(out, "map.txt"), pm.to_text())
    manifest["file.fmap"] = fmb.digest(fmb.write_matrix(os.path.join(out, "fmap.fmb"), fmap.C))
    fmb.write_manifest(os.path.join(out, "manifest.txt"), manifest)
    print(f"matched {len(pm)} source vertices (k={k}); outputs in {out}")
    return EXIT_OK


def cmd_upscale(args, cfg):
    low_src, low_tgt = _read_mesh(args.low_source), _read_mesh(args.low_target)
    src, _ = load_bundle(args.source, cfg)
    tgt, _ = load_bundle(args.target, cfg)
    low_map = _read_pointmap(args.low_map)
    k = cfg.train_k or min(src.basis.k, tgt.basis.k)
    if k > min(src.basis.k, tgt.basis.k):
        raise UsageError(f"k mismatch: k={k} requested but the cache holds fewer eigenpairs")
    src_basis, tgt_basis = src.basis.truncated(k), tgt.basis.truncated(k)
    inj_src = nearest_neighbor_injection(low_src, src.mesh)
    inj_tgt = nearest_neighbor_injection(low_tgt, tgt.mesh)
    try:
        pm, result = upscale_map(low_map, inj_src, inj_tgt, src_basis, tgt_basis, cfg.admm_config())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    manifest = {"command": "upscale", "k": k, "iterations": result.iterations, "converged": result.converged,
                "objective": repr(result.objective), "config_hash": cfg.digest()}
    manifest.update(_input_entries([("low_source", args.low_source), ("low_target", args.low_target),
                                    ("source", args.source), ("target", args.target),
                                    ("low_map", args.low_map)]))
    manifest["file.map"] = _write_text(os.path.join(out, "map.txt"), pm.to_text())
    manifest["file.fmap"] = fmb.digest(fmb.write_matrix(os.path.join(out, "fmap.fmb"), result.fmap.C))
    manifest["file.admm"] = _write_text(os.path.join(out, "admm.csv"), result.history_csv())
    fmb.write_manifest(os.path.join(out, "manifest.txt"), manifest)
    state = "converged" if result.converged else "stopped"
    print(f"ADMM {state} after {result.iterations} iterations, objective {result.objective:.6g}")
    return EXIT_OK


def cmd_eval(args, cfg):
    pm = _read_pointmap(args.map)
    truth = _read_pointmap(args.truth).assignments
    mesh = _read_mesh(args.target)
    if len(pm) != len(truth):
        raise UsageError(f"map has {len(pm)} entries, ground truth {len(truth)}")
    pred = pm.assignments
    for name, arr in (("map", pred), ("ground truth", truth)):
        if arr.size and arr.max() >= mesh.n_vertices:
            raise UsageError(f"{name} points outside the target mesh ({mesh.n_vertices} vertices)")
    if pred.size and pred.min() < 0:
        raise UsageError("map contains negative vertex indices")
    verts = np.flatnonzero(truth >= 0)
    if cfg.sample and cfg.sample < verts.size:
        rng = np.random.default_rng(cfg.seed)
        verts = np.sort(rng.choice(verts, size=cfg.sample, replace=False))
    if verts.size == 0:
        raise UsageError("no source vertices with a ground-truth match")
    cache = DistanceCache(mesh)
    rows = cache.distance_rows(truth[verts])
    errors = geodesic_errors(pred[verts], truth[verts], rows, mesh.total_area)
    if not np.all(np.isfinite(errors)):
        raise NumericalError("some predicted matches are unreachable from their ground truth")
    out = _out_dir(args.out)
    summary = error_summary(errors)
    manifest = {"command": "eval", "config_hash": cfg.digest(["sample", "seed"])}
    manifest.update(_input_entries([("map", args.map), ("truth", args.truth), ("target", args.target)]))
    lines = ["vertex,error"] + [f"{v},{e!r}" for v, e in zip(verts.tolist(), errors.tolist())]
    manifest["file.errors"] = _write_text(os.path.join(out, "errors.csv"), "\n".join(lines) + "\n")
    manifest["file.princeton"] = _write_text(os.path.join(out, "princeton.csv"),
                                             princeton_curve(errors).to_csv())
    manifest["file.summary"] = _write_text(os.path.join(out, "summary.json"),
                                           json.dumps(summary, sort_keys=True, indent=2) + "\n")
    fmb.write_manifest(os.path.join(out, "manifest.txt"), manifest)
    print(f"mean error {summary['mean']:.6g}, max {summary['max']:.6g}, "
          f"at zero {summary['fraction_at_zero']:.4f} over {summary['count']} vertices")
    return EXIT_OK


def cmd_curves(args, cfg):
    src, _ = load_bundle(args.source, cfg)
    tgt, _ = load_bundle(args.target, cfg)
    truth = _read_pointmap(args.truth).assignments
    F, G = src.descriptors, tgt.descriptors
    mode = "raw"
    if args.checkpoint:
        params, _, _ = load_checkpoint(args.checkpoint)
        if params.q != F.shape[1]:
            raise UsageError(f"descriptor dimension mismatch: checkpoint q={params.q}, cache q={F.shape[1]}")
        F, G, mode = forward(params, F), forward(params, G), "refined"
    if len(truth) != len(F) or (truth.size and truth.max() >= len(G)):
        raise UsageError("ground truth does not fit the source/target meshes")
    max_rank = args.max_rank or len(G)
    if max_rank > len(G):
        raise UsageError(f"max rank {max_rank} exceeds the {len(G)} target vertices")
    cmc = cmc_curve(F, G, truth, max_rank)
    hist = match_distance_histogram(F, G, truth, args.bins)
    out = _out_dir(args.out)
    manifest = {"command": "curves", "mode": mode, "max_rank": max_rank, "bins": args.bins}
    manifest.update(_input_entries([("source", args.source), ("target", args.target), ("truth", args.truth)]))
    manifest["file.cmc_csv"] = _write_text(os.path.join(out, "cmc.csv"), cmc.to_csv(("rank", "fraction")))
    manifest["file.cmc_json"] = _write_text(os.path.join(out, "cmc.json"), cmc.to_json() + "\n")
    manifest["file.hist_csv"] = _write_text(os.path.join(out, "hist.csv"), hist.to_csv())
    manifest["file.hist_json"] = _write_text(os.path.join(out, "hist.json"), hist.to_json() + "\n")
    fmb.write_manifest(os.path.join(out, "manifest.txt"), manifest)
    print(f"CMC rank-1 {cmc.fractions[0]:.4f}; outputs in {out}")
    return EXIT_OK


COMMANDS = {"precompute": cmd_precompute, "train": cmd_train, "match": cmd_match,
            "upscale": cmd_upscale, "eval": cmd_eval, "curves": cmd_curves}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file with sections")
    common.add_argument("--k", type=int, help="eigenpairs to cache (precompute) or basis size used by other commands")
    common.add_argument("--seed", type=int)
    common.add_argument("--loss", choices=("soft_error", "siamese"))
    common.add_argument("--ridge", type=float)
    common.add_argument("--rho", type=float)
    common.add_argument("--iters", type=int, help="training iterations, or ADMM iterations for upscale")
    common.add_argument("--sample", type=int, help="evaluate a seeded random subset of source vertices")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fmcorr", description="Deep functional maps toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", parents=[common], help="cache Laplacian, eigenbasis and SHOT")
    p.add_argument("meshes", nargs="+")
    p.add_argument("--force", action="store_true", help="recompute even if cached")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train", parents=[common], help="train the descriptor network")
    p.add_argument("pairs", help="file with one 'source target truth' line per pair")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--timing", action="store_true", help="add a wall_ms column to loss.csv")

    for name, text in (("match", "compute functional and vertex maps"),
                       ("curves", "CMC curve and descriptor distance histogram")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("source")
        p.add_argument("target")
        if name == "curves":
            p.add_argument("truth")
            p.add_argument("--max-rank", type=int)
            p.add_argument("--bins", type=int, default=20)
        p.add_argument("--checkpoint")
        p.add_argument("--raw", action="store_true", help="use unrefined SHOT descriptors")
        p.add_argument("--out", required=True)

    p = sub.add_parser("upscale", parents=[common], help="transfer a low-resolution map")
    for arg in ("low_source", "low_target", "source", "target", "low_map"):
        p.add_argument(arg)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="normalized geodesic errors of a map")
    p.add_argument("map")
    p.add_argument("truth")
    p.add_argument("target")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "curves" and args.bins < 1:
            raise UsageError("--bins must be at least 1")
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"fmcorr {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fmcorr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FmcorrError) as exc:
        print(f"fmcorr {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"fmcorr {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
