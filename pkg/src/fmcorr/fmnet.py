"""Siamese residual descriptor network trained through the functional-map layers.

Everything here is plain numpy with hand-written reverse-mode gradients:
residual ELU blocks, the spectral projection, the ridge-regularised
functional-map solve, the soft correspondence and the soft error loss, plus
the contrastive (siamese) baseline loss and an ADAM optimizer.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import DegenerateColumnError, NumericalError
from .fmap import FunctionalMap, PointMap, recover_point_map, solve_fmap
from .geodesics import DistanceCache

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")
N_BLOCKS = 7


# --- parameters -------------------------------------------------------------


@dataclass
class NetworkParams:
    """Weights of a stack of residual blocks ``x + W2 elu(W1 x + b1) + b2``."""

    blocks: list
    seed: int = None

    @property
    def q(self):
        return self.blocks[0]["W1"].shape[0] if self.blocks else 0

    @property
    def n_blocks(self):
        return len(self.blocks)

    def items(self):
        for i, block in enumerate(self.blocks):
            for name in PARAM_NAMES:
                yield f"block{i}.{name}", block[name]

    def map(self, fn, *others):
        """Apply ``fn`` array-wise across this and other same-shaped parameter sets."""
        blocks = []
        for i, block in enumerate(self.blocks):
            blocks.append({name: fn(block[name], *(o.blocks[i][name] for o in others))
                           for name in PARAM_NAMES})
        return NetworkParams(blocks, self.seed)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def copy(self):
        return self.map(np.array)

    def flat(self):
        return np.concatenate([a.ravel() for _, a in self.items()])

    @classmethod
    def from_items(cls, items, n_blocks, seed=None):
        items = dict(items)
        blocks = [{name: np.asarray(items[f"block{i}.{name}"], dtype=np.float64) for name in PARAM_NAMES}
                  for i in range(n_blocks)]
        return cls(blocks, seed)


def init_params(q, seed=0, n_blocks=N_BLOCKS):
    """Random ``W1 ~ N(0, 2/q)``, zero biases and zero ``W2``: the initial network is the identity."""
    if q < 1:
        raise ValueError("descriptor dimension must be at least 1")
    rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / q)
    blocks = [{"W1": rng.normal(0.0, std, size=(q, q)), "b1": np.zeros(q),
               "W2": np.zeros((q, q)), "b2": np.zeros(q)} for _ in range(n_blocks)]
    return NetworkParams(blocks, seed)


# --- network ----------------------------------------------------------------


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def forward(params, descriptors, return_cache=False):
    """Refine per-vertex descriptors (n x q); rows are processed independently."""
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.q:
        raise ValueError(f"descriptors must have shape (n, {params.q}), got {X.shape}")
    cache = []
    for block in params.blocks:
        H = X @ block["W1"].T + block["b1"]
        cache.append((X, H))
        X = X + elu(H) @ block["W2"].T + block["b2"]
    return (X, cache) if return_cache else X


def backward_network(params, cache, grad_out, grads=None):
    """Accumulate parameter gradients of a :func:`forward` pass into ``grads``.

    Returns the gradient with respect to the network input.
    """
    if grads is None:
        grads = params.zeros_like()
    g = grad_out
    for i in reversed(range(params.n_blocks)):
        block, acc = params.blocks[i], grads.blocks[i]
        X, H = cache[i]
        act = elu(H)
        acc["b2"] += g.sum(axis=0)
        acc["W2"] += g.T @ act
        gH = (g @ block["W2"]) * elu_grad(H)
        acc["W1"] += gH.T @ X
        acc["b1"] += gH.sum(axis=0)
        g = g + gH @ block["W1"]
    return g


# --- training data ----------------------------------------------------------


@dataclass
class ShapeBundle:
    """Everything the network needs from one shape."""

    basis: object
    descriptors: np.ndarray
    mesh: object = None
    distances: object = None  # anything with .rows(indices); built lazily from mesh

    def distance_rows(self, indices):
        if self.distances is None:
            if self.mesh is None:
                raise ValueError("shape bundle has neither distances nor a mesh")
            self.distances = DistanceCache(self.mesh)
        return self.distances.rows(indices)

    @property
    def n(self):
        return self.basis.n

    @property
    def vertex_areas(self):
        return self.basis.mass_diagonal


@dataclass
class TrainPair:
    """Source/target shapes with a ground-truth map (``-1`` marks unmapped vertices)."""

    src: ShapeBundle
    tgt: ShapeBundle
    truth: np.ndarray

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=np.int64)
        if len(self.truth) != self.src.n:
            raise ValueError(f"ground truth has {len(self.truth)} entries for {self.src.n} source vertices")
        if self.truth.max() >= self.tgt.n:
            raise ValueError("ground truth points outside the target shape")

    @property
    def domain(self):
        return np.flatnonzero(self.truth >= 0)

    def reversed(self):
        """The same pair in the opposite direction, using the inverse of the ground truth.

        Target vertices hit by several sources map back to the lowest one.
        """
        inv = np.full(self.tgt.n, -1, dtype=np.int64)
        dom = self.domain
        # reversed assignment order makes the lowest source index win
        inv[self.truth[dom[::-1]]] = dom[::-1]
        return TrainPair(self.tgt, self.src, inv)


def truncate_bundle(bundle, k):
    if bundle.basis.k == k:
        return bundle
    return replace(bundle, basis=bundle.basis.truncated(k))


# --- functional-map loss ----------------------------------------------------


def relative_ridge(Fh, ridge):
    return ridge * np.trace(Fh @ Fh.T) / Fh.shape[0]


def fmnet_forward_loss(params, pair, sample, ridge=1e-3, form="sum"):
    """Soft error loss of the sampled matches, and a cache for :func:`fmnet_backward`.

    ``ridge`` is relative: the solve uses ``eps = ridge * mean(diag(F F^T))``
    on the spectral coefficients of the refined source descriptors.
    """
    sample = np.asarray(sample, dtype=np.int64)
    truth = pair.truth[sample]
    if np.any(truth < 0):
        raise ValueError("sampled vertices must have a ground-truth match")
    src, tgt = pair.src, pair.tgt
    if src.basis.k != tgt.basis.k:
        raise ValueError("source and target bases must have the same size")
    Fout, cache_f = forward(params, src.descriptors, return_cache=True)
    Gout, cache_g = forward(params, tgt.descriptors, return_cache=True)
    a_src = src.basis.analysis()
    a_tgt = tgt.basis.analysis()
    Fh, Gh = a_src @ Fout, a_tgt @ Gout
    eps = relative_ridge(Fh, ridge)
    M = Fh @ Fh.T + eps * np.eye(Fh.shape[0])
    try:
        chol = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise NumericalError("functional-map system is singular; use ridge > 0 and descriptors "
                             "with nonzero spectral content") from None
    C = scipy.linalg.cho_solve(chol, Fh @ Gh.T).T
    B = a_src[:, sample]
    S = tgt.basis.eigenfunctions @ (C @ B)
    Q = np.abs(S)
    colsum = Q.sum(axis=0)
    if np.any(colsum == 0):
        raise DegenerateColumnError(sample[colsum == 0])
    P = Q / colsum
    D = tgt.distance_rows(truth).T
    m = len(sample)
    if form == "sum":
        loss = float(np.sum(P * D) / m)
    elif form == "frobenius":
        loss = float(np.linalg.norm(P * D))
    else:
        raise ValueError(f"unknown loss form {form!r}")
    cache = {"params": params, "pair": pair, "form": form, "ridge": ridge, "loss": loss,
             "cache_f": cache_f, "cache_g": cache_g, "a_src": a_src, "a_tgt": a_tgt,
             "Fh": Fh, "Gh": Gh, "chol": chol, "C": C, "B": B, "S": S, "colsum": colsum,
             "P": P, "D": D}
    return loss, cache


def fmnet_backward(cache):
    """Exact gradient of the loss from :func:`fmnet_forward_loss` w.r.t. all parameters."""
    params, pair = cache["params"], cache["pair"]
    P, D, S, colsum = cache["P"], cache["D"], cache["S"], cache["colsum"]
    Fh, Gh, C, chol = cache["Fh"], cache["Gh"], cache["C"], cache["chol"]
    k = Fh.shape[0]
    m = P.shape[1]
    if cache["form"] == "sum":
        gP = D / m
    else:
        loss = cache["loss"]
        gP = P * D * D / loss if loss > 0 else np.zeros_like(P)
    # column normalisation, then |.| with subgradient 0 at 0
    gQ = (gP - np.sum(gP * P, axis=0)) / colsum
    gS = np.sign(S) * gQ
    gC = pair.tgt.basis.eigenfunctions.T @ gS @ cache["B"].T
    # C = N M^-1 with N = Gh Fh^T and M = Fh Fh^T + eps I (both symmetric solves)
    K = scipy.linalg.cho_solve(chol, gC.T).T
    gM = -C.T @ K
    gGh = K @ Fh
    gFh = K.T @ Gh + (gM + gM.T) @ Fh
    gFh += np.trace(gM) * 2.0 * cache["ridge"] / k * Fh
    grads = params.zeros_like()
    backward_network(params, cache["cache_f"], cache["a_src"].T @ gFh, grads)
    backward_network(params, cache["cache_g"], cache["a_tgt"].T @ gGh, grads)
    return grads


# --- siamese baseline -------------------------------------------------------


@dataclass
class SiameseConfig:
    """Contrastive loss settings; pairs are (source vertex, target vertex) index arrays."""

    similar: np.ndarray
    dissimilar: np.ndarray
    gamma: float = 0.5
    margin: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        self.similar = np.asarray(self.similar, dtype=np.int64).reshape(-1, 2)
        self.dissimilar = np.asarray(self.dissimilar, dtype=np.int64).reshape(-1, 2)
        if len(self.similar) == 0 or len(self.dissimilar) == 0:
            raise ValueError("both pair sets must be non-empty")


def siamese_loss_and_grad(params, src_descriptors, tgt_descriptors, config):
    """Contrastive loss over similar/dissimilar pairs and its parameter gradient.

    ``gamma * sum ||F(x) - G(y+)||^2 + (1 - gamma) * sum (mu - ||F(x) - G(y-)||)_+^2``
    with shared weights on both shapes.
    """
    S, Dp = config.similar, config.dissimilar
    src_rows, src_pos = np.unique(np.concatenate([S[:, 0], Dp[:, 0]]), return_inverse=True)
    tgt_rows, tgt_pos = np.unique(np.concatenate([S[:, 1], Dp[:, 1]]), return_inverse=True)
    Fout, cache_f = forward(params, np.asarray(src_descriptors)[src_rows], return_cache=True)
    Gout, cache_g = forward(params, np.asarray(tgt_descriptors)[tgt_rows], return_cache=True)
    ns = len(S)
    fs, gs = src_pos[:ns], tgt_pos[:ns]
    fd, gd = src_pos[ns:], tgt_pos[ns:]

    diff_s = Fout[fs] - Gout[gs]
    diff_d = Fout[fd] - Gout[gd]
    dist_d = np.linalg.norm(diff_d, axis=1)
    hinge = np.maximum(0.0, config.margin - dist_d)
    loss = config.gamma * np.sum(diff_s ** 2) + (1 - config.gamma) * np.sum(hinge ** 2)

    gF = np.zeros_like(Fout)
    gG = np.zeros_like(Gout)
    g_s = 2.0 * config.gamma * diff_s
    np.add.at(gF, fs, g_s)
    np.add.at(gG, gs, -g_s)
    # d/d(diff) of hinge^2 = -2 hinge diff / dist; zero when inactive or dist == 0
    coef = np.where((hinge > 0) & (dist_d > 0), -2.0 * (1 - config.gamma) * hinge / np.where(dist_d > 0, dist_d, 1.0), 0.0)
    g_d = coef[:, None] * diff_d
    np.add.at(gF, fd, g_d)
    np.add.at(gG, gd, -g_d)

    grads = params.zeros_like()
    backward_network(params, cache_f, gF, grads)
    backward_network(params, cache_g, gG, grads)
    return float(loss), grads


# --- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)


def adam_step(state, params, grads):
    """One bias-corrected ADAM update; returns ``(new_state, new_params)``."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = state.m.map(lambda m_, g: b1 * m_ + (1 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, grads)
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new_params = params.map(lambda p, m_, v_: p - state.lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps), m, v)
    return replace(state, m=m, v=v, t=t), new_params


# --- training loop ----------------------------------------------------------


@dataclass
class TrainConfig:
    k: int = 30
    iters: int = 200
    batch_matches: int = 1000
    seed: int = 0
    ridge: float = 1e-3
    loss: str = "soft_error"
    form: str = "sum"
    n_blocks: int = N_BLOCKS
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bidirectional: bool = True
    gamma: float = 0.5
    margin: float = 1.0

    def __post_init__(self):
        if self.loss not in ("soft_error", "siamese"):
            raise ValueError(f"loss must be 'soft_error' or 'siamese', got {self.loss!r}")
        if self.k < 1 or self.batch_matches < 1 or self.iters < 0:
            raise ValueError("k and batch_matches must be positive, iters nonnegative")


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)


def sample_matches(rng, pair, size):
    """Draw distinct source vertices with probability proportional to vertex area."""
    dom = pair.domain
    if dom.size == 0:
        raise ValueError("training pair has no ground-truth matches")
    w = pair.src.vertex_areas[dom]
    size = min(size, dom.size)
    return np.sort(rng.choice(dom, size=size, replace=False, p=w / w.sum()))


def _siamese_pairs(rng, pair, sample):
    truth = pair.truth[sample]
    neg = rng.integers(0, pair.tgt.n - 1, size=len(sample))
    neg = neg + (neg >= truth)  # uniform over targets other than the true one
    return np.column_stack([sample, truth]), np.column_stack([sample, neg])


def train(pairs, config=None, params=None):
    """Train the descriptor network with ADAM.

    Pairs are visited round-robin, each in both directions when
    ``config.bidirectional``. Returns ``(params, TrainLog)``; the log holds the
    loss of every iteration, evaluated before that iteration's update.
    """
    cfg = config or TrainConfig()
    if not pairs:
        raise ValueError("at least one training pair is required")
    k = cfg.k
    for p in pairs:
        if min(p.src.basis.k, p.tgt.basis.k) < k:
            raise ValueError(f"k={k} exceeds the size of a training basis")
    schedule = []
    for p in pairs:
        p = TrainPair(truncate_bundle(p.src, k), truncate_bundle(p.tgt, k), p.truth)
        schedule.append(p)
        if cfg.bidirectional:
            schedule.append(p.reversed())
    q = schedule[0].src.descriptors.shape[1]
    if params is None:
        params = init_params(q, cfg.seed, cfg.n_blocks)
    state = AdamState.create(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng([cfg.seed, 1])
    log = TrainLog()
    for it in range(cfg.iters):
        start = time.perf_counter()
        pair = schedule[it % len(schedule)]
        sample = sample_matches(rng, pair, cfg.batch_matches)
        if cfg.loss == "soft_error":
            loss, cache = fmnet_forward_loss(params, pair, sample, cfg.ridge, cfg.form)
            grads = fmnet_backward(cache)
        else:
            sim, dis = _siamese_pairs(rng, pair, sample)
            sc = SiameseConfig(sim, dis, cfg.gamma, cfg.margin)
            loss, grads = siamese_loss_and_grad(params, pair.src.descriptors, pair.tgt.descriptors, sc)
        state, params = adam_step(state, params, grads)
        log.losses.append(loss)
        log.wall_ms.append(1000.0 * (time.perf_counter() - start))
        if it % 50 == 0:
            logger.debug("iter %d loss %.6g", it, loss)
    return params, log


# --- inference --------------------------------------------------------------


def compute_map(src, tgt, params=None, k=None, ridge=1e-3):
    """Functional map and vertex map between two shapes.

    ``params=None`` runs the unrefined descriptors through the same solve.
    """
    if k is not None:
        src, tgt = truncate_bundle(src, k), truncate_bundle(tgt, k)
    F = src.descriptors if params is None else forward(params, src.descriptors)
    G = tgt.descriptors if params is None else forward(params, tgt.descriptors)
    Fh = src.basis.analysis() @ F
    Gh = tgt.basis.analysis() @ G
    C = solve_fmap(Fh, Gh, relative_ridge(Fh, ridge)).C
    fmap = FunctionalMap(C, src.basis.basis_id, tgt.basis.basis_id)
    return fmap, recover_point_map(src.basis, tgt.basis, fmap)


__all__ = [
    "AdamState", "NetworkParams", "PointMap", "ShapeBundle", "SiameseConfig", "TrainConfig",
    "TrainLog", "TrainPair", "adam_step", "backward_network", "compute_map", "elu", "fmnet_backward",
    "fmnet_forward_loss", "forward", "init_params", "sample_matches", "siamese_loss_and_grad", "train",
]
