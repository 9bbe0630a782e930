"""Multiplicative-update solvers: NMF and CF baselines and the
self-representation family (CFSR, CFSR-F, CFSRG, CFSRAG).

The self-representation model minimises

    ||X - XZ||_F^2 + alpha ||Z - U V^T||_F^2 + beta Tr(V^T L V) + lam ||Z||_F^2

over non-negative ``Z`` (n x n), ``U`` and ``V`` (n x c).  For the graph
variants the Laplacian is taken of the coupling weights ``G`` with
``Tr(V^T L V) = sum_ij g_ij ||v_i - v_j||^2 / 2``:

* CFSRAG: ``G = Z + Z^T`` is rebuilt from the current ``Z`` after every
  Z update, so the penalty equals ``sum_ij z_ij H_ij`` with
  ``H_ij = ||v_i - v_j||^2`` and contributes ``beta H`` to the Z gradient.
* CFSRG: ``G = W0 = (A + A^T)/2`` from the affinity graph stays fixed; the
  penalty does not depend on ``Z`` and the Z update has no ``H`` term.

CFSRAG starts from ``W0`` as well, so its first V update sees the affinity
graph and every later one sees the learned coupling.

Inner products with the Gram matrix ``K`` are split into ``K+`` and ``K-``
so that mixed-sign data keeps every factor non-negative; for
non-negative data ``K- = 0`` and the rules are the plain ratios.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .graph import AffinityGraph, build_graph
from .matrix import as_array, gram, row_sq_dist

logger = logging.getLogger(__name__)

EPS = 1e-10
CHECKPOINT_VERSION = "cfsrag-checkpoint/1"


class Variant(str, enum.Enum):
    NMF = "NMF"
    CF = "CF"
    CFSR = "CFSR"
    CFSR_F = "CFSR_F"
    CFSRG = "CFSRG"
    CFSRAG = "CFSRAG"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown variant {name!r}; choose from "
                             f"{', '.join(v.value for v in cls)}") from None

    @property
    def self_representation(self) -> bool:
        return self in (Variant.CFSR, Variant.CFSR_F, Variant.CFSRG, Variant.CFSRAG)

    @property
    def uses_graph(self) -> bool:
        return self in (Variant.CFSRG, Variant.CFSRAG)

    @property
    def label(self) -> str:
        return self.value.replace("_", "-")


VARIANT_ORDER = list(Variant)
ABLATION_VARIANTS = [Variant.CFSR, Variant.CFSR_F, Variant.CFSRG, Variant.CFSRAG]


@dataclass(frozen=True)
class Hyperparams:
    """Model weights and loop controls.

    Variant rules are applied on construction: CFSR zeroes ``beta`` and
    ``lam``, CFSR-F zeroes ``beta``.  The graph variants need ``beta > 0``.
    """

    clusters: int
    alpha: float = 1.0
    beta: float = 0.1
    lam: float = 0.1
    neighbors: int = 5
    max_iter: int = 200
    rel_tol: float = 1e-6
    seed: int = 0
    variant: Variant = Variant.CFSRAG

    def __post_init__(self):
        variant = Variant.parse(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant is Variant.CFSR:
            object.__setattr__(self, "beta", 0.0)
            object.__setattr__(self, "lam", 0.0)
        elif variant is Variant.CFSR_F:
            object.__setattr__(self, "beta", 0.0)
        if variant.self_representation and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be >= 0")
        if variant.uses_graph and not self.beta > 0:
            raise ValueError(f"{variant.label} needs beta > 0")
        if self.clusters < 1 or self.neighbors < 1:
            raise ValueError("clusters and neighbors must be positive")
        if self.max_iter < 0 or not self.rel_tol > 0:
            raise ValueError("max_iter must be >= 0 and rel_tol > 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "Hyperparams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {"variant": self.variant.value, "alpha": self.alpha, "beta": self.beta,
                "lambda": self.lam, "clusters": self.clusters, "neighbors": self.neighbors,
                "max_iter": self.max_iter, "rel_tol": self.rel_tol, "seed": int(self.seed)}


@dataclass
class FactorState:
    X: np.ndarray
    K: np.ndarray
    V: np.ndarray
    U: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    graph: Optional[AffinityGraph] = None
    W: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    objective_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.K_pos = np.maximum(self.K, 0.0)
        self.K_neg = np.maximum(-self.K, 0.0)
        self.mixed_sign = bool(self.K_neg.any())
        self.gram_via_x = not self.mixed_sign and self.X.shape[0] < self.X.shape[1]
        self.UVt = None

    def copy(self) -> "FactorState":
        dup = lambda a: None if a is None else a.copy()  # noqa: E731
        return FactorState(X=self.X, K=self.K, V=dup(self.V), U=dup(self.U), Z=dup(self.Z),
                           Q=dup(self.Q), H=dup(self.H), graph=self.graph, W=dup(self.W),
                           D=dup(self.D), objective_history=list(self.objective_history))


@dataclass
class FitResult:
    state: FactorState
    iterations_run: int
    converged: bool
    final_objective: float


class FitDivergence(RuntimeError):
    """Raised when the objective stops being finite; carries the last state."""

    def __init__(self, message, state, iteration):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


def _uniform(rng, shape):
    return rng.uniform(0.01, 1.01, size=shape)


def coupling_weights(Z: np.ndarray) -> np.ndarray:
    """Graph weights implied by a self-representation matrix."""
    return Z + Z.T


def init_state(X, hp: Hyperparams, graph: Optional[AffinityGraph] = None,
               z_init: str = "uniform") -> FactorState:
    """Seeded starting point.

    ``U``/``V``/``Q`` are i.i.d. uniform on (0.01, 1.01).  ``Z`` is drawn the
    same way and scaled by ``1/n`` (``z_init="uniform"``); graph variants may
    instead start from the affinity matrix (``z_init="affinity"``).  A
    prebuilt ``graph`` for the same data and neighbour count may be passed
    to skip reconstruction.
    """
    if z_init not in ("uniform", "affinity"):
        raise ValueError(f"unknown z_init {z_init!r}")
    Xv = as_array(X)
    m, n = Xv.shape
    c = hp.clusters
    if c > n:
        raise ValueError(f"clusters c={c} exceeds sample count n={n}")
    variant = hp.variant
    if variant is Variant.NMF and (Xv < 0).any():
        raise ValueError("NMF needs non-negative data")
    rng = np.random.default_rng(int(hp.seed))
    state = FactorState(X=Xv, K=gram(Xv), V=np.empty((n, c)))
    if variant is Variant.NMF:
        state.Q = _uniform(rng, (m, c))
        state.V = _uniform(rng, (n, c))
        return state
    state.U = _uniform(rng, (n, c))
    state.V = _uniform(rng, (n, c))
    if variant is Variant.CF:
        return state
    state.Z = _uniform(rng, (n, n)) / n
    if variant.uses_graph:
        if graph is None:
            graph = build_graph(Xv, hp.neighbors)
        elif graph.n != n or graph.neighbors != hp.neighbors:
            raise ValueError("prebuilt graph does not match data/neighbour count")
        state.graph = graph
        if z_init == "affinity":
            state.Z = graph.A.copy()
        state.W = graph.W.copy()
        state.D = graph.D.copy()
    state.H = row_sq_dist(state.V)
    return state


def nmf_step(state: FactorState) -> FactorState:
    X, Q, V = state.X, state.Q, state.V
    Q *= (X @ V) / (Q @ (V.T @ V) + EPS)
    V *= (X.T @ Q) / (V @ (Q.T @ Q) + EPS)
    return state


def cf_step(state: FactorState) -> FactorState:
    Kp, Kn, U, V = state.K_pos, state.K_neg, state.U, state.V
    VtV = V.T @ V
    num = Kp @ V
    den = Kp @ (U @ VtV)
    if state.mixed_sign:
        num += Kn @ (U @ VtV)
        den += Kn @ V
    U *= num / (den + EPS)
    KpU = Kp @ U
    num = KpU
    den = V @ (U.T @ KpU)
    if state.mixed_sign:
        KnU = Kn @ U
        num = num + V @ (U.T @ KnU)
        den = den + KnU
    V *= num / (den + EPS)
    return state


def _times_gram(state: FactorState, Z: np.ndarray) -> np.ndarray:
    # K+ Z, going through X when that is cheaper
    if state.gram_via_x:
        return state.X.T @ (state.X @ Z)
    return state.K_pos @ Z


def cfsrag_step(state: FactorState, hp: Hyperparams) -> FactorState:
    """One sweep: U, V, refresh H, Z, then (CFSRAG) refresh the graph."""
    variant = hp.variant
    alpha, beta, lam = hp.alpha, hp.beta, hp.lam
    Z, U, V = state.Z, state.U, state.V

    den = U @ (V.T @ V)
    den += EPS
    U *= Z @ V
    U /= den

    num = Z.T @ U
    den = V @ (U.T @ U)
    if variant.uses_graph:
        # alpha scaled out of the ratio
        r = beta / alpha
        num += r * (state.W @ V)
        den += (r * state.D)[:, None] * V
    den += EPS
    V *= num
    V /= den

    state.H = row_sq_dist(V)

    UVt = U @ V.T
    num = alpha * UVt
    num += state.K_pos
    den = _times_gram(state, Z)
    den += (alpha + lam) * Z
    if state.mixed_sign:
        num += state.K_neg @ Z
        den += state.K_neg
    if variant is Variant.CFSRAG:
        den += (0.5 * beta) * state.H
    den += EPS
    Z *= num
    Z /= den
    state.UVt = UVt

    if variant is Variant.CFSRAG:
        W = np.add(Z, Z.T, out=state.W)
        np.sum(W, axis=1, out=state.D)
    return state


def step(state: FactorState, hp: Hyperparams) -> FactorState:
    if hp.variant is Variant.NMF:
        return nmf_step(state)
    if hp.variant is Variant.CF:
        return cf_step(state)
    return cfsrag_step(state, hp)


def _graph_weights(state: FactorState, hp: Hyperparams) -> np.ndarray:
    if hp.variant is Variant.CFSRAG:
        return coupling_weights(state.Z)
    return state.W


def objective(state: FactorState, hp: Hyperparams) -> float:
    """Value of the variant's objective at ``state``."""
    return float(_objective_value(state, hp))


def _objective_value(state: FactorState, hp: Hyperparams, dtype=None):
    # dtype=np.longdouble keeps the result in extended precision
    cast = (lambda a: a) if dtype is None else (lambda a: np.asarray(a, dtype=dtype))
    X = cast(state.X)
    variant = hp.variant
    if variant is Variant.NMF:
        return np.sum((X - cast(state.Q) @ cast(state.V).T) ** 2)
    if variant is Variant.CF:
        return np.sum((X - X @ cast(state.U) @ cast(state.V).T) ** 2)
    Z, U, V = cast(state.Z), cast(state.U), cast(state.V)
    value = np.sum((X - X @ Z) ** 2) + hp.alpha * np.sum((Z - U @ V.T) ** 2)
    if variant.uses_graph:
        G = coupling_weights(Z) if variant is Variant.CFSRAG else cast(state.W)
        deg = G.sum(axis=1)
        value += hp.beta * (np.einsum("i,ik,ik->", deg, V, V) - np.einsum("ik,ik->", V, G @ V))
    value += hp.lam * np.sum(Z * Z)
    return value


def objective_trace_form(state: FactorState, hp: Hyperparams) -> float:
    """Self-representation objective written with traces of ``K``.

    Independent of :func:`objective`; used as a cross-check.
    """
    if not hp.variant.self_representation:
        raise ValueError("trace form only defined for self-representation variants")
    K, Z, U, V = state.K, state.Z, state.U, state.V
    UVt = U @ V.T
    value = np.trace(K) - 2 * np.trace(K @ Z) + np.trace(Z.T @ K @ Z)
    value += hp.alpha * (np.trace(Z.T @ Z) - 2 * np.trace(Z.T @ UVt) + np.trace(V @ U.T @ UVt))
    if hp.variant.uses_graph:
        G = _graph_weights(state, hp)
        L = np.diag(G.sum(axis=1)) - G
        value += hp.beta * np.trace(V.T @ L @ V)
    value += hp.lam * np.trace(Z.T @ Z)
    return float(value)


def gradients(state: FactorState, hp: Hyperparams) -> dict:
    """Analytic partial derivatives of the self-representation objective.

    ``H`` is treated as a constant in the Z derivative.
    """
    if not hp.variant.self_representation:
        raise ValueError("gradients only defined for self-representation variants")
    K, Z, U, V = state.K, state.Z, state.U, state.V
    alpha, beta, lam = hp.alpha, hp.beta, hp.lam
    dU = alpha * (-2 * Z @ V + 2 * U @ (V.T @ V))
    dV = -2 * alpha * Z.T @ U + 2 * alpha * V @ (U.T @ U)
    dZ = -2 * K + 2 * K @ Z + 2 * alpha * Z - 2 * alpha * U @ V.T + 2 * lam * Z
    if hp.variant.uses_graph:
        G = _graph_weights(state, hp)
        dV += 2 * beta * (G.sum(axis=1)[:, None] * V) - 2 * beta * G @ V
    if hp.variant is Variant.CFSRAG:
        dZ += beta * row_sq_dist(V)
    return {"U": dU, "V": dV, "Z": dZ}


def gradient_check(state: FactorState, hp: Hyperparams, n_coords: int = 20,
                   h: float = 1e-6, seed: int = 0) -> dict:
    """Largest relative gap between analytic and central-difference gradients.

    ``n_coords`` random entries are probed per block.  The differences are
    taken in extended precision so that cancellation in ``f(x+h) - f(x-h)``
    does not swamp small gradient entries.  Returns a dict with one entry
    per block.
    """
    grads = gradients(state, hp)
    rng = np.random.default_rng(seed)
    probe = state.copy()
    for block in grads:
        setattr(probe, block, getattr(probe, block).astype(np.longdouble))
    report = {}
    for block, G in grads.items():
        arr = getattr(probe, block)
        floor = 1e-6 * max(np.abs(G).max(), 1e-12)
        worst = 0.0
        for _ in range(n_coords):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = _objective_value(probe, hp, dtype=np.longdouble)
            arr[idx] = orig - h
            f_minus = _objective_value(probe, hp, dtype=np.longdouble)
            arr[idx] = orig
            fd = float((f_plus - f_minus) / (2 * h))
            err = abs(fd - G[idx]) / max(abs(G[idx]), abs(fd), floor)
            worst = max(worst, err)
        report[block] = worst
    return report


def kkt_products(state: FactorState, hp: Hyperparams) -> dict:
    """Signed complementary-slackness products ``x * (den - num)`` per block.

    ``num``/``den`` are the numerator and denominator of the block's update
    ratio (positive and negative gradient parts, up to a factor 2).  Returns
    ``{block: (product, x * den, den)}``.
    """
    if not hp.variant.self_representation:
        raise ValueError("KKT residuals only defined for self-representation variants")
    alpha, beta, lam = hp.alpha, hp.beta, hp.lam
    K, Z, U, V = state.K, state.Z, state.U, state.V
    out = {}
    num, den = Z @ V, U @ (V.T @ V)
    out["U"] = (U * (den - num), U * den, den)
    num, den = alpha * Z.T @ U, alpha * V @ (U.T @ U)
    if hp.variant.uses_graph:
        G = _graph_weights(state, hp)
        num = num + beta * G @ V
        den = den + beta * G.sum(axis=1)[:, None] * V
    out["V"] = (V * (den - num), V * den, den)
    num = K + alpha * U @ V.T
    den = K @ Z + (alpha + lam) * Z
    if hp.variant is Variant.CFSRAG:
        den = den + 0.5 * beta * row_sq_dist(V)
    out["Z"] = (Z * (den - num), Z * den, den)
    return out


def kkt_residuals(state: FactorState, hp: Hyperparams) -> dict:
    """Relative complementary-slackness residual per block.

    ``max |x * (den - num)| / max |x * den|``, which is invariant to
    rescaling the block.  At a fixed point of the update rule with
    positive entries it is zero.
    """
    out = {}
    for block, (prod, xden, _) in kkt_products(state, hp).items():
        out[block] = float(np.abs(prod).max() / max(np.abs(xden).max(), 1e-300))
    return out


def _objective_cached(state: FactorState, hp: Hyperparams) -> float:
    # same value as objective(), reusing the H and W kept current by the step
    if not hp.variant.self_representation:
        return objective(state, hp)
    X, Z = state.X, state.Z
    R = X @ Z
    R -= X
    E = state.UVt - Z
    value = np.einsum("ij,ij->", R, R) + hp.alpha * np.einsum("ij,ij->", E, E)
    if hp.variant.uses_graph:
        value += 0.5 * hp.beta * np.einsum("ij,ij->", state.W, state.H)
    value += hp.lam * np.einsum("ij,ij->", Z, Z)
    return float(value)


def fit(X, hp: Hyperparams, graph: Optional[AffinityGraph] = None,
        state: Optional[FactorState] = None, z_init: str = "uniform") -> FitResult:
    """Iterate the variant's update rule until the relative objective
    change drops below ``hp.rel_tol`` or ``hp.max_iter`` sweeps are done."""
    if state is None:
        state = init_state(X, hp, graph=graph, z_init=z_init)
    prev = objective(state, hp)
    state.objective_history = [prev]
    converged = False
    it = 0
    while it < hp.max_iter:
        step(state, hp)
        it += 1
        cur = _objective_cached(state, hp)
        if not np.isfinite(cur):
            raise FitDivergence(f"objective became {cur} at iteration {it} "
                                f"({hp.variant.label}, seed {hp.seed})", state, it)
        state.objective_history.append(cur)
        if abs(cur - prev) / max(prev, 1e-30) < hp.rel_tol:
            converged = True
            break
        prev = cur
    logger.debug("%s seed=%d: %d iterations, converged=%s", hp.variant.label, hp.seed, it, converged)
    return FitResult(state=state, iterations_run=it, converged=converged,
                     final_objective=state.objective_history[-1])


def save_checkpoint(state: FactorState, path) -> None:
    """Dump the factors and objective history to an ``.npz`` container."""
    arrays = {k: getattr(state, k) for k in ("Z", "U", "V", "Q") if getattr(state, k) is not None}
    with open(path, "wb") as fh:
        np.savez(fh, version=np.array(CHECKPOINT_VERSION),
                 objective_history=np.asarray(state.objective_history, dtype=np.float64),
                 **arrays)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        version = str(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        out = {k: data[k] for k in data.files if k != "version"}
    out["objective_history"] = out["objective_history"].tolist()
    return out
