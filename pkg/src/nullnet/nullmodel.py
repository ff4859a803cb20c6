"""Maximum-entropy null models for bipartite networks.

The undirected model assigns every possible link ``(i, alpha)`` an
independent probability

    p_ia = x_i * y_a / (1 + x_i * y_a)

with one positive multiplier per node, chosen so that the expected degree of
every node matches the observed one. For sparse graphs the multipliers
factorize and the probability is well approximated by the Chung-Lu form
``p_ia ~ k_i * k_a / m`` (``m`` = total edges), which needs no iteration.

The directed model treats the authorship and retweet blocks independently.
Because every post has exactly one author, the authorship-block probability
collapses to the closed form ``q_ia = k_i_out / n_posts``; the retweet block
is fitted like the undirected model on its own degree sequences (or
Chung-Lu-approximated under the same sparsity rule).

Fitting uses a damped alternating fixed-point iteration on the multiplier
system, collapsed over unique degrees (nodes with equal degree share a
multiplier), with a Newton fallback on the reduced system when the residual
stalls. Zero-degree nodes keep multiplier 0 so index maps stay aligned.
Fitted parameter objects are immutable and safe for concurrent reads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import FitError, GraphError
from .graph import BipartiteGraph, DirectedBipartiteGraph, connectance, degrees

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
DEFAULT_SPARSE_THRESHOLD = 1e-2

MODE_EXACT = "exact"
MODE_CHUNG_LU = "chung_lu"


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    max_residual: float
    method: str


@dataclass(frozen=True, eq=False)
class BicmParams:
    """Fitted multipliers for the undirected model.

    In ``exact`` mode the link probability is ``x_i y_a / (1 + x_i y_a)``;
    in ``chung_lu`` mode it is ``min(1, x_i y_a)`` with ``x_i = k_i/sqrt(m)``
    and ``y_a = k_a/sqrt(m)``. ``capped_pairs`` counts Chung-Lu pairs whose
    raw product exceeded 1 and was clipped.
    """

    x: np.ndarray
    y: np.ndarray
    mode: str
    diagnostics: FitDiagnostics
    capped_pairs: int = 0

    @property
    def n_left(self) -> int:
        return self.x.shape[0]

    @property
    def n_right(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True, eq=False)
class BidcmParams:
    """Fitted directed model: closed-form authorship block plus retweet block.

    ``out_degrees[i]`` is the number of posts authored by user ``i`` and
    ``in_degrees[i]`` the number of posts user ``i`` reshared. The retweet
    block carries its own multipliers ``x_in`` (users) and ``y_out`` (posts),
    interpreted according to ``retweet_mode`` exactly like
    :class:`BicmParams`.
    """

    out_degrees: np.ndarray
    in_degrees: np.ndarray
    n_posts: int
    retweet_mode: str
    x_in: np.ndarray
    y_out: np.ndarray
    diagnostics: FitDiagnostics
    capped_pairs: int = 0

    @property
    def n_users(self) -> int:
        return self.out_degrees.shape[0]

    def authorship_probability(self, i: int, alpha: int | None = None) -> float:
        """Closed-form probability that user ``i`` authors any given post."""
        if not 0 <= i < self.n_users:
            raise GraphError(f"user index {i} out of range")
        if alpha is not None and not 0 <= alpha < self.n_posts:
            raise GraphError(f"post index {alpha} out of range")
        return float(self.out_degrees[i]) / self.n_posts

    def retweet_probability(self, i: int, alpha: int) -> float:
        """Probability that user ``i`` reshares post ``alpha`` under the null."""
        if not 0 <= i < self.n_users:
            raise GraphError(f"user index {i} out of range")
        if not 0 <= alpha < self.n_posts:
            raise GraphError(f"post index {alpha} out of range")
        prod = float(self.x_in[i]) * float(self.y_out[alpha])
        if self.retweet_mode == MODE_CHUNG_LU:
            return min(1.0, prod)
        return prod / (1.0 + prod)


# --- multiplier solver -------------------------------------------------------

def _reduced_system(k_left: np.ndarray, k_right: np.ndarray):
    """Collapse degree vectors to unique values with multiplicities."""
    ul, inv_l, cnt_l = np.unique(k_left, return_inverse=True, return_counts=True)
    ur, inv_r, cnt_r = np.unique(k_right, return_inverse=True, return_counts=True)
    return ul.astype(float), inv_l, cnt_l.astype(float), \
        ur.astype(float), inv_r, cnt_r.astype(float)


def _expected_unique(X, Y, cnt_l, cnt_r):
    M = np.outer(X, Y)
    P = M / (1.0 + M)
    return P @ cnt_r, cnt_l @ P


def _solve_multipliers(k_left: np.ndarray, k_right: np.ndarray,
                       tol: float, max_iter: int):
    """Solve the degree-matching system; returns per-node (x, y, diagnostics).

    Raises :class:`FitError` on non-convergence (carrying the best residual
    reached) or on a full-degree node, whose multiplier diverges.
    """
    n_left, n_right = len(k_left), len(k_right)
    # A node linked to every (connectable) node of the opposite layer pushes
    # its multiplier to infinity; zero-degree nodes cannot host links, so the
    # effective layer size excludes them.
    eff_right = int(np.count_nonzero(k_right))
    eff_left = int(np.count_nonzero(k_left))
    if eff_right and int(k_left.max(initial=0)) >= eff_right:
        raise FitError("degenerate degree: left node connected to the whole "
                       "opposite layer")
    if eff_left and int(k_right.max(initial=0)) >= eff_left:
        raise FitError("degenerate degree: right node connected to the whole "
                       "opposite layer")
    m = float(k_left.sum())
    if m != float(k_right.sum()):
        raise GraphError("degree sums differ between layers")
    if m == 0:
        diag = FitDiagnostics(iterations=0, max_residual=0.0, method="fixed-point")
        return np.zeros(n_left), np.zeros(n_right), diag

    ul, inv_l, cnt_l, ur, inv_r, cnt_r = _reduced_system(k_left, k_right)
    X = ul / np.sqrt(m)
    Y = ur / np.sqrt(m)

    def residual_of(X, Y):
        exp_l, exp_r = _expected_unique(X, Y, cnt_l, cnt_r)
        return max(float(np.max(np.abs(exp_l - ul))),
                   float(np.max(np.abs(exp_r - ur))))

    best = np.inf
    method = "fixed-point"
    stall_window = 50
    last_check = np.inf
    it = 0
    res = residual_of(X, Y)
    while it < max_iter and res > tol:
        it += 1
        # x_i <- k_i / sum_a y_a / (1 + x_i y_a), then the same for y with
        # the refreshed x (Gauss-Seidel style alternation).
        denom = 1.0 + np.outer(X, Y)
        S = (Y[None, :] / denom) @ cnt_r
        with np.errstate(divide="ignore", invalid="ignore"):
            X = np.where(S > 0, ul / S, 0.0)
        denom = 1.0 + np.outer(X, Y)
        T = cnt_l @ (X[:, None] / denom)
        with np.errstate(divide="ignore", invalid="ignore"):
            Y = np.where(T > 0, ur / T, 0.0)
        res = residual_of(X, Y)
        best = min(best, res)
        if it % stall_window == 0:
            if res > tol and res > 0.5 * last_check:
                XY = _newton_polish(X, Y, ul, ur, cnt_l, cnt_r)
                if XY is not None:
                    Xn, Yn = XY
                    rn = residual_of(Xn, Yn)
                    if rn < res:
                        X, Y, res = Xn, Yn, rn
                        method = "fixed-point+newton"
                        best = min(best, res)
            last_check = res
    if res > tol:
        raise FitError(f"no convergence after {it} iterations "
                       f"(best residual {best:.3e})", residual=best)
    diag = FitDiagnostics(iterations=it, max_residual=res, method=method)
    return X[inv_l], Y[inv_r], diag


def _newton_polish(X, Y, ul, ur, cnt_l, cnt_r):
    """Newton step on the reduced system in log coordinates; None on failure."""
    nz_l = ul > 0
    nz_r = ur > 0
    if not nz_l.any() or not nz_r.any():
        return None
    u0 = np.log(np.maximum(X[nz_l], 1e-300))
    v0 = np.log(np.maximum(Y[nz_r], 1e-300))

    def fun(theta):
        Xf = np.zeros_like(X)
        Yf = np.zeros_like(Y)
        Xf[nz_l] = np.exp(theta[:nz_l.sum()])
        Yf[nz_r] = np.exp(theta[nz_l.sum():])
        exp_l, exp_r = _expected_unique(Xf, Yf, cnt_l, cnt_r)
        return np.concatenate([(exp_l - ul)[nz_l], (exp_r - ur)[nz_r]])

    try:
        sol = optimize.root(fun, np.concatenate([u0, v0]), method="hybr")
    except Exception:
        return None
    if not np.all(np.isfinite(sol.x)):
        return None
    Xn = np.zeros_like(X)
    Yn = np.zeros_like(Y)
    Xn[nz_l] = np.exp(sol.x[:nz_l.sum()])
    Yn[nz_r] = np.exp(sol.x[nz_l.sum():])
    return Xn, Yn


# --- fitting entry points ----------------------------------------------------

def fit_bicm(g: BipartiteGraph, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> BicmParams:
    """Fit the exact undirected model to ``g``.

    Post-condition: every node's expected degree matches its observed degree
    within ``tol``. Zero-degree nodes get multiplier 0. Raises
    :class:`FitError` for a full-degree node or on non-convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    k_l = degrees(g, "left")
    k_r = degrees(g, "right")
    x, y, diag = _solve_multipliers(k_l, k_r, tol, max_iter)
    return BicmParams(x=x, y=y, mode=MODE_EXACT, diagnostics=diag)


def fit_chung_lu(g: BipartiteGraph,
                 sparse_threshold: float = DEFAULT_SPARSE_THRESHOLD) -> BicmParams:
    """Sparse-regime closed form: ``p_ia = k_i k_a / m``, clipped at 1.

    Emits a warning when the graph is denser than ``sparse_threshold`` and
    when any pair had to be clipped.
    """
    rho = connectance(g)
    if rho >= sparse_threshold:
        warnings.warn(
            f"connectance {rho:.3g} >= sparse threshold {sparse_threshold:.3g}; "
            "the factorized approximation degrades on dense graphs",
            stacklevel=2)
    k_l = degrees(g, "left")
    k_r = degrees(g, "right")
    m = int(k_l.sum())
    if m == 0:
        raise FitError("cannot fit an edgeless graph")
    capped = _count_capped(k_l, k_r, m)
    if capped:
        warnings.warn(f"{capped} pair probabilities clipped at 1.0",
                      stacklevel=2)
    diag = FitDiagnostics(iterations=0, max_residual=0.0, method="closed-form")
    root_m = np.sqrt(float(m))
    return BicmParams(x=k_l / root_m, y=k_r / root_m, mode=MODE_CHUNG_LU,
                      diagnostics=diag, capped_pairs=capped)


def _count_capped(k_l: np.ndarray, k_r: np.ndarray, m: int) -> int:
    """Number of (i, a) pairs with k_i * k_a > m (integer-exact)."""
    ks = np.sort(k_r)
    n_r = len(ks)
    total = 0
    for d, cnt in zip(*np.unique(k_l, return_counts=True)):
        if d == 0:
            continue
        total += cnt * (n_r - np.searchsorted(ks, m // int(d), side="right"))
    return int(total)


def fit_auto(g: BipartiteGraph, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER,
             sparse_threshold: float = DEFAULT_SPARSE_THRESHOLD) -> BicmParams:
    """Pick the mode by connectance: Chung-Lu below the threshold, else exact."""
    if connectance(g) < sparse_threshold:
        return fit_chung_lu(g, sparse_threshold=sparse_threshold)
    return fit_bicm(g, tol=tol, max_iter=max_iter)


def bicm_link_probability(params: BicmParams, i: int, alpha: int) -> float:
    """Null probability of link ``(i, alpha)`` under the fitted model."""
    if not 0 <= i < params.n_left:
        raise GraphError(f"left index {i} out of range")
    if not 0 <= alpha < params.n_right:
        raise GraphError(f"right index {alpha} out of range")
    prod = float(params.x[i]) * float(params.y[alpha])
    if params.mode == MODE_CHUNG_LU:
        return min(1.0, prod)
    return prod / (1.0 + prod)


def probability_matrix(params: BicmParams,
                       max_cells: int = 50_000_000) -> np.ndarray:
    """Dense link-probability matrix; guarded against absurd sizes."""
    cells = params.n_left * params.n_right
    if cells > max_cells:
        raise MemoryError(f"probability matrix would hold {cells} cells")
    M = np.outer(params.x, params.y)
    if params.mode == MODE_CHUNG_LU:
        return np.minimum(M, 1.0)
    return M / (1.0 + M)


def expected_degrees(params: BicmParams) -> tuple[np.ndarray, np.ndarray]:
    """Expected degree vectors (left, right) under the fitted model."""
    P = probability_matrix(params)
    return P.sum(axis=1), P.sum(axis=0)


def log_likelihood(g: BipartiteGraph, params: BicmParams) -> float:
    """Log-probability of the observed graph under the fitted model."""
    P = probability_matrix(params)
    eps = np.finfo(float).tiny
    ll = float(np.log1p(-np.minimum(P, 1 - 1e-15)).sum())
    for i, a in g.edges:
        p = max(P[i, a], eps)
        ll += float(np.log(p) - np.log1p(-min(p, 1 - 1e-15)))
    return ll


def fit_bidcm(g: DirectedBipartiteGraph,
              retweet_mode: str = "auto",
              sparse_threshold: float = DEFAULT_SPARSE_THRESHOLD,
              tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> BidcmParams:
    """Fit the directed model to a user/post graph.

    The authorship block needs no iteration: with one author per post the
    probability that user ``i`` authored any given post is
    ``k_i_out / n_posts`` exactly. The retweet block is fitted on its own
    degree sequences; ``retweet_mode`` may be ``exact``, ``chung-lu`` or
    ``auto`` (sparsity-based choice).
    """
    if g.n_right == 0:
        raise FitError("graph has no posts")
    out_deg = degrees(g, "left", "out")
    in_deg = degrees(g, "left", "in")
    post_out = degrees(g, "right", "out")
    m_n = int(in_deg.sum())

    if retweet_mode not in ("auto", "exact", "chung-lu", MODE_CHUNG_LU):
        raise ValueError(f"unknown retweet_mode {retweet_mode!r}")
    if m_n == 0:
        diag = FitDiagnostics(iterations=0, max_residual=0.0, method="closed-form")
        return BidcmParams(out_degrees=out_deg, in_degrees=in_deg,
                           n_posts=g.n_right, retweet_mode=MODE_CHUNG_LU,
                           x_in=np.zeros(g.n_left), y_out=np.zeros(g.n_right),
                           diagnostics=diag)
    rho_n = m_n / (g.n_left * g.n_right)
    if retweet_mode == "auto":
        retweet_mode = MODE_CHUNG_LU if rho_n < sparse_threshold else "exact"
    if retweet_mode in ("chung-lu", MODE_CHUNG_LU):
        capped = _count_capped(in_deg, post_out, m_n)
        if capped:
            warnings.warn(f"{capped} retweet-block probabilities clipped at 1.0",
                          stacklevel=2)
        root = np.sqrt(float(m_n))
        diag = FitDiagnostics(iterations=0, max_residual=0.0, method="closed-form")
        return BidcmParams(out_degrees=out_deg, in_degrees=in_deg,
                           n_posts=g.n_right, retweet_mode=MODE_CHUNG_LU,
                           x_in=in_deg / root, y_out=post_out / root,
                           diagnostics=diag, capped_pairs=capped)
    x_in, y_out, diag = _solve_multipliers(in_deg, post_out, tol, max_iter)
    return BidcmParams(out_degrees=out_deg, in_degrees=in_deg,
                       n_posts=g.n_right, retweet_mode=MODE_EXACT,
                       x_in=x_in, y_out=y_out, diagnostics=diag)


# --- serialization -----------------------------------------------------------

def params_to_json(params: BicmParams | BidcmParams, path: str | Path) -> Path:
    """Serialize fitted parameters to a JSON document."""
    if isinstance(params, BicmParams):
        doc = {
            "model": "bicm",
            "mode": params.mode,
            "x": params.x.tolist(),
            "y": params.y.tolist(),
            "capped_pairs": params.capped_pairs,
        }
    else:
        doc = {
            "model": "bidcm",
            "retweet_mode": params.retweet_mode,
            "out_degrees": params.out_degrees.tolist(),
            "in_degrees": params.in_degrees.tolist(),
            "n_posts": params.n_posts,
            "x_in": params.x_in.tolist(),
            "y_out": params.y_out.tolist(),
            "capped_pairs": params.capped_pairs,
        }
    doc["diagnostics"] = {
        "iterations": params.diagnostics.iterations,
        "max_residual": params.diagnostics.max_residual,
        "method": params.diagnostics.method,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def params_from_json(path: str | Path) -> BicmParams | BidcmParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    diag = FitDiagnostics(**doc["diagnostics"])
    if doc["model"] == "bicm":
        return BicmParams(x=np.asarray(doc["x"], dtype=float),
                          y=np.asarray(doc["y"], dtype=float),
                          mode=doc["mode"], diagnostics=diag,
                          capped_pairs=doc.get("capped_pairs", 0))
    if doc["model"] == "bidcm":
        return BidcmParams(
            out_degrees=np.asarray(doc["out_degrees"], dtype=np.int64),
            in_degrees=np.asarray(doc["in_degrees"], dtype=np.int64),
            n_posts=doc["n_posts"], retweet_mode=doc["retweet_mode"],
            x_in=np.asarray(doc["x_in"], dtype=float),
            y_out=np.asarray(doc["y_out"], dtype=float),
            diagnostics=diag, capped_pairs=doc.get("capped_pairs", 0))
    raise ValueError(f"unknown model {doc.get('model')!r} in {path}")
