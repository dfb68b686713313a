"""Leading singular pair of the solution operator and eigenpairs of the dynamic Laplacian.

The singular pair comes from power iteration on ``P* P`` in the ``M`` inner
product, with the constants projected out on the torus. Eigenpairs of the
pencil ``K_bar w = mu M w`` use shift-invert Lanczos (ARPACK) with the shift
placed below the spectrum, so the factorized matrix is always definite.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla_dense
import scipy.sparse.linalg as sla

from .errors import ContractionError, ConvergenceError, SolverError, UsageError
from .evolution import DEFAULT_TOL, Propagator, m_norm, trig

SIGMA_TOL = 1e-11
MAX_SWEEPS = 500
CONTRACTION_SLACK = 1e-10
CLUSTER_GAP = 1e-6


@dataclass
class SingularResult:
    """Leading nontrivial singular value ``sigma`` and right singular vector ``v``."""

    sigma: float
    v: np.ndarray
    iterations: int
    residual: float
    eps: float = None
    history: list = field(default_factory=list)


@dataclass
class EigResult:
    """Eigenvalue ``lam = -mu`` of the dynamic Laplacian and its eigenvector."""

    lam: float
    w: np.ndarray
    residual: float
    cluster: int = 0


@dataclass
class SlopeReport:
    eps: np.ndarray
    sigma: np.ndarray
    slopes: np.ndarray
    limit: float
    fit_slope: float
    results: list

    def relative_error(self, lam):
        return abs(self.limit - lam) / abs(lam)


# helpers ---------------------------------------------------------------

def mean_projector(M):
    """``u -> u - <u, 1>_M / <1, 1>_M`` for the torus."""
    ones = np.ones(M.shape[0])
    m1 = M @ ones
    total = float(ones @ m1)

    def project(u):
        return u - (float(m1 @ u) / total) * ones

    return project


def m_mean(M, u):
    ones = np.ones(M.shape[0])
    return float(ones @ (M @ u)) / float(ones @ (M @ ones))


def m_angle(M, v, basis):
    """Angle in the ``M`` inner product between ``v`` and ``span(basis)``.

    ``basis`` is a sequence of vectors; it is orthonormalized here.
    """
    B = np.column_stack(basis)
    G = B.T @ (M @ B)
    L = np.linalg.cholesky(G)
    Q = sla_dense.solve_triangular(L, B.T, lower=True).T   # M-orthonormal columns
    nv = m_norm(M, v)
    if nv == 0.0:
        raise UsageError("zero vector has no angle")
    c = np.linalg.norm(Q.T @ (M @ v)) / nv
    return float(np.arccos(min(1.0, c)))


def start_vector(scenario):
    """Deterministic start vector with weight on the lowest modes of either boundary type."""
    if scenario.periodic:
        f = trig([(1.0, 1, 1, "sin", "sin"), (0.5, 0, 1, "cos", "cos"), (0.5, 0, 1, "cos", "sin"),
                  (0.25, 1, 0, "cos", "cos"), (0.25, 1, 0, "sin", "cos")])
        return scenario.mesh.nodal(f)

    def f(x, y):
        return (np.sin(np.pi * x) * np.sin(np.pi * y)
                + 0.5 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))

    return scenario.mesh.nodal(f)


# singular pair ---------------------------------------------------------------

def leading_singular_pair(scenario, eps, v0=None, tol=SIGMA_TOL, max_sweeps=MAX_SWEEPS,
                          solver="auto", solve_tol=DEFAULT_TOL, propagator=None):
    """Power iteration ``v <- P* P v`` for the leading nontrivial singular pair.

    Returns the last normalized iterate ``v`` together with
    ``sigma = ||P v||_M`` and the residual ``||P* P v - sigma^2 v||_M``.

    Raises
    ------
    ConvergenceError
        If successive estimates have not settled to ``tol`` after ``max_sweeps``.
    ContractionError
        If ``sigma`` exceeds one, which only a broken solve can produce.
    """
    P = propagator or Propagator(scenario, eps, tol=solve_tol, solver=solver)
    M = scenario.M
    project = mean_projector(M) if scenario.periodic else (lambda u: u)
    v = project(np.array(start_vector(scenario) if v0 is None else v0, dtype=float))
    nv = m_norm(M, v)
    if nv == 0.0:
        raise UsageError("start vector vanishes after projection")
    v = v / nv
    history = []
    prev = None
    for sweep in range(1, max_sweeps + 1):
        w = project(P.normal(v))
        s2 = float(v @ (M @ w))
        sigma = float(np.sqrt(max(s2, 0.0)))
        if sigma > 1.0 + CONTRACTION_SLACK:
            raise ContractionError(f"sigma = {sigma!r} exceeds 1",
                                   residual=m_norm(M, w - s2 * v))
        history.append(sigma)
        if prev is not None and abs(sigma - prev) <= tol:
            res = m_norm(M, w - s2 * v)
            return SingularResult(sigma, v, sweep, res, eps, history)
        prev = sigma
        nw = m_norm(M, w)
        if nw == 0.0:
            raise SolverError("power iterate collapsed to zero", residual=0.0)
        v = w / nw
    raise ConvergenceError(f"power iteration did not settle in {max_sweeps} sweeps "
                           f"(last sigma change {abs(history[-1] - history[-2]):.3e})",
                           residual=abs(history[-1] - history[-2]))


def h1_profile(scenario, eps, v, propagator=None, solve_tol=DEFAULT_TOL):
    """Reference seminorms ``(v(t_k)^T K_ref v(t_k))^{1/2}`` along the forward solve."""
    P = propagator or Propagator(scenario, eps, tol=solve_tol)
    _, states = P.forward(v, record=True)
    K = scenario.K_ref
    return np.array([np.sqrt(max(float(u @ (K @ u)), 0.0)) for u in states])


# dynamic Laplacian ---------------------------------------------------------

def _shift(scenario, K):
    """Negative shift ``-tau`` with ``tau`` of the order of the smallest eigenvalues."""
    M = scenario.M
    d = K.diagonal() / M.diagonal()
    return -max(1.0, float(np.median(d)) * 1e-3)


def _clusters(mus, gap=CLUSTER_GAP):
    labels = np.zeros(len(mus), dtype=int)
    for i in range(1, len(mus)):
        same = abs(mus[i] - mus[i - 1]) <= gap * max(abs(mus[i]), 1.0)
        labels[i] = labels[i - 1] if same else labels[i - 1] + 1
    return labels


def _validate_k(k):
    if int(k) != k or k < 1:
        raise UsageError("k must be a positive integer")
    return int(k)


def dynamic_laplace_eig(scenario, k=1, K=None, dense=False):
    """The ``k`` nontrivial eigenpairs of ``K_bar w = mu M w`` with smallest ``mu``.

    Eigenvalues are reported as ``lam = -mu`` (negative), sorted by decreasing
    ``lam``; eigenvectors are ``M``-normalized and, on the torus, mean-free.
    Near-degenerate eigenvalues (relative gap below ``CLUSTER_GAP``) share a
    ``cluster`` label.

    Parameters
    ----------
    scenario : Scenario
    k : int
    K : sparse matrix, optional
        Stiffness to use instead of ``scenario.Kbar``.
    dense : bool
        Solve the full generalized problem densely (small meshes only).
    """
    k = _validate_k(k)
    K = scenario.Kbar if K is None else K
    M = scenario.M
    ntriv = 1 if scenario.periodic else 0
    want = k + ntriv
    n = M.shape[0]
    if want >= n:
        raise UsageError("k exceeds the number of degrees of freedom")
    try:
        if dense:
            mus, W = sla_dense.eigh(K.toarray(), M.toarray(), subset_by_index=[0, want - 1])
        else:
            nev = min(n - 2, want + max(4, want))
            v0 = np.random.default_rng(12345).standard_normal(n)
            mus, W = sla.eigsh(K.tocsc(), k=nev, M=M.tocsc(), sigma=_shift(scenario, K),
                               which="LM", tol=1e-14, v0=v0, ncv=min(n - 1, max(2 * nev + 1, 20)))
    except (RuntimeError, sla.ArpackError) as exc:
        raise SolverError(f"eigensolver failed: {exc}", residual=float("nan")) from exc
    order = np.argsort(mus)
    mus, W = mus[order], W[:, order]
    if ntriv:
        # drop the constant mode and clean the rest of any residual mean
        mus, W = mus[1:], W[:, 1:]
        project = mean_projector(M)
        W = np.column_stack([project(W[:, i]) for i in range(W.shape[1])])
    mus, W = mus[:k], W[:, :k]
    labels = _clusters(mus)
    out = []
    for i in range(k):
        w = W[:, i] / m_norm(M, W[:, i])
        Mw = M @ w
        Kw = K @ w
        mu = float(w @ Kw)
        res = float(np.linalg.norm(Kw - mu * Mw) / (abs(mu) * np.linalg.norm(Mw)))
        out.append(EigResult(-mu, w, res, int(labels[i])))
    return out


def cluster_span(results, index=0):
    """Eigenvectors sharing the cluster of ``results[index]``."""
    c = results[index].cluster
    return [r.w for r in results if r.cluster == c]


def rayleigh_quotient(K, M, u):
    return float(u @ (K @ u)) / float(u @ (M @ u))


# singular slope ---------------------------------------------------------------

def _check_eps_list(eps_list):
    eps = np.asarray(eps_list, dtype=float)
    if eps.ndim != 1 or eps.size < 3:
        raise UsageError("need at least three diffusivities")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise UsageError("diffusivities must be positive and strictly decreasing")
    return eps


def singular_slope(scenario, eps_list, warm_start=True, **kwargs):
    """Slopes ``s(eps) = (sigma_eps - 1) / eps`` and their extrapolation to ``eps = 0``.

    The limit is the intercept of an unweighted least-squares line through
    ``(eps, s(eps))``. Successive power iterations are warm-started from the
    previous singular vector when ``warm_start`` is set.
    """
    eps = _check_eps_list(eps_list)
    results = []
    v0 = kwargs.pop("v0", None)
    for e in eps:
        r = leading_singular_pair(scenario, e, v0=v0, **kwargs)
        results.append(r)
        if warm_start:
            v0 = r.v
    sigma = np.array([r.sigma for r in results])
    s = (sigma - 1.0) / eps
    slope, intercept = np.polyfit(eps, s, 1)
    return SlopeReport(eps, sigma, s, float(intercept), float(slope), results)


__all__ = ["SingularResult", "EigResult", "SlopeReport", "leading_singular_pair",
           "dynamic_laplace_eig", "singular_slope", "h1_profile", "m_angle", "m_mean",
           "mean_projector", "cluster_span", "rayleigh_quotient", "start_vector"]
