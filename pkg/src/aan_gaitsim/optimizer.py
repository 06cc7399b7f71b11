"""Episode objective, Gaussian-process surrogate and EI-driven gain selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .controller import GainSet

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ConditioningWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ObjectiveWeights:
    gamma: tuple[float, float, float] = (1.0, 200.0, 0.1)
    e_t_theta: float = 2.5  # deg
    e_t_phi: float = 0.015  # cycle fraction

    def __post_init__(self) -> None:
        if len(self.gamma) != 3 or any(not (g >= 0) for g in self.gamma):
            raise ValueError(f"gamma must be three non-negative weights, got {self.gamma!r}")
        if not (self.e_t_theta > 0 and self.e_t_phi > 0):
            raise ValueError("tolerated errors must be positive")


@dataclass(frozen=True)
class Region:
    k_theta: tuple[float, float] = (0.2, 2.0)
    k_phi: tuple[float, float] = (0.0, 2.0)

    def __post_init__(self) -> None:
        for lo, hi in (self.k_theta, self.k_phi):
            if not hi > lo:
                raise ValueError(f"empty gain range [{lo}, {hi}]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.k_theta[0], self.k_phi[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.k_theta[1], self.k_phi[1]])

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.hypot(*self.span))

    def contains(self, g: GainSet, tol: float = 1e-12) -> bool:
        x = np.array(g.as_tuple())
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def normalize(self, g: GainSet) -> np.ndarray:
        return (np.array(g.as_tuple()) - self.lower) / self.span

    def init_sets(self) -> list[GainSet]:
        """Four corners and the centre of the box."""
        (a0, a1), (b0, b1) = self.k_theta, self.k_phi
        return [
            GainSet(a0, b0),
            GainSet(a0, b1),
            GainSet(a1, b0),
            GainSet(a1, b1),
            GainSet(0.5 * (a0 + a1), 0.5 * (b0 + b1)),
        ]


@dataclass(frozen=True)
class EpisodeResult:
    gains: GainSet
    objective: float
    mean_e_theta: float
    mean_e_phi: float
    mean_f_mag: float
    cycles_used: int


def activation(e: float, e_t: float) -> float:
    """Soft dead-zone: near zero inside the tolerance, tends to ``|e|`` outside."""
    if not e_t > 0:
        raise ValueError(f"tolerated error must be > 0, got {e_t!r}")
    s = 20.0 / e_t * e
    # 1/(1+exp(x)) written via tanh stays finite for huge |x|
    b = 0.5 * (1.0 + math.tanh(0.5 * (s - 10.0))) + 0.5 * (1.0 - math.tanh(0.5 * (s + 10.0)))
    return abs(e) * b


def objective(e_theta: float, e_phi: float, f_mag: float, w: ObjectiveWeights = ObjectiveWeights()) -> float:
    g1, g2, g3 = w.gamma
    return -(g1 * activation(e_theta, w.e_t_theta) + g2 * activation(e_phi, w.e_t_phi) + g3 * f_mag)


# --- Gaussian process -------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    sigma: float = 1.0
    sigma_noise: float = 0.1
    l1: float = 0.5
    l2: float = 0.5

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma, self.sigma_noise, self.l1, self.l2])


def se_kernel(xa: np.ndarray, xb: np.ndarray, sigma: float, ls: Sequence[float]) -> np.ndarray:
    ls = np.asarray(ls, dtype=float)
    d = (xa[:, None, :] - xb[None, :, :]) / ls
    return sigma * sigma * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass
class GpModel:
    region: Region = field(default_factory=Region)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    x: list[tuple[float, float]] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    jitter_used: bool = False
    hyper_fit_failed: bool = False

    def add(self, g: GainSet, value: float) -> None:
        if not self.region.contains(g):
            raise ValueError(f"gains {g} outside the feasible region")
        self.x.append(g.as_tuple())
        self.y.append(float(value))

    @property
    def n(self) -> int:
        return len(self.y)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.x, dtype=float).reshape(-1, 2), np.asarray(self.y, dtype=float)


def _cholesky(k: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return np.linalg.cholesky(k), False
    except np.linalg.LinAlgError:
        pass
    kj = k + 1e-8 * np.eye(k.shape[0])
    try:
        return np.linalg.cholesky(kj), True
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("GP kernel matrix is not positive definite even with jitter") from exc


def _solve_tri(l: np.ndarray, b: np.ndarray, lower: bool = True) -> np.ndarray:
    from scipy.linalg import solve_triangular

    return solve_triangular(l, b, lower=lower, check_finite=False)


def gp_posterior_batch(model: GpModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and std at each row of ``xs``."""
    h = model.hyper
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if model.n == 0:
        return np.zeros(len(xs)), np.full(len(xs), h.sigma)
    x, y = model.arrays()
    ls = (h.l1, h.l2)
    k = se_kernel(x, x, h.sigma, ls) + h.sigma_noise**2 * np.eye(len(x))
    chol, jit = _cholesky(k)
    if jit:
        model.jitter_used = True
    ks = se_kernel(x, xs, h.sigma, ls)
    alpha = _solve_tri(chol.T, _solve_tri(chol, y), lower=False)
    mu = ks.T @ alpha
    v = _solve_tri(chol, ks)
    var = h.sigma**2 - np.sum(v * v, axis=0)
    return mu, np.sqrt(np.maximum(var, 0.0))


def gp_posterior(model: GpModel, x_star: GainSet) -> tuple[float, float]:
    mu, sd = gp_posterior_batch(model, np.array([x_star.as_tuple()]))
    return float(mu[0]), float(sd[0])


def _hyper_bounds(region: Region, y: np.ndarray) -> np.ndarray:
    s = float(np.std(y))
    if not s > 0:
        s = 1.0
    span = region.span
    return np.array(
        [
            [1e-3 * s, 10.0 * s],
            [1e-4 * s, 1.0 * s],
            [0.05 * span[0], 2.0 * span[0]],
            [0.05 * span[1], 2.0 * span[1]],
        ]
    )


def log_marginal_likelihood(
    x: np.ndarray, y: np.ndarray, theta: np.ndarray, grad: bool = False
):
    """Log evidence of ``y`` under an SE-kernel GP; ``theta = (sigma, sigma_noise, l1, l2)``.

    With ``grad`` the derivative with respect to the log-parameters is also
    returned.
    """
    sigma, sn, l1, l2 = theta
    n = len(y)
    d0 = (x[:, None, 0] - x[None, :, 0]) ** 2
    d1 = (x[:, None, 1] - x[None, :, 1]) ** 2
    kse = sigma * sigma * np.exp(-0.5 * (d0 / l1**2 + d1 / l2**2))
    k = kse + sn * sn * np.eye(n)
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return (-np.inf, np.zeros(4)) if grad else -np.inf
    alpha = _solve_tri(chol.T, _solve_tri(chol, y), lower=False)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    if not grad:
        return float(lml)
    kinv = _solve_tri(chol.T, _solve_tri(chol, np.eye(n)), lower=False)
    w = np.outer(alpha, alpha) - kinv
    dk = (
        2.0 * kse,
        2.0 * sn * sn * np.eye(n),
        kse * d0 / l1**2,
        kse * d1 / l2**2,
    )
    g = np.array([0.5 * np.sum(w * m) for m in dk])
    return float(lml), g


def _batch_lml(x: np.ndarray, y: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Vectorized log evidence for many hyperparameter rows at once."""
    n = len(y)
    d0 = (x[:, None, 0] - x[None, :, 0]) ** 2
    d1 = (x[:, None, 1] - x[None, :, 1]) ** 2
    s, sn, l1, l2 = (thetas[:, i][:, None, None] for i in range(4))
    k = s * s * np.exp(-0.5 * (d0 / l1**2 + d1 / l2**2)) + sn * sn * np.eye(n)
    out = np.full(len(thetas), -np.inf)
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        for i, th in enumerate(thetas):
            out[i] = log_marginal_likelihood(x, y, th)
        return out
    z = np.linalg.solve(chol, np.broadcast_to(y, (len(thetas), n))[..., None])[..., 0]
    logdet = np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return -0.5 * np.sum(z * z, axis=1) - logdet - 0.5 * n * math.log(2 * math.pi)


def optimize_hyperparams(model: GpModel, n_grid: int = 4, n_starts: int = 3) -> Hyperparams:
    """Maximize the log marginal likelihood over bounded hyperparameters.

    A fixed ``n_grid``^4 log-spaced start grid is scored in one batch; the
    best ``n_starts`` seeds are polished with L-BFGS-B in log space. If no
    start beats the current hyperparameters the model keeps them and sets
    ``hyper_fit_failed``. The result is stored on the model and returned.
    """
    if model.n < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    x, y = model.arrays()
    bounds = _hyper_bounds(model.region, y)
    lb, ub = np.log(bounds[:, 0]), np.log(bounds[:, 1])
    axes = [np.linspace(lb[i], ub[i], n_grid + 2)[1:-1] for i in range(4)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
    scores = _batch_lml(x, y, np.exp(grid))
    order = np.argsort(-scores, kind="stable")[:n_starts]

    def nll(z: np.ndarray):
        v, g = log_marginal_likelihood(x, y, np.exp(z), grad=True)
        if not np.isfinite(v):
            return 1e300, np.zeros(4)
        return -v, -g

    cur = np.clip(np.log(model.hyper.as_array()), lb, ub)
    best_z, best_v = None, log_marginal_likelihood(x, y, np.exp(cur))
    for idx in order:
        res = minimize(nll, grid[idx], jac=True, method="L-BFGS-B", bounds=list(zip(lb, ub)))
        v = -float(res.fun)
        if np.isfinite(v) and v > best_v + 1e-12:
            best_z, best_v = np.clip(res.x, lb, ub), v
    if best_z is None:
        model.hyper_fit_failed = True
        model.hyper = Hyperparams(*np.exp(cur))
        return model.hyper
    model.hyper_fit_failed = False
    model.hyper = Hyperparams(*(float(v) for v in np.exp(best_z)))
    return model.hyper


# --- acquisition ------------------------------------------------------------


def expected_improvement(mu, sigma_star, y_best: float, zeta: float = 0.01):
    """EI for maximization; zero wherever the posterior std is zero."""
    if zeta < 0:
        raise ValueError(f"zeta must be >= 0, got {zeta!r}")
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sigma_star, dtype=float)
    imp = mu - y_best - zeta
    pos = sd > 0
    safe = np.where(pos, sd, 1.0)
    # subnormal sd overflows z to +-inf, where both terms have finite limits
    with np.errstate(over="ignore", divide="ignore"):
        z = np.where(pos, imp / safe, 0.0)
        ei = np.where(pos, imp * ndtr(z) + sd * np.exp(-0.5 * z * z) / _SQRT_2PI, 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


@dataclass(frozen=True)
class Selection:
    gains: GainSet
    ei: float
    exploration_fallback: bool = False


def next_params(
    model: GpModel,
    zeta: float = 0.01,
    n_grid: int = 101,
    y_best: Optional[float] = None,
    rel_tie: float = 1e-9,
) -> Selection:
    """Maximize EI over the feasible box.

    A dense ``n_grid`` x ``n_grid`` scan picks the start; ties (within a
    relative tolerance) go to the smallest ``k_theta``, then ``k_phi``. The
    winner is refined with a bounded local search and kept only if it
    improves EI. When EI vanishes everywhere the grid point with the
    largest posterior std is returned instead.
    """
    reg = model.region
    if y_best is None:
        y_best = max(model.y) if model.y else 0.0
    g0 = np.linspace(reg.k_theta[0], reg.k_theta[1], n_grid)
    g1 = np.linspace(reg.k_phi[0], reg.k_phi[1], n_grid)
    # k_theta-major ordering makes argmax tie-break toward small k_theta then k_phi
    pts = np.stack(np.meshgrid(g0, g1, indexing="ij"), axis=-1).reshape(-1, 2)
    mu, sd = gp_posterior_batch(model, pts)
    ei = expected_improvement(mu, sd, y_best, zeta)
    top = float(np.max(ei))
    if not top > 0.0:
        i = int(np.argmax(sd >= np.max(sd) * (1.0 - rel_tie)))
        return Selection(GainSet(float(pts[i, 0]), float(pts[i, 1])), 0.0, True)
    i = int(np.argmax(ei >= top * (1.0 - rel_tie)))
    x0 = pts[i]
    scale = reg.span

    def neg_ei(u: np.ndarray) -> float:
        m, s = gp_posterior_batch(model, (reg.lower + u * scale)[None, :])
        return -float(expected_improvement(m, s, y_best, zeta)[0])

    res = minimize(
        neg_ei,
        (x0 - reg.lower) / scale,
        method="L-BFGS-B",
        bounds=[(0.0, 1.0), (0.0, 1.0)],
        options={"maxiter": 50},
    )
    best, best_ei = x0, float(ei[i])
    if np.all(np.isfinite(res.x)) and -res.fun > best_ei * (1.0 + rel_tie):
        best, best_ei = reg.clip(reg.lower + res.x * scale), -float(res.fun)
    return Selection(GainSet(float(best[0]), float(best[1])), best_ei, False)


def check_stop(param_history: Sequence[GainSet], region: Region = Region(), tol: float = 0.03, window: int = 3) -> bool:
    """True when the last ``window`` range-normalized gain changes are all below ``tol`` (max-norm)."""
    if len(param_history) < window + 1:
        return False
    xs = [region.normalize(g) for g in param_history[-(window + 1):]]
    return all(float(np.max(np.abs(b - a))) < tol for a, b in zip(xs, xs[1:]))


# --- BO driver used by the harness and the benchmark ------------------------


@dataclass
class BayesOpt:
    """Stateful BO loop over gain sets with standardized objectives.

    Objectives are centred and scaled by the statistics of the
    initialization episodes before entering the GP so that the
    exploration margin ``zeta`` is in units of initial spread.
    """

    region: Region = field(default_factory=Region)
    zeta: float = 0.01
    model: GpModel = field(init=False)
    raw: list[float] = field(default_factory=list)
    gains: list[GainSet] = field(default_factory=list)
    _center: float = 0.0
    _scale: float = 1.0
    n_init: int = 0

    def __post_init__(self) -> None:
        self.model = GpModel(region=self.region)

    def tell(self, g: GainSet, value: float) -> None:
        self.gains.append(g)
        self.raw.append(float(value))

    def freeze_scaling(self) -> None:
        """Fix normalization from the observations gathered so far."""
        y = np.asarray(self.raw, dtype=float)
        self.n_init = len(y)
        self._center = float(np.mean(y)) if len(y) else 0.0
        s = float(np.std(y)) if len(y) > 1 else 0.0
        self._scale = s if s > 0 else 1.0

    def _refit(self) -> None:
        m = GpModel(region=self.region, hyper=self.model.hyper)
        for g, v in zip(self.gains, self.raw):
            m.add(g, (v - self._center) / self._scale)
        if m.n >= 2:
            optimize_hyperparams(m)
        self.model = m

    def incumbent(self) -> float:
        """Best posterior mean over the evaluated gains (noise-robust best sample)."""
        x = np.asarray(self.model.x, dtype=float)
        mu, _ = gp_posterior_batch(self.model, x)
        return float(np.max(mu))

    def ask(self) -> Selection:
        if self.n_init == 0:
            self.freeze_scaling()
        self._refit()
        return next_params(self.model, self.zeta, y_best=self.incumbent())

    def best_evaluated(self) -> GainSet:
        """Evaluated gain set with the highest posterior mean."""
        if not self.gains:
            raise ValueError("no evaluations yet")
        self._refit()
        mu, _ = gp_posterior_batch(self.model, np.array([g.as_tuple() for g in self.gains]))
        return self.gains[int(np.argmax(mu))]
