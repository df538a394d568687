"""Full-batch training algorithms for the (p, h, q) network.

Every algorithm runs against a small objective interface (loss, gradient,
optionally residuals + Jacobian, optionally a vectorised batch loss), so the
same code path trains networks and minimises closed-form test functions via
:func:`surrogate_minimize`.

One *epoch* is one full-batch parameter update for gradient methods and one
swarm generation for PSO. Each trainer returns the best parameters seen,
not merely the last iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mlp
from .mlp import NetworkConfig
from .series import PatternSet

__all__ = [
    "KINDS",
    "ENSEMBLE_KINDS",
    "DEFAULT_HYPERPARAMETERS",
    "TrainerSpec",
    "TrainingTrace",
    "TrainedModel",
    "Minimum",
    "Swarm",
    "TrainingError",
    "NetworkObjective",
    "FunctionObjective",
    "train",
    "surrogate_minimize",
    "gd_momentum_step",
    "rprop_update",
    "lm_step",
    "backtracking_line_search",
    "bfgs_inverse_update",
    "oss_direction",
    "init_swarm",
    "pso_step",
]

KINDS = ("GD_MOMENTUM", "RPROP", "SCG", "LM", "OSS", "BFGS", "PSO_TRELEA1", "PSO_TRELEA2")
#: The seven algorithms combined by the ensemble (plain momentum GD excluded).
ENSEMBLE_KINDS = ("LM", "RPROP", "SCG", "OSS", "BFGS", "PSO_TRELEA1", "PSO_TRELEA2")

_LINE_SEARCH = {"armijo": 1e-4, "backtrack": 0.5, "max_backtracks": 40}
_SWARM = {"particles": 27, "v_max": 4.0, "init_range": 1.0, "init_velocity": 0.5}

DEFAULT_HYPERPARAMETERS = {
    "GD_MOMENTUM": {"learning_rate": 0.01, "momentum": 0.9},
    "RPROP": {"delta0": 0.07, "eta_plus": 1.2, "eta_minus": 0.5,
              "delta_min": 1e-6, "delta_max": 50.0},
    "SCG": {"sigma": 5e-5, "lambda0": 5e-7},
    "LM": {"mu0": 1e-3, "mu_factor": 10.0, "mu_max": 1e10, "mu_min": 1e-20},
    "BFGS": dict(_LINE_SEARCH),
    "OSS": dict(_LINE_SEARCH),
    "PSO_TRELEA1": {"a": 0.6, "b": 1.7, **_SWARM},
    "PSO_TRELEA2": {"a": 0.729, "b": 1.494, **_SWARM},
}

CURVATURE_EPS = 1e-10
STAGNATION_RTOL = 1e-12


class TrainingError(RuntimeError):
    """Non-finite loss, singular LM system or invalid hyperparameters."""


def _validate(kind: str, hp: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise TrainingError(f"{kind}: {msg}")

    if kind == "GD_MOMENTUM":
        need(hp["learning_rate"] > 0, "learning_rate must be > 0")
        need(0 <= hp["momentum"] < 1, "momentum must satisfy 0 <= momentum < 1")
    elif kind == "RPROP":
        need(hp["eta_plus"] > 1 > hp["eta_minus"] > 0, "need eta_plus > 1 > eta_minus > 0")
        need(0 < hp["delta_min"] <= hp["delta0"] <= hp["delta_max"],
             "need 0 < delta_min <= delta0 <= delta_max")
    elif kind == "SCG":
        need(hp["sigma"] > 0 and hp["lambda0"] > 0, "sigma and lambda0 must be > 0")
    elif kind == "LM":
        need(0 < hp["mu_min"] <= hp["mu0"] < hp["mu_max"] and hp["mu_factor"] > 1,
             "need 0 < mu_min <= mu0 < mu_max and mu_factor > 1")
    elif kind in ("BFGS", "OSS"):
        need(0 < hp["armijo"] < 1, "armijo constant must be in (0, 1)")
        need(0 < hp["backtrack"] < 1, "backtrack factor must be in (0, 1)")
        need(int(hp["max_backtracks"]) >= 1, "max_backtracks must be >= 1")
    else:
        need(int(hp["particles"]) >= 2, "swarm needs at least 2 particles")
        need(hp["v_max"] > 0, "v_max must be > 0")
        need(hp["b"] >= 0, "b must be >= 0")


@dataclass(frozen=True)
class TrainerSpec:
    """Algorithm choice plus its settings.

    ``hyperparameters`` overrides entries of :data:`DEFAULT_HYPERPARAMETERS`;
    unknown keys are rejected. ``name`` labels the trainer in reports and
    keys its random streams (defaults to ``kind``).
    """

    kind: str
    hyperparameters: dict = field(default_factory=dict)
    max_epochs: int = 2000
    loss_floor: float = 0.0
    stagnation_window: int = 200
    name: str = ""

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in KINDS:
            raise TrainingError(f"unknown trainer kind {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        unknown = set(self.hyperparameters) - set(DEFAULT_HYPERPARAMETERS[kind])
        if unknown:
            raise TrainingError(
                f"{kind}: unknown hyperparameters {sorted(unknown)}; "
                f"valid keys are {sorted(DEFAULT_HYPERPARAMETERS[kind])}")
        merged = {**DEFAULT_HYPERPARAMETERS[kind], **self.hyperparameters}
        _validate(kind, merged)
        object.__setattr__(self, "hyperparameters", merged)
        if int(self.max_epochs) < 1:
            raise TrainingError("max_epochs must be >= 1")
        if int(self.stagnation_window) < 0:
            raise TrainingError("stagnation_window must be >= 0")
        if not self.name:
            object.__setattr__(self, "name", kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name,
                "hyperparameters": dict(self.hyperparameters),
                "max_epochs": self.max_epochs, "loss_floor": self.loss_floor,
                "stagnation_window": self.stagnation_window}


@dataclass
class TrainingTrace:
    losses: list
    epochs: int
    reason: str
    initial_loss: float
    trajectory: Optional[list] = None


@dataclass
class TrainedModel:
    config: NetworkConfig
    params: np.ndarray
    trainer: TrainerSpec
    trace: TrainingTrace
    final_loss: float
    seed: Optional[int] = None


@dataclass
class Minimum:
    """Result of :func:`surrogate_minimize`."""

    x: np.ndarray
    loss: float
    trace: TrainingTrace


# -- objectives ---------------------------------------------------------------

class NetworkObjective:
    """Half-SSE loss of a network on a fixed pattern set, optionally scaled."""

    def __init__(self, config: NetworkConfig, patterns: PatternSet, scale: float = 1.0):
        self.config = config
        self.patterns = patterns
        self.scale = scale
        self.dim = config.n_params

    def loss(self, w):
        return self.scale * mlp.sse_loss(self.config, w, self.patterns)

    def loss_grad(self, w):
        f, g = mlp.loss_and_gradient(self.config, w, self.patterns)
        return self.scale * f, self.scale * g

    def residual_jacobian(self, w):
        c = math.sqrt(self.scale)
        return (c * mlp.residuals(self.config, w, self.patterns),
                c * mlp.jacobian(self.config, w, self.patterns))

    def residual_vector(self, w):
        return math.sqrt(self.scale) * mlp.residuals(self.config, w, self.patterns)

    def batch_loss(self, W):
        return self.scale * mlp.batch_loss(self.config, W, self.patterns)


class FunctionObjective:
    """Wraps plain callables.

    ``fun(x) -> (loss, grad)``; ``residuals(x) -> (r, J)`` with loss
    ``0.5 * r @ r`` is needed by LM only. Either may be omitted when the
    other is given.
    """

    def __init__(self, fun: Optional[Callable] = None, residuals: Optional[Callable] = None,
                 dim: Optional[int] = None):
        if fun is None and residuals is None:
            raise ValueError("need fun or residuals")
        self._fun = fun
        self._res = residuals
        self.dim = dim

    def loss_grad(self, w):
        if self._fun is not None:
            f, g = self._fun(w)
            return float(f), np.asarray(g, dtype=float)
        r, J = self.residual_jacobian(w)
        return 0.5 * float(r @ r), J.T @ r

    def loss(self, w):
        return self.loss_grad(w)[0]

    def residual_jacobian(self, w):
        if self._res is None:
            raise TrainingError("LM needs a residual form of the objective")
        r, J = self._res(w)
        return np.asarray(r, dtype=float), np.atleast_2d(np.asarray(J, dtype=float))

    def residual_vector(self, w):
        return self.residual_jacobian(w)[0]

    def batch_loss(self, W):
        return np.array([self.loss(w) for w in W])


# -- bookkeeping --------------------------------------------------------------

class _Tracker:
    def __init__(self, spec: TrainerSpec, w0, f0, keep_trajectory: bool):
        self.spec = spec
        self._check(f0, 0)
        self.initial = f0
        self.best_w = np.array(w0, dtype=float, copy=True)
        self.best_f = f0
        self.losses = []
        self.bests = [f0]
        self.trajectory = [self.best_w.copy()] if keep_trajectory else None

    @staticmethod
    def _check(f, epoch):
        if not math.isfinite(f):
            raise TrainingError(f"non-finite loss {f} at epoch {epoch}")

    def done_before_start(self) -> Optional[str]:
        return "loss_floor" if self.best_f <= self.spec.loss_floor else None

    def record(self, w, f) -> Optional[str]:
        epoch = len(self.losses) + 1
        self._check(f, epoch)
        self.losses.append(f)
        if self.trajectory is not None:
            self.trajectory.append(np.array(w, dtype=float, copy=True))
        if f < self.best_f:
            self.best_f = f
            self.best_w = np.array(w, dtype=float, copy=True)
        self.bests.append(self.best_f)
        if self.best_f <= self.spec.loss_floor:
            return "loss_floor"
        win = self.spec.stagnation_window
        if win and epoch >= win:
            then = self.bests[-1 - win]
            if then - self.best_f <= STAGNATION_RTOL * abs(then):
                return "stagnation"
        if epoch >= self.spec.max_epochs:
            return "budget"
        return None

    def trace(self, reason) -> TrainingTrace:
        return TrainingTrace(list(self.losses), len(self.losses), reason,
                             self.initial, self.trajectory)


# -- building blocks ----------------------------------------------------------

def gd_momentum_step(params, grad, previous_delta, learning_rate, momentum):
    """``delta = -lr * grad + momentum * previous_delta``; returns (params + delta, delta)."""
    if not learning_rate > 0:
        raise TrainingError("learning_rate must be > 0")
    if not 0 <= momentum < 1:
        raise TrainingError("momentum must satisfy 0 <= momentum < 1")
    w = np.asarray(params, dtype=float)
    g = np.asarray(grad, dtype=float)
    prev = np.asarray(previous_delta, dtype=float)
    if not (w.shape == g.shape == prev.shape):
        raise ValueError("params, grad and previous_delta must share a shape")
    delta = -learning_rate * g + momentum * prev
    return w + delta, delta


def rprop_update(grad, prev_grad, step, prev_delta, hp):
    """One sign-based update with weight backtracking.

    Returns ``(delta, step, grad_memory)``. Where the derivative changed sign
    the step size shrinks, the previous update is reverted and the stored
    derivative is zeroed so the next epoch treats that weight as fresh.
    """
    prod = grad * prev_grad
    up = prod > 0
    down = prod < 0
    step = step.copy()
    step[up] = np.minimum(step[up] * hp["eta_plus"], hp["delta_max"])
    step[down] = np.maximum(step[down] * hp["eta_minus"], hp["delta_min"])
    delta = -np.sign(grad) * step
    delta[down] = -prev_delta[down]
    memory = grad.copy()
    memory[down] = 0.0
    return delta, step, memory


def _lm_solve(JtJ, Jtr, mu):
    A = JtJ.copy()
    A[np.diag_indices_from(A)] += mu
    try:
        return np.linalg.solve(A, -Jtr)
    except np.linalg.LinAlgError as exc:
        raise TrainingError(f"LM system singular at mu={mu:g}") from exc


def lm_step(J, r, mu):
    """Solve ``(J^T J + mu I) delta = -J^T r``."""
    return _lm_solve(J.T @ J, J.T @ r, mu)


def backtracking_line_search(objective, w, f, g, d, armijo=1e-4, backtrack=0.5,
                             max_backtracks=40):
    """Armijo backtracking from a unit step.

    Returns ``(alpha, w_new, f_new)`` or ``None`` when no acceptable step
    is found within ``max_backtracks`` halvings.
    """
    slope = float(g @ d)
    alpha = 1.0
    for _ in range(int(max_backtracks) + 1):
        w_new = w + alpha * d
        f_new = objective.loss(w_new)
        if math.isfinite(f_new) and f_new <= f + armijo * alpha * slope:
            return alpha, w_new, f_new
        alpha *= backtrack
    return None


def bfgs_inverse_update(Hinv, s, y):
    """Inverse-Hessian BFGS update; returns ``(H, updated)``.

    Skipped (``H`` returned unchanged) unless ``s @ y`` exceeds the
    curvature threshold.
    """
    sy = float(s @ y)
    if sy <= CURVATURE_EPS:
        return Hinv, False
    rho = 1.0 / sy
    Hy = Hinv @ y
    H = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
         + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
    return H, True


def oss_direction(g, s, y):
    """Memoryless BFGS direction from the last step ``s`` and gradient change ``y``."""
    sy = float(s @ y)
    if sy <= CURVATURE_EPS:
        return -g
    sg = float(s @ g)
    A = -(1.0 + float(y @ y) / sy) * sg / sy + float(y @ g) / sy
    B = sg / sy
    return -g + A * s + B * y


@dataclass
class Swarm:
    positions: np.ndarray
    velocities: np.ndarray
    personal_best: np.ndarray
    personal_fitness: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.personal_fitness))

    @property
    def global_best(self) -> np.ndarray:
        return self.personal_best[self.best_index]

    @property
    def global_fitness(self) -> float:
        return float(self.personal_fitness[self.best_index])


def init_swarm(fitness, n_particles, dim, rng, init_range=1.0, init_velocity=0.5) -> Swarm:
    X = rng.uniform(-init_range, init_range, size=(n_particles, dim))
    V = rng.uniform(-init_velocity, init_velocity, size=(n_particles, dim))
    F = np.asarray(fitness(X), dtype=float)
    return Swarm(X, V, X.copy(), F)


def pso_step(swarm: Swarm, fitness, a, b, v_max=np.inf) -> Swarm:
    """One generation of the deterministic two-parameter update.

    Each particle is attracted towards the midpoint of its personal best and
    the global best: ``v <- a v + b (mid - x)``, ``x <- x + v``.
    """
    target = 0.5 * (swarm.personal_best + swarm.global_best)
    V = a * swarm.velocities + b * (target - swarm.positions)
    np.clip(V, -v_max, v_max, out=V)
    X = swarm.positions + V
    F = np.asarray(fitness(X), dtype=float)
    if not np.all(np.isfinite(F)):
        raise TrainingError("non-finite fitness in swarm")
    better = F < swarm.personal_fitness
    P = swarm.personal_best.copy()
    P[better] = X[better]
    PF = np.where(better, F, swarm.personal_fitness)
    return Swarm(X, V, P, PF)


# -- algorithms ---------------------------------------------------------------

def _run_gd(obj, w, hp, tr):
    f, g = obj.loss_grad(w)
    delta = np.zeros_like(w)
    while True:
        w, delta = gd_momentum_step(w, g, delta, hp["learning_rate"], hp["momentum"])
        f, g = obj.loss_grad(w)
        reason = tr.record(w, f)
        if reason:
            return reason


def _run_rprop(obj, w, hp, tr):
    f, g = obj.loss_grad(w)
    step = np.full_like(w, hp["delta0"])
    prev_g = np.zeros_like(w)
    prev_delta = np.zeros_like(w)
    while True:
        prev_delta, step, prev_g = rprop_update(g, prev_g, step, prev_delta, hp)
        w = w + prev_delta
        f, g = obj.loss_grad(w)
        reason = tr.record(w, f)
        if reason:
            return reason


def _run_scg(obj, w, hp, tr):
    n = w.size
    f, g = obj.loss_grad(w)
    r = -g
    p = r.copy()
    if not np.any(r):
        return "converged"
    sigma0 = hp["sigma"]
    lam = hp["lambda0"]
    lam_bar = 0.0
    success = True
    k = 1
    delta = 0.0
    while True:
        pp = float(p @ p)
        if not math.isfinite(pp):
            raise TrainingError(f"non-finite search direction at epoch {len(tr.losses) + 1}")
        if success:
            sigma = sigma0 / math.sqrt(pp)
            _, g_sig = obj.loss_grad(w + sigma * p)
            delta = float(p @ (g_sig - g)) / sigma
        delta += (lam - lam_bar) * pp
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / pp)
            delta = -delta + lam * pp
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        w_new = w + alpha * p
        f_new, g_new = obj.loss_grad(w_new)
        comparison = 2.0 * delta * (f - f_new) / (mu * mu) if mu != 0 else -1.0
        if comparison >= 0:
            w, f = w_new, f_new
            r_new = -g_new
            lam_bar = 0.0
            success = True
            if k % n == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r, g = r_new, g_new
            if comparison >= 0.75:
                lam *= 0.25
        else:
            lam_bar = lam
            success = False
        if comparison < 0.25:
            lam += delta * (1.0 - comparison) / pp
        k += 1
        reason = tr.record(w, f)
        if reason:
            return reason
        if not np.any(r):
            return "converged"
        if not math.isfinite(lam) or lam > 1e300:
            return "stagnation"


def _run_lm(obj, w, hp, tr):
    mu = hp["mu0"]
    factor = hp["mu_factor"]
    r, J = obj.residual_jacobian(w)
    f = 0.5 * float(r @ r)
    while True:
        JtJ, Jtr = J.T @ J, J.T @ r
        if not np.any(Jtr):
            return "converged"
        while True:
            try:
                w_try = w + _lm_solve(JtJ, Jtr, mu)
            except TrainingError:
                # exactly singular at this damping: treat as a rejected step
                f_try = math.inf
            else:
                r_try = obj.residual_vector(w_try)
                f_try = 0.5 * float(r_try @ r_try)
            if math.isfinite(f_try) and f_try < f:
                w, f = w_try, f_try
                r, J = obj.residual_jacobian(w)
                # floored: mu = 0 would never grow again
                mu = max(mu / factor, hp["mu_min"])
                break
            mu *= factor
            if mu > hp["mu_max"]:
                tr.record(w, f)
                return "mu_max"
        reason = tr.record(w, f)
        if reason:
            return reason


def _run_quasi_newton(obj, w, hp, tr, kind):
    f, g = obj.loss_grad(w)
    if not np.any(g):
        return "converged"
    Hinv = np.eye(w.size) if kind == "BFGS" else None
    s = y = None
    steepest = True
    ls = {k: hp[k] for k in ("armijo", "backtrack", "max_backtracks")}
    while True:
        if steepest:
            d = -g
        elif kind == "BFGS":
            d = -(Hinv @ g)
        else:
            d = oss_direction(g, s, y)
        if float(g @ d) >= 0:
            d = -g
        found = backtracking_line_search(obj, w, f, g, d, **ls)
        if found is None:
            tr.record(w, f)
            return "line_search"
        _, w_new, _ = found
        f_new, g_new = obj.loss_grad(w_new)
        s, y = w_new - w, g_new - g
        if kind == "BFGS":
            Hinv, updated = bfgs_inverse_update(Hinv, s, y)
            steepest = not updated
        else:
            steepest = float(s @ y) <= CURVATURE_EPS
        w, f, g = w_new, f_new, g_new
        reason = tr.record(w, f)
        if reason:
            return reason
        if not np.any(g):
            return "converged"


def _run_pso(obj, swarm, hp, tr):
    while True:
        swarm = pso_step(swarm, obj.batch_loss, hp["a"], hp["b"], hp["v_max"])
        reason = tr.record(swarm.global_best, swarm.global_fitness)
        if reason:
            return reason


def _minimize(spec: TrainerSpec, obj, w0, rng, keep_trajectory=False):
    hp = spec.hyperparameters
    if spec.kind.startswith("PSO"):
        swarm = init_swarm(obj.batch_loss, int(hp["particles"]), obj.dim, rng,
                           hp["init_range"], hp["init_velocity"])
        tr = _Tracker(spec, swarm.global_best, swarm.global_fitness, keep_trajectory)
        reason = tr.done_before_start() or _run_pso(obj, swarm, hp, tr)
        return tr.best_w, tr.best_f, tr.trace(reason)

    w0 = np.array(w0, dtype=float, copy=True)
    tr = _Tracker(spec, w0, obj.loss(w0), keep_trajectory)
    reason = tr.done_before_start()
    if reason is None:
        runner = {
            "GD_MOMENTUM": _run_gd,
            "RPROP": _run_rprop,
            "SCG": _run_scg,
            "LM": _run_lm,
        }.get(spec.kind)
        if runner is not None:
            reason = runner(obj, w0, hp, tr)
        else:
            reason = _run_quasi_newton(obj, w0, hp, tr, spec.kind)
    return tr.best_w, tr.best_f, tr.trace(reason)


def train(spec: TrainerSpec, config: NetworkConfig, patterns: PatternSet, seed,
          keep_trajectory: bool = False, init=None, loss_scale: float = 1.0) -> TrainedModel:
    """Train a network from a seeded random start (or from ``init``).

    ``loss_scale`` multiplies the objective; it exists to check scale
    invariance and leaves ``final_loss`` reported on the unscaled loss.
    """
    rng = np.random.default_rng(seed)
    obj = NetworkObjective(config, patterns, loss_scale)
    w0 = mlp.init_params(config, rng) if init is None else np.asarray(init, dtype=float)
    w, _, trace = _minimize(spec, obj, w0, rng, keep_trajectory)
    return TrainedModel(config, w, spec, trace, mlp.sse_loss(config, w, patterns),
                        seed if isinstance(seed, (int, np.integer)) else None)


def surrogate_minimize(spec: TrainerSpec, objective=None, dim: Optional[int] = None, seed=0,
                       x0=None, residuals=None, keep_trajectory: bool = False) -> Minimum:
    """Run a trainer on an arbitrary objective.

    ``objective(x) -> (loss, grad)``; ``residuals(x) -> (r, J)`` for LM.
    Without ``x0`` the start is uniform on [-0.5, 0.5]; PSO always draws
    its own swarm.
    """
    rng = np.random.default_rng(seed)
    if x0 is not None:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        dim = x0.size
    if dim is None:
        raise ValueError("need dim or x0")
    obj = FunctionObjective(objective, residuals, dim)
    if x0 is None:
        x0 = rng.uniform(-0.5, 0.5, size=dim)
    x, f, trace = _minimize(spec, obj, x0, rng, keep_trajectory)
    return Minimum(x, f, trace)
