"""Water-bath style calibration of the 8 needle-kinematics parameters.

A sweep over the actuator-limit rectangle yields (l_act, theta_act) ->
observed tip pixel pairs.  The pixel model has a one-parameter gauge
freedom: scaling (p_l, l_off) by c while scaling both pixel scales by 1/c
leaves predictions unchanged.  The fit therefore pins x_scale to the known
device scale and optimizes the remaining 7 parameters with a damped
Gauss-Newton (Levenberg-Marquardt) iteration.  Damping uses lambda *
diag(J^T J), which makes the iterates equivariant under the gauge rescaling,
so fits pinned at different x_scale values predict identical pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mechanism import ActuatorLimits, CalibrationParams, needle_fk

LAMBDA_INIT = 1e-3
LAMBDA_UP = 10.0
LAMBDA_DOWN = 10.0
MAX_ITERATIONS = 200
REL_COST_TOL = 1e-12
HUBER_THRESHOLD_PX = 3.0


class SweepPlanError(ValueError):
    pass


class RankDeficientSweepError(ValueError):
    def __init__(self, message: str, direction: str):
        super().__init__(message)
        self.direction = direction  # "linear" or "angular"


@dataclass(frozen=True)
class SweepSample:
    l_act: float
    theta_act: float
    u: float
    v: float
    weight: float = 1.0


@dataclass(frozen=True)
class FitReport:
    rms_px: float
    iterations: int
    converged: bool


def plan_sweep(limits: ActuatorLimits, n_l: int, n_theta: int
               ) -> list[tuple[float, float]]:
    """Row-major n_l x n_theta grid over the limit rectangle, endpoints in."""
    if n_l < 3 or n_theta < 3:
        raise SweepPlanError(
            "sweep needs at least 3 linear and 3 angular positions for the "
            "affine-in-length and affine-in-angle maps to be identifiable")
    ls = np.linspace(limits.l_min, limits.l_max, n_l)
    ts = np.linspace(limits.theta_min, limits.theta_max, n_theta)
    return [(float(l), float(t)) for l in ls for t in ts]


def simulate_sweep(true_params: CalibrationParams,
                   plan: Sequence[tuple[float, float]], noise_sigma: float,
                   seed: int) -> list[SweepSample]:
    """Synthetic water bath: FK pixels plus seeded Gaussian pixel noise."""
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    samples = []
    for l_act, theta_act in plan:
        u, v = needle_fk(true_params, l_act, theta_act)
        if noise_sigma > 0.0:
            u += noise_sigma * rng.standard_normal()
            v += noise_sigma * rng.standard_normal()
        samples.append(SweepSample(l_act, theta_act, float(u), float(v)))
    return samples


def _check_rank(samples: Sequence[SweepSample]) -> None:
    if len(samples) < 8:
        raise RankDeficientSweepError(
            f"need at least 8 samples, got {len(samples)}", "linear")
    n_l = len({round(s.l_act, 9) for s in samples})
    n_t = len({round(s.theta_act, 9) for s in samples})
    if n_l < 3:
        raise RankDeficientSweepError(
            f"samples span only {n_l} distinct linear positions; the sweep "
            "is collinear in the linear direction", "linear")
    if n_t < 3:
        raise RankDeficientSweepError(
            f"samples span only {n_t} distinct angular positions; the sweep "
            "is collinear in the angular direction", "angular")


def _vectorize(samples: Sequence[SweepSample]):
    l = np.array([s.l_act for s in samples])
    t = np.array([s.theta_act for s in samples])
    u = np.array([s.u for s in samples])
    v = np.array([s.v for s in samples])
    w = np.array([s.weight for s in samples])
    return l, t, u, v, w


def _predict(x: np.ndarray, x_scale: float, l: np.ndarray, t: np.ndarray):
    p_l, l_off, p_th, th_off, y_scale, x_off, y_off = x
    L = p_l * l + l_off
    phi = p_th * t + th_off
    return (L * np.cos(phi) * x_scale - x_off,
            L * np.sin(phi) * y_scale - y_off)


def _residual(x, x_scale, l, t, u, v, w):
    pu, pv = _predict(x, x_scale, l, t)
    sw = np.sqrt(w)
    return np.concatenate([(pu - u) * sw, (pv - v) * sw])


def _jacobian(x, x_scale, l, t, w):
    p_l, l_off, p_th, th_off, y_scale, x_off, y_off = x
    L = p_l * l + l_off
    phi = p_th * t + th_off
    c, s = np.cos(phi), np.sin(phi)
    n = len(l)
    Ju = np.zeros((n, 7))
    Jv = np.zeros((n, 7))
    Ju[:, 0] = l * c * x_scale
    Ju[:, 1] = c * x_scale
    Ju[:, 2] = -L * s * x_scale * t
    Ju[:, 3] = -L * s * x_scale
    Ju[:, 5] = -1.0
    Jv[:, 0] = l * s * y_scale
    Jv[:, 1] = s * y_scale
    Jv[:, 2] = L * c * y_scale * t
    Jv[:, 3] = L * c * y_scale
    Jv[:, 4] = L * s
    Jv[:, 6] = -1.0
    sw = np.sqrt(w)[:, None]
    return np.vstack([Ju * sw, Jv * sw])


def _initial_guess(x_scale, l, t, u, v, w) -> np.ndarray:
    """Coarse grid over the angle affine, linear solve for everything else.

    For a fixed (p_theta, theta_off) candidate the model is linear in
    (x_scale*p_l, x_scale*l_off, x_off) for u and in (y_scale*p_l,
    y_scale*l_off, y_off) for v.  The angle branch is restricted to
    phi in (0, pi/2) over the sweep.
    """
    t_span = float(np.max(t) - np.min(t))
    if t_span <= 0:
        t_span = 1.0
    best = None
    best_cost = np.inf
    k_max = (0.5 * np.pi) / t_span
    sw = np.sqrt(w)
    for p_th in np.linspace(0.05 * k_max, 0.999 * k_max, 16):
        for th_off in np.linspace(0.001, 0.5 * np.pi - 0.001, 24):
            phi = p_th * t + th_off
            if phi.min() <= 0.0 or phi.max() >= 0.5 * np.pi:
                continue
            c, s = np.cos(phi), np.sin(phi)
            Au = np.column_stack([l * c, c, -np.ones_like(l)]) * sw[:, None]
            Av = np.column_stack([l * s, s, -np.ones_like(l)]) * sw[:, None]
            try:
                cu, ru, *_ = np.linalg.lstsq(Au, u * sw, rcond=None)
                cv, rv, *_ = np.linalg.lstsq(Av, v * sw, rcond=None)
            except np.linalg.LinAlgError:
                continue
            cost = float(np.sum((Au @ cu - u * sw) ** 2)
                         + np.sum((Av @ cv - v * sw) ** 2))
            if cost < best_cost and abs(cu[0]) > 1e-12:
                p_l = cu[0] / x_scale
                l_off = cu[1] / x_scale
                y_scale = cv[0] / p_l
                if y_scale <= 0:
                    continue
                best_cost = cost
                best = np.array([p_l, l_off, p_th, th_off, y_scale,
                                 cu[2], cv[2]])
    if best is None:
        raise RankDeficientSweepError(
            "initialization failed: no angle-branch candidate explains the "
            "sweep; samples may be collinear in the angular direction",
            "angular")
    return best


def _params_to_vector(p: CalibrationParams) -> np.ndarray:
    return np.array([p.p_l, p.l_off, p.p_theta, p.theta_off, p.y_scale,
                     p.x_off, p.y_off])


def _vector_to_params(x: np.ndarray, x_scale: float) -> CalibrationParams:
    return CalibrationParams(p_l=float(x[0]), l_off=float(x[1]),
                             p_theta=float(x[2]), theta_off=float(x[3]),
                             x_scale=float(x_scale), y_scale=float(x[4]),
                             x_off=float(x[5]), y_off=float(x[6]))


def fit(samples: Sequence[SweepSample], known_x_scale: float,
        init: Optional[CalibrationParams] = None, huber: bool = False
        ) -> tuple[CalibrationParams, FitReport]:
    """Nonlinear least squares over 7 parameters with x_scale pinned."""
    _check_rank(samples)
    l, t, u, v, w = _vectorize(samples)
    if huber:
        params, _ = fit(samples, known_x_scale, init=init, huber=False)
        pu, pv = _predict(_params_to_vector(params), known_x_scale, l, t)
        r = np.hypot(pu - u, pv - v)
        w = w * np.minimum(1.0, HUBER_THRESHOLD_PX / np.maximum(r, 1e-12))

    if init is not None:
        x = _params_to_vector(init)
        # re-express the init in the pinned gauge
        if init.x_scale != known_x_scale:
            c = init.x_scale / known_x_scale
            x = x * np.array([c, c, 1.0, 1.0, 1.0 / c, 1.0, 1.0])
    else:
        x = _initial_guess(known_x_scale, l, t, u, v, w)

    def cost_of(xv):
        r = _residual(xv, known_x_scale, l, t, u, v, w)
        return float(r @ r), r

    cost, r = cost_of(x)
    lam = LAMBDA_INIT
    converged = False
    iterations = 0
    while iterations < MAX_ITERATIONS and not converged:
        iterations += 1
        J = _jacobian(x, known_x_scale, l, t, w)
        JtJ = J.T @ J
        g = J.T @ r
        stepped = False
        for _ in range(50):
            A = JtJ + lam * np.diag(np.diag(JtJ))
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= LAMBDA_UP
                continue
            new_cost, new_r = cost_of(x + delta)
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                x = x + delta
                cost, r = new_cost, new_r
                lam /= LAMBDA_DOWN
                stepped = True
                if rel < REL_COST_TOL:
                    converged = True
                break
            lam *= LAMBDA_UP
        if not stepped:
            # damping exhausted: no further descent at numerical precision
            converged = True

    params = _vector_to_params(x, known_x_scale)
    n = len(samples)
    rms = float(np.sqrt(cost / n)) if n else 0.0
    return params, FitReport(rms_px=rms, iterations=iterations,
                             converged=converged)


@dataclass(frozen=True)
class ResidualSummary:
    rms: float
    max: float
    bias_u: float
    bias_v: float


def residual_report(params: CalibrationParams,
                    samples: Sequence[SweepSample]
                    ) -> tuple[np.ndarray, ResidualSummary]:
    """Per-sample (du, dv) residuals observed - predicted, plus a summary."""
    l, t, u, v, _ = _vectorize(samples)
    pu, pv = _predict(_params_to_vector(params), params.x_scale, l, t)
    res = np.column_stack([u - pu, v - pv])
    norms = np.linalg.norm(res, axis=1)
    summary = ResidualSummary(
        rms=float(np.sqrt(np.mean(norms ** 2))) if len(samples) else 0.0,
        max=float(np.max(norms)) if len(samples) else 0.0,
        bias_u=float(np.mean(res[:, 0])) if len(samples) else 0.0,
        bias_v=float(np.mean(res[:, 1])) if len(samples) else 0.0)
    return res, summary
