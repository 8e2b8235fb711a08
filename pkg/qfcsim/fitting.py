"""Weighted nonlinear least squares with a Levenberg-Marquardt schedule.

Every model carries an analytic Jacobian. MODELS holds the registry used by
the analysis functions and the CLI.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import (
    LM_LAMBDA_DOWN,
    LM_LAMBDA_MAX,
    LM_LAMBDA_START,
    LM_LAMBDA_UP,
    LM_MAX_ITERATIONS,
    LM_RTOL,
)
from .errors import AnalysisError

logger = logging.getLogger(__name__)

DEFAULT_LENGTH_CM = 4.8


@dataclass
class Model:
    name: str
    param_names: tuple
    func: object
    jac: object

    def __call__(self, x, params):
        return self.func(np.asarray(x, dtype=np.float64), np.asarray(params, dtype=np.float64))

    def jacobian(self, x, params):
        return self.jac(np.asarray(x, dtype=np.float64), np.asarray(params, dtype=np.float64))


@dataclass
class FitReport:
    model: str
    params: dict
    sigmas: dict
    residual_norm: float
    iterations: int
    converged: bool
    covariance: list = field(default=None, repr=False)

    def to_dict(self):
        data = asdict(self)
        data.pop("covariance")
        return data


# ── Models ───────────────────────────────────────────────────────────────────


def _lifetime(t, p):
    amplitude, t1, v, delta, phi, background = p
    return amplitude * np.exp(-t / t1) * (1.0 + v * np.cos(2.0 * math.pi * delta * t + phi)) + background


def _lifetime_jac(t, p):
    amplitude, t1, v, delta, phi, background = p
    decay = np.exp(-t / t1)
    theta = 2.0 * math.pi * delta * t + phi
    beat = 1.0 + v * np.cos(theta)
    swing = amplitude * decay * v * np.sin(theta)
    return np.column_stack([
        decay * beat,
        amplitude * decay * beat * t / t1**2,
        amplitude * decay * np.cos(theta),
        -swing * 2.0 * math.pi * t,
        -swing,
        np.ones_like(t),
    ])


def conversion_model(length_cm=DEFAULT_LENGTH_CM):
    """η(P) = η_max·sin²(√(η_nor·P)·L) with the waveguide length held fixed."""

    def func(power, p):
        eta_max, eta_nor = p
        return eta_max * np.sin(np.sqrt(eta_nor * power) * length_cm) ** 2

    def jac(power, p):
        eta_max, eta_nor = p
        u = np.sqrt(eta_nor * power) * length_cm
        du = length_cm * np.sqrt(power) / (2.0 * math.sqrt(eta_nor))
        return np.column_stack([np.sin(u) ** 2, eta_max * np.sin(2.0 * u) * du])

    return Model("conversion", ("eta_max", "eta_nor"), func, jac)


def _rabi(power, p):
    rate_max, p_pi = p
    return rate_max * np.sin(0.5 * math.pi * np.sqrt(power / p_pi)) ** 2


def _rabi_jac(power, p):
    rate_max, p_pi = p
    u = 0.5 * math.pi * np.sqrt(power / p_pi)
    return np.column_stack([np.sin(u) ** 2, rate_max * np.sin(2.0 * u) * (-u / (2.0 * p_pi))])


def _saturation(power, p):
    rate_max, p_sat = p
    return rate_max * power / (power + p_sat)


def _saturation_jac(power, p):
    rate_max, p_sat = p
    return np.column_stack([power / (power + p_sat), -rate_max * power / (power + p_sat) ** 2])


MODELS = {
    "lifetime": Model("lifetime", ("amplitude", "t1_ns", "beat_visibility", "fss_ghz", "phase", "background"),
                      _lifetime, _lifetime_jac),
    "conversion": conversion_model(),
    "rabi": Model("rabi", ("rate_max", "p_pi"), _rabi, _rabi_jac),
    "saturation": Model("saturation", ("rate_max", "p_sat"), _saturation, _saturation_jac),
}


# ── Engine ───────────────────────────────────────────────────────────────────


def _chisq(model, x, y, weights, params):
    with np.errstate(all="ignore"):
        residual = y - model(x, params)
    value = float(np.sum(weights * residual**2))
    return value if math.isfinite(value) else math.inf


def gradient_norm(model, x, y, weights, params):
    """Infinity norm of J^T·W·r, half the gradient of χ² at params."""
    jac = model.jacobian(x, params)
    residual = y - model(x, params)
    return float(np.abs(jac.T @ (weights * residual)).max())


def residual_scale(model, x, params, chisq):
    return max(1.0, math.sqrt(chisq)) * max(1.0, float(np.abs(model.jacobian(x, params)).max()))


def levenberg_marquardt(model, x, y, p0, weights=None, absolute_sigma=True,
                        max_iterations=LM_MAX_ITERATIONS, rtol=LM_RTOL):
    """Minimize Σ w·(y - f(x, p))² starting from p0.

    Damping multiplies the diagonal of the curvature matrix by (1 + λ).
    Sigmas come from the inverse curvature at the optimum, scaled by the
    reduced χ² unless absolute_sigma.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    weights = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    params = np.asarray(p0, dtype=np.float64).copy()
    n_params = len(params)
    if len(y) < n_params:
        raise AnalysisError(f"{model.name} fit needs at least {n_params} points, got {len(y)}")

    flambda = LM_LAMBDA_START
    chisq = _chisq(model, x, y, weights, params)
    if not math.isfinite(chisq):
        raise AnalysisError(f"{model.name} fit: model is not finite at the starting point")
    converged = False
    iterations = 0

    while iterations < max_iterations:
        iterations += 1
        jac = model.jacobian(x, params)
        residual = y - model(x, params)
        alpha = jac.T @ (weights[:, None] * jac)
        beta = jac.T @ (weights * residual)
        scale = max(1.0, math.sqrt(chisq)) * max(1.0, float(np.abs(jac).max()))
        if chisq == 0.0 or float(np.abs(beta).max()) <= 1e-12 * scale:
            converged = True
            break

        accepted = False
        while flambda <= LM_LAMBDA_MAX:
            damped = alpha + flambda * np.diag(np.diag(alpha))
            try:
                step = np.linalg.solve(damped, beta)
            except np.linalg.LinAlgError:
                flambda *= LM_LAMBDA_UP
                continue
            trial = params + step
            trial_chisq = _chisq(model, x, y, weights, trial)
            if trial_chisq <= chisq:
                accepted = True
                break
            flambda *= LM_LAMBDA_UP

        if not accepted:
            # no damped step improves χ²: stationary to machine precision
            converged = float(np.abs(beta).max()) <= 1e-6 * scale
            break

        decrease = chisq - trial_chisq
        small_step = np.all(np.abs(step) <= rtol * (np.abs(trial) + rtol))
        params, chisq = trial, trial_chisq
        flambda = max(flambda / LM_LAMBDA_DOWN, 1e-12)
        if small_step or decrease <= rtol * chisq:
            # a stalled χ² only counts as converged at a stationary point
            stationary = gradient_norm(model, x, y, weights, params) <= 1e-6 * residual_scale(model, x, params, chisq)
            if stationary or small_step:
                converged = stationary
                break

    jac = model.jacobian(x, params)
    alpha = jac.T @ (weights[:, None] * jac)
    try:
        covariance = np.linalg.inv(alpha)
    except np.linalg.LinAlgError:
        covariance = np.full((n_params, n_params), np.inf)
        converged = False
    dof = len(y) - n_params
    if not absolute_sigma and dof > 0:
        covariance = covariance * (chisq / dof)
    sigmas = np.sqrt(np.abs(np.diag(covariance)))

    report = FitReport(
        model=model.name,
        params={name: float(v) for name, v in zip(model.param_names, params)},
        sigmas={name: float(s) for name, s in zip(model.param_names, sigmas)},
        residual_norm=math.sqrt(chisq),
        iterations=iterations,
        converged=converged,
        covariance=covariance.tolist(),
    )
    if converged:
        logger.debug(f"{model.name} fit converged in {iterations} iterations, residual {report.residual_norm:.4g}")
    else:
        logger.warning(f"{model.name} fit did not converge after {iterations} iterations")
    return report
