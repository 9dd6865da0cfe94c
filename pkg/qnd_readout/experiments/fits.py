# qnd_readout/experiments/fits.py

import math
from typing import Sequence

import numpy as np
import numpy.typing as npt
from lmfit import Minimizer, Parameters
from loguru import logger

from ..core.exceptions import DataError, NumericalError
from ..core.types import FitResult

MIN_POINTS = 4
TOLERANCE = 1e-10
MAX_NFEV = 20000
# Jacobian singular values below this fraction of the largest count as zero
SINGULAR_RATIO = 1e-9


def _t1_residual(pars: Parameters, times: np.ndarray, p1: np.ndarray, p0: np.ndarray) -> np.ndarray:
    a, b, t1 = pars['A'].value, pars['B'].value, pars['T1'].value
    model1 = a * np.exp(-times / t1) + b
    return np.concatenate([model1 - p1, np.full(len(p0), b) - p0])


def _t1_jacobian(pars: Parameters, times: np.ndarray, p1: np.ndarray, p0: np.ndarray) -> np.ndarray:
    a, t1 = pars['A'].value, pars['T1'].value
    decay = np.exp(-times / t1)
    zeros, ones = np.zeros(len(p0)), np.ones(len(p0))
    return np.array([
        np.concatenate([decay, zeros]),
        np.concatenate([np.ones(len(times)), ones]),
        np.concatenate([a * times / t1**2 * decay, zeros]),
    ])


def _initial_t1(times: np.ndarray, excess: np.ndarray) -> float:
    """Log-linear estimate of the decay time, or ten times the span when the data give none"""
    span = float(times.max() - times.min()) or 1.0
    positive = excess > 0
    if positive.sum() >= 2 and excess[positive][0] > excess[positive][-1]:
        slope = np.polyfit(times[positive], np.log(excess[positive]), 1)[0]
        if slope < 0:
            return -1.0 / slope
    return 10.0 * span


def fit_t1(
    p1: Sequence[float],
    p0: Sequence[float],
    times: Sequence[float],
    t1_guess: float | None = None,
) -> FitResult:
    """
    Joint least-squares fit of P1(t) = A exp(-t/T1) + B and P0(t) = B.

    Args:
        p1: single-repetition spin-up probabilities after preparing 1
        p0: the same after preparing 0, on the same time grid
        times: elapsed readout time of each point in seconds

    Returns:
        FitResult with A, B, T1 and Jacobian-based standard errors; flagged
        degenerate when the Jacobian is singular (e.g. A = 0), and not
        successful when the optimizer fails or T1 is not positive.
    """
    t = np.asarray(times, dtype=np.float64)
    y1 = np.asarray(p1, dtype=np.float64)
    y0 = np.asarray(p0, dtype=np.float64)
    if len(t) < MIN_POINTS or len(y1) != len(t) or len(y0) != len(t):
        raise DataError(f"fit_t1 needs at least {MIN_POINTS} points per curve on a shared time grid")

    b0 = float(y0.mean())
    a0 = float(y1[0] - b0)
    params = Parameters()
    params.add('A', value=a0 if a0 != 0 else 1e-3)
    params.add('B', value=b0)
    params.add('T1', value=t1_guess or _initial_t1(t, y1 - b0))

    minimizer = Minimizer(_t1_residual, params, fcn_args=(t, y1, y0), max_nfev=MAX_NFEV)
    out = minimizer.leastsq(Dfun=_t1_jacobian, col_deriv=1, xtol=TOLERANCE, ftol=TOLERANCE)

    values = {name: float(out.params[name].value) for name in ('A', 'B', 'T1')}
    stderr = {name: out.params[name].stderr for name in ('A', 'B', 'T1')}
    stderr = {k: (float(v) if v is not None and math.isfinite(v) else None) for k, v in stderr.items()}
    residual_norm = float(np.sqrt(np.sum(out.residual**2)))

    singular = np.linalg.svd(_t1_jacobian(out.params, t, y1, y0), compute_uv=False)
    degenerate = (
        not out.errorbars
        or stderr['T1'] is None
        or singular[-1] <= SINGULAR_RATIO * singular[0]
    )
    success = bool(out.success) and values['T1'] > 0
    message = out.message or ""
    if degenerate:
        message = f"T1 is not identifiable (singular Jacobian); {message}".strip()
        logger.warning(f"fit_t1: {message}")
    if not success:
        logger.warning(f"fit_t1 did not converge: residual norm {residual_norm:.3e}, {message}")
    else:
        logger.info(f"fit_t1: T1={values['T1']:.4g}s ± {stderr['T1']}, A={values['A']:.4f}, B={values['B']:.4f}")

    return FitResult(
        parameters=values,
        stderr=stderr,
        residual_norm=residual_norm,
        success=success,
        degenerate=degenerate,
        message=message,
        extra={"nfev": int(out.nfev)},
    )


def fit_preparation_error(
    eps_experiment: npt.ArrayLike,
    eps_simulated: npt.ArrayLike,
) -> FitResult:
    """
    Least-squares eta in eps_exp = (1 - 2 eta) eps_sim + eta over a shared N grid.

    For a single point this is eta = (eps_exp - eps_sim) / (1 - 2 eps_sim).
    """
    e_exp = np.atleast_1d(np.asarray(eps_experiment, dtype=np.float64))
    e_sim = np.atleast_1d(np.asarray(eps_simulated, dtype=np.float64))
    if e_exp.shape != e_sim.shape or e_exp.size == 0:
        raise DataError("Curves must be non-empty and share the same N grid")
    if np.any(e_sim >= 0.5):
        raise NumericalError("Simulated error rate reaches 1/2; the composition relation cannot be inverted")

    slope = 1.0 - 2.0 * e_sim
    excess = e_exp - e_sim
    eta = float(np.dot(slope, excess) / np.dot(slope, slope))
    residual = excess - eta * slope
    residual_norm = float(np.sqrt(np.sum(residual**2)))

    stderr = None
    if e_exp.size > 1:
        stderr = float(np.sqrt(np.sum(residual**2) / (e_exp.size - 1) / np.dot(slope, slope)))

    success = 0.0 <= eta < 0.5
    message = "" if success else f"eta={eta:.4g} lies outside [0, 1/2)"
    if not success:
        logger.warning(f"fit_preparation_error: {message}")

    return FitResult(
        parameters={"eta": eta},
        stderr={"eta": stderr},
        residual_norm=residual_norm,
        success=success,
        message=message,
    )
