# qnd_readout/decoder/hmm.py
"""
Hidden-Markov-model decoding of repetitive readout records.

The logical qubit follows a two-state Markov chain (relaxation only) and each
cycle yields an observation that depends on the current state alone. Forward
filtering runs once per initial-state hypothesis; the difference of the two
log-likelihoods is the logical log-likelihood ratio lambda_log, and the
decision is 1 iff lambda_log > 0.

Vectors and matrices use the basis order (1, 0).
"""

import math
from typing import Sequence

import numpy as np
import numpy.typing as npt
from loguru import logger

from ..core.constants import DEFAULT_PRIORS, ObservationKind, QubitState
from ..core.exceptions import (
    ConfigurationError,
    DataError,
    DegenerateObservationError,
)
from ..core.types import (
    BeliefState,
    DecodeResult,
    FloatArray,
    ObservationModel,
    ReadoutRecord,
    TransitionMatrix,
)

MAX_BRUTE_FORCE_CYCLES = 20


def relaxation_transition(dt: float, t1: float) -> TransitionMatrix:
    """
    Transition matrix exp(G dt / T1) for the relaxation generator
    G = [[-1, 0], [1, 0]], evaluated in closed form.

    Args:
        dt: evolution time in seconds, dt >= 0
        t1: relaxation time in seconds, t1 > 0 or inf
    """
    if math.isnan(dt) or dt < 0:
        raise ConfigurationError(f"dt must be nonnegative, got {dt}")
    if math.isnan(t1) or t1 <= 0:
        raise ConfigurationError(f"t1 must be positive or inf, got {t1}")

    if math.isinf(t1) or dt == 0:
        survival, decayed = 1.0, 0.0
    else:
        survival = math.exp(-dt / t1)
        decayed = -math.expm1(-dt / t1)
    return TransitionMatrix(np.array([[survival, 0.0], [decayed, 1.0]]))


def observation_vector(
    model: ObservationModel, o: float, kind: ObservationKind | str | None = None
) -> FloatArray:
    """Noise vector (P(o|1), P(o|0)) for a single outcome"""
    if kind is not None:
        model.check_kind(kind)
    p1, p0 = model.likelihoods(np.asarray(o))
    return np.array([float(p1), float(p0)])


def step_matrix(transition: TransitionMatrix, noise: FloatArray) -> FloatArray:
    """V[x][y] = w[x][y] * P(O|y)"""
    return transition.w * np.asarray(noise, dtype=np.float64)[None, :]


def forward_step(belief: BeliefState, v: npt.ArrayLike) -> BeliefState:
    """
    One normalized filtering step: rho' = V rho / N, ln L' = ln L + ln N.

    Raises:
        DegenerateObservationError: when V rho vanishes
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (2, 2) or np.any(v < 0):
        raise DataError("Step matrix must be a nonnegative 2x2 matrix")

    propagated = v @ belief.rho
    norm = float(propagated.sum())
    if not norm > 0 or not math.isfinite(norm):
        raise DegenerateObservationError(
            f"Propagated belief vanished at cycle {belief.cycle_index}"
        )

    return BeliefState(
        rho=propagated / norm,
        log_likelihood=belief.log_likelihood + math.log(norm),
        cycle_index=belief.cycle_index + 1,
    )


def _check_priors(priors: Sequence[float]) -> float:
    if len(priors) != 2 or min(priors) <= 0 or abs(sum(priors) - 1.0) > 1e-9:
        raise ConfigurationError(f"priors must be (P(x0=1), P(x0=0)) summing to 1, got {priors}")
    return math.log(priors[0] / priors[1])


def decode(
    record: ReadoutRecord,
    model: ObservationModel,
    t1: float,
    priors: Sequence[float] = DEFAULT_PRIORS,
) -> DecodeResult:
    """
    Maximum-likelihood estimate of the pre-measurement logical state.

    Runs one forward filter per hypothesis x0 in {1, 0}. A hypothesis whose
    propagated belief vanishes (possible only with exact-zero error rates)
    pins lambda_log at -/+ model.llr_clamp instead of an infinity.
    """
    model.check_kind(record.kind)
    prior_term = _check_priors(priors)
    transition = relaxation_transition(record.cycle_duration, t1)
    p1, p0 = model.likelihoods(np.asarray(record.observations))

    beliefs = {state: BeliefState.delta(state) for state in (QubitState.ONE, QubitState.ZERO)}
    alive = {state: True for state in beliefs}
    trajectory: list[tuple[BeliefState, BeliefState]] = []
    per_cycle: list[float] = []

    for k in range(len(record)):
        v = step_matrix(transition, np.array([p1[k], p0[k]]))
        for state in beliefs:
            if not alive[state]:
                continue
            try:
                beliefs[state] = forward_step(beliefs[state], v)
            except DegenerateObservationError:
                alive[state] = False

        if not any(alive.values()):
            raise DegenerateObservationError(
                f"Both hypotheses are impossible after cycle {k + 1}"
            )
        trajectory.append((beliefs[QubitState.ONE], beliefs[QubitState.ZERO]))
        per_cycle.append(_combine(beliefs, alive, prior_term, model.llr_clamp))

    lambda_log = per_cycle[-1] if per_cycle else prior_term
    return DecodeResult(
        lambda_log=lambda_log,
        decision=QubitState.ONE if lambda_log > 0 else QubitState.ZERO,
        belief_trajectory=tuple(trajectory),
        per_cycle_lambda=tuple(per_cycle),
    )


def _combine(
    beliefs: dict[QubitState, BeliefState],
    alive: dict[QubitState, bool],
    prior_term: float,
    clamp: float,
) -> float:
    if not alive[QubitState.ONE]:
        return -clamp
    if not alive[QubitState.ZERO]:
        return clamp
    return (
        beliefs[QubitState.ONE].log_likelihood
        - beliefs[QubitState.ZERO].log_likelihood
        + prior_term
    )


def brute_force_likelihood(
    record: ReadoutRecord,
    model: ObservationModel,
    t1: float,
    x0: QubitState,
) -> float:
    """
    Exact P(O | x0) by summing over all 2^N hidden paths (x_1 ... x_N).

    Test oracle for the forward filter; limited to N <= 20.
    """
    n = len(record)
    if n > MAX_BRUTE_FORCE_CYCLES:
        raise DataError(f"Path enumeration is limited to {MAX_BRUTE_FORCE_CYCLES} cycles, got {n}")
    if n == 0:
        return 1.0
    model.check_kind(record.kind)

    w = relaxation_transition(record.cycle_duration, t1).w
    p1, p0 = model.likelihoods(np.asarray(record.observations))

    # row i holds the labels of path i, column k the state x_k for k = 0 .. N
    later = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    paths = np.concatenate([np.full((2**n, 1), int(x0)), later], axis=1)
    index = 1 - paths

    emission = np.where(paths[:, :n] == 1, p1[None, :], p0[None, :])
    transition = w[index[:, 1:], index[:, :-1]]
    return float(np.prod(emission * transition, axis=1).sum())


def majority_vote(bits: Sequence[int]) -> QubitState:
    """Unweighted vote; a tie decides 0"""
    if len(bits) == 0:
        raise DataError("Majority vote needs at least one outcome")
    ones = sum(1 for b in bits if int(b) == 1)
    return QubitState.ONE if ones > len(bits) - ones else QubitState.ZERO


def cumulative_majority(bits: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Majority-vote decision after each prefix, for a (n_records, N) bit array"""
    b = np.asarray(bits, dtype=np.int64)
    ones = np.cumsum(b, axis=-1)
    counts = np.arange(1, b.shape[-1] + 1)
    return ones > counts - ones


def filter_log_likelihoods(
    p1: npt.ArrayLike, p0: npt.ArrayLike, transition: TransitionMatrix
) -> tuple[FloatArray, FloatArray]:
    """
    Vectorized two-hypothesis forward filter.

    Args:
        p1, p0: (n_records, N) arrays of P(O_k|1) and P(O_k|0)

    Returns:
        ln P(O_1..O_k | x0=1) and ln P(O_1..O_k | x0=0) for every prefix k,
        each of shape (n_records, N); a vanished hypothesis reads -inf
    """
    p1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    p0 = np.atleast_2d(np.asarray(p0, dtype=np.float64))
    n, n_cycles = p1.shape
    wt = transition.w.T

    result = []
    for state in (QubitState.ONE, QubitState.ZERO):
        rho = np.zeros((n, 2))
        rho[:, state.basis_index] = 1.0
        log_lik = np.zeros(n)
        out = np.empty((n, n_cycles))
        for k in range(n_cycles):
            propagated = (rho * np.stack([p1[:, k], p0[:, k]], axis=1)) @ wt
            norm = propagated.sum(axis=1)
            dead = ~(norm > 0)
            safe = np.where(dead, 1.0, norm)
            rho = np.where(dead[:, None], rho, propagated / safe[:, None])
            log_lik = log_lik + np.where(dead, -np.inf, np.log(safe))
            out[:, k] = log_lik
        result.append(out)
    return result[0], result[1]


def lambda_trajectories(
    p1: npt.ArrayLike,
    p0: npt.ArrayLike,
    transition: TransitionMatrix,
    priors: Sequence[float] = DEFAULT_PRIORS,
    clamp: float = 50.0,
) -> FloatArray:
    """lambda_log after each prefix for a batch of records, shape (n_records, N)"""
    prior_term = _check_priors(priors)
    ll1, ll0 = filter_log_likelihoods(p1, p0, transition)
    dead1, dead0 = np.isneginf(ll1), np.isneginf(ll0)
    if np.any(dead1 & dead0):
        raise DegenerateObservationError("Both hypotheses vanished for at least one record")
    with np.errstate(invalid="ignore"):
        lam = ll1 - ll0 + prior_term
    lam = np.where(dead1, -clamp, lam)
    return np.where(dead0, clamp, lam)


def decode_batch(
    observations: npt.ArrayLike,
    model: ObservationModel,
    cycle_duration: float,
    t1: float,
    priors: Sequence[float] = DEFAULT_PRIORS,
) -> FloatArray:
    """
    Per-prefix lambda_log for equal-length records stacked as (n_records, N).

    Agrees with `decode(...).per_cycle_lambda` record by record.
    """
    obs = np.atleast_2d(np.asarray(observations))
    p1, p0 = model.likelihoods(obs)
    transition = relaxation_transition(cycle_duration, t1)
    logger.debug(f"Decoding batch of {obs.shape[0]} records x {obs.shape[1]} cycles ({model.kind})")
    return lambda_trajectories(p1, p0, transition, priors, model.llr_clamp)
