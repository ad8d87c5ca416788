"""Levenberg-Marquardt on the Huber-robustified refinement cost."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from ..exceptions import DidNotConverge, NumericalFailure
from .problem import LeastSquaresProblem, quadratic_cost, robust_cost

logger = logging.getLogger(__name__)

_DENSE_LIMIT = 2500


@dataclass
class SolverConfig:
    max_iterations: int = 100
    relative_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-10
    # cost below this is numerically zero; no step can improve it
    cost_tolerance: float = 1e-20
    initial_damping: float = 1e-4
    max_damping: float = 1e16
    raise_on_failure: bool = False


@dataclass
class RefinementReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: str
    cost_history: list = field(default_factory=list)
    initial_quadratic_cost: float = 0.0
    final_quadratic_cost: float = 0.0
    stereo_rms: float = 0.0
    mono_rms: float = 0.0
    overall_rms: float = 0.0
    n_stereo_blocks: int = 0
    n_mono_blocks: int = 0
    n_pose_params: int = 0
    n_point_params: int = 0
    excluded_blocks: list = field(default_factory=list)
    scale_constrained: bool = True
    baseline: float = 1.0
    scale_factor: float = 1.0
    huber_width: float = 2.0
    state: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        out = asdict(replace(self, state=None))
        del out["state"]
        return out


def _rms(values) -> float:
    values = np.asarray(values)
    return float(np.sqrt(np.mean(values**2))) if values.size else 0.0


def _solve(H, g, damping):
    n = H.shape[0]
    diag = H.diagonal()
    A = H + sp.diags(damping * np.maximum(diag, 1e-9))
    if n <= _DENSE_LIMIT:
        A = A.toarray()
        try:
            c = scipy.linalg.cho_factor(A, check_finite=False)
            return scipy.linalg.cho_solve(c, -g, check_finite=False)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(A, -g, rcond=None)[0]
    return scipy.sparse.linalg.spsolve(A.tocsc(), -g)


def _weighted_system(problem: LeastSquaresProblem, ev):
    w = ev.robust_weights(problem.huber_width)
    w[ev.excluded] = 0.0
    row_w = np.repeat(np.sqrt(w), ev.block_sizes)
    Jw = sp.diags(row_w) @ ev.jacobian
    rw = row_w * ev.residuals
    return (Jw.T @ Jw).tocsr(), Jw.T @ rw


def optimize(problem: LeastSquaresProblem, config: SolverConfig | None = None):
    """Refine a problem; returns ``(reconstruction, report)``.

    Only steps that lower the robust cost are accepted, so the recorded cost
    history is non-increasing. Hitting ``max_iterations`` without meeting a
    convergence test returns the best iterate with ``converged=False`` (or
    raises :class:`DidNotConverge` when ``config.raise_on_failure``).
    The final variable values are kept on ``report.state``.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    state = problem.initial.copy()
    ev = problem.evaluate(state)
    cost = robust_cost(ev, problem.huber_width)
    if not np.isfinite(cost):
        raise NumericalFailure("initial cost is not finite")
    initial_cost, initial_quad = cost, quadratic_cost(ev)
    history = [cost]
    damping = cfg.initial_damping
    iterations = 0
    termination = "max_iterations"
    converged = False

    while True:
        if cost <= cfg.cost_tolerance:
            termination, converged = "cost", True
            break
        H, g = _weighted_system(problem, ev)
        if g.size == 0 or np.max(np.abs(g)) < cfg.gradient_tolerance:
            termination, converged = "gradient", True
            break
        if iterations >= cfg.max_iterations:
            break
        iterations += 1
        delta = _solve(H, g, damping)
        if not np.all(np.isfinite(delta)):
            raise NumericalFailure("non-finite step")
        trial = problem.retract(state, delta)
        try:
            trial_ev = problem.evaluate(trial)
            trial_cost = robust_cost(trial_ev, problem.huber_width)
        except NumericalFailure:
            trial_cost = np.inf
        if trial_cost < cost:
            rel = (cost - trial_cost) / cost
            state, ev, cost = trial, trial_ev, trial_cost
            history.append(cost)
            damping = max(damping / 10.0, 1e-12)
            logger.debug("iteration %d: cost %.6g (damping %.1e)", iterations, cost, damping)
            if rel < cfg.relative_tolerance:
                termination, converged = "relative_decrease", True
                break
        else:
            damping *= 10.0
            if damping > cfg.max_damping:
                termination, converged = "stalled", True
                break

    if not converged and cfg.raise_on_failure:
        raise DidNotConverge(f"no convergence after {iterations} iterations (cost {cost:.6g})")

    valid = ~ev.excluded
    S = ev.n_stereo
    r_s = ev.residuals[: 3 * S].reshape(-1, 3)[valid[:S]]
    r_m = ev.residuals[3 * S :].reshape(-1, 2)[valid[S:]]
    excluded = [
        {"kind": "stereo", **vars(problem.stereo_obs[k])} if k < S else {"kind": "mono", **vars(problem.mono_obs[k - S])}
        for k in np.nonzero(ev.excluded)[0]
    ]
    report = RefinementReport(
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=iterations,
        converged=converged,
        termination=termination,
        cost_history=history,
        initial_quadratic_cost=initial_quad,
        final_quadratic_cost=quadratic_cost(ev),
        stereo_rms=_rms(r_s),
        mono_rms=_rms(r_m),
        overall_rms=_rms(np.concatenate([r_s.reshape(-1), r_m.reshape(-1)])),
        n_stereo_blocks=problem.n_stereo_blocks,
        n_mono_blocks=problem.n_mono_blocks,
        n_pose_params=problem.n_pose_params,
        n_point_params=3 * problem.n_points,
        excluded_blocks=excluded,
        scale_constrained=problem.scale_constrained,
        baseline=problem.rig.baseline,
        huber_width=problem.huber_width,
        state=state,
    )
    logger.debug(
        "refinement finished: %s after %d iterations, cost %.6g -> %.6g in %.3fs",
        termination, iterations, initial_cost, cost, time.perf_counter() - t0,
    )
    if not problem.scale_constrained:
        logger.warning("no residual involves a right camera; scale is not constrained")
    return problem.to_reconstruction(state), report
