"""
Parameter estimation for the empirical forms.

least_squares_fit   Levenberg-Marquardt on sum of squared radial residuals,
                    forward-difference Jacobian, parameters clipped to bounds
mcmc_sample         random-walk Metropolis with a Gaussian likelihood and a
                    uniform prior on the bounds
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from .base import DataFormatError, DomainError, read_key_values, write_key_values
from .dataio import CrossingRecord, record_arrays
from .models import FORMS, BoundaryModel, EmpiricalModel, Form, ShueForm

logger = logging.getLogger(__name__)

JACOBIAN_STEP = 1e-6
_MU_INIT = 1e-3
_MU_MAX = 1e16
_MU_MIN = 1e-15


def residuals(params: Form | BoundaryModel, records: Sequence[CrossingRecord]) -> np.ndarray:
    """Observed r minus predicted r, one element per record."""
    if not records:
        return np.empty(0)
    model = params if isinstance(params, BoundaryModel) else EmpiricalModel(params)
    bz, dp, theta, r = record_arrays(records)
    return r - np.asarray(model.predict_r(bz, dp, theta), dtype=float)


def default_bounds(form_cls: type, fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """+-fraction around the published coefficients of form_cls."""
    ref = form_cls().to_vector()
    a, b = ref * (1.0 - fraction), ref * (1.0 + fraction)
    return np.minimum(a, b), np.maximum(a, b)


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Which coefficients of which form to estimate from which records."""

    records: Sequence[CrossingRecord]
    form_cls: type
    free: np.ndarray
    initial: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    _arrays: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.form_cls.coefficient_names())
        for name in ("free", "initial", "lower", "upper"):
            if np.shape(getattr(self, name)) != (n,):
                raise DomainError(f"FitProblem.{name} must have {n} entries")
        if not np.any(self.free):
            raise DomainError("FitProblem needs at least one free coefficient")
        if np.any(self.lower > self.upper):
            raise DomainError("FitProblem bounds must satisfy lower <= upper")
        if np.any(self.initial < self.lower) or np.any(self.initial > self.upper):
            names = [nm for nm, v, lo, hi in zip(self.names, self.initial, self.lower, self.upper) if not lo <= v <= hi]
            raise DomainError(f"initial guess outside bounds for {names}")
        object.__setattr__(self, "_arrays", record_arrays(self.records))

    @classmethod
    def create(
        cls,
        records: Sequence[CrossingRecord],
        form: Form = ShueForm(),
        free: Sequence[str] | None = None,
        bounds: tuple[np.ndarray, np.ndarray] | None = None,
        bounds_fraction: float = 0.5,
    ) -> "FitProblem":
        """Start from `form`; free defaults to every coefficient, bounds to +-50% of the published values."""
        form_cls = type(form)
        names = form_cls.coefficient_names()
        free = list(free) if free else list(names)
        unknown = [nm for nm in free if nm not in names]
        if unknown:
            raise DomainError(f"unknown {form_cls.FORM_ID} coefficients {unknown}")
        mask = np.array([nm in free for nm in names])
        lower, upper = bounds if bounds is not None else default_bounds(form_cls, bounds_fraction)
        return cls(
            records=records,
            form_cls=form_cls,
            free=mask,
            initial=form.to_vector(),
            lower=np.asarray(lower, dtype=float),
            upper=np.asarray(upper, dtype=float),
        )

    @property
    def names(self) -> tuple[str, ...]:
        return self.form_cls.coefficient_names()

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(nm for nm, f in zip(self.names, self.free) if f)

    def full_vector(self, free_values: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
        vector = (self.initial if base is None else base).copy()
        vector[self.free] = free_values
        return vector

    def residual_vector(self, vector: np.ndarray) -> np.ndarray:
        bz, dp, theta, r = self._arrays
        model = EmpiricalModel(self.form_cls.from_vector(vector))
        return r - model.predict_r(bz, dp, theta)

    def sse(self, vector: np.ndarray) -> float:
        res = self.residual_vector(vector)
        return float(res @ res)


@dataclass(frozen=True)
class FitResult:
    form: Form
    sse: float
    initial_sse: float
    n_iters: int
    converged: bool
    damping_increases: int = 0
    # SSE at the start and after every accepted step
    sse_history: tuple[float, ...] = ()

    def model(self) -> EmpiricalModel:
        return EmpiricalModel(self.form, model_id=f"{self.form.FORM_ID}-lsq")


def _jacobian(problem: FitProblem, p: np.ndarray, res: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Forward differences of the residual vector; steps backward at an upper bound."""
    jac = np.empty((res.size, p.size))
    for j in range(p.size):
        h = JACOBIAN_STEP * max(abs(p[j]), 1e-8)
        if p[j] + h > upper[j]:
            h = -h
        shifted = p.copy()
        shifted[j] += h
        jac[:, j] = (problem.residual_vector(problem.full_vector(shifted)) - res) / h
    return jac


def least_squares_fit(problem: FitProblem, tol: float = 1e-10, max_iters: int = 200) -> FitResult:
    """Levenberg-Marquardt over the free coefficients.

    Converged when the relative SSE decrease of an accepted step, or its
    relative step norm, drops below tol. Exhausting max_iters is not fatal:
    the result is returned with converged=False.
    """
    lower = problem.lower[problem.free]
    upper = problem.upper[problem.free]
    p = problem.initial[problem.free].copy()
    res = problem.residual_vector(problem.full_vector(p))
    sse = float(res @ res)
    initial_sse = sse
    history = [sse]

    mu = _MU_INIT
    converged = False
    damping_increases = 0
    n_iters = 0
    for it in range(max_iters):
        n_iters = it + 1
        if sse == 0.0:
            converged = True
            break
        jac = _jacobian(problem, p, res, lower, upper)
        hess = jac.T @ jac
        grad = jac.T @ res
        scale = np.diag(np.maximum(np.diag(hess), 1e-12))

        accepted = False
        while mu <= _MU_MAX:
            try:
                step = np.linalg.solve(hess + mu * scale, -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                damping_increases += 1
                logger.debug("singular normal equations at iteration %d, damping -> %.3g", n_iters, mu)
                continue
            p_new = np.clip(p + step, lower, upper)
            res_new = problem.residual_vector(problem.full_vector(p_new))
            sse_new = float(res_new @ res_new)
            if math.isfinite(sse_new) and sse_new < sse:
                accepted = True
                break
            mu *= 10.0

        if not accepted:
            # no damping level reduces SSE: already at a minimum to working precision
            converged = True
            logger.debug("LM stalled at iteration %d with sse=%.6g", n_iters, sse)
            break

        rel_decrease = (sse - sse_new) / sse
        step_norm = float(np.linalg.norm(p_new - p))
        p, res, sse = p_new, res_new, sse_new
        history.append(sse)
        mu = max(mu / 10.0, _MU_MIN)
        logger.debug("LM iteration %d: sse=%.9g mu=%.3g", n_iters, sse, mu)
        if rel_decrease < tol or step_norm < tol * (float(np.linalg.norm(p)) + tol):
            converged = True
            break

    if not converged:
        logger.warning("Least squares did not converge in %d iterations (sse=%.6g)", max_iters, sse)
    form = problem.form_cls.from_vector(problem.full_vector(p))
    return FitResult(form, sse, initial_sse, n_iters, converged, damping_increases, tuple(history))


def staged_least_squares_fit(problem: FitProblem, tol: float = 1e-10, max_iters: int = 200) -> FitResult:
    """Fit the r0 coefficients first, then the alpha coefficients, each stage from the previous result."""
    form_cls = problem.form_cls
    current = problem.initial.copy()
    n_iters = 0
    converged = True
    damping_increases = 0
    initial_sse = problem.sse(current)
    sse = initial_sse
    history = [initial_sse]
    for group in (form_cls.R0_FIELDS, form_cls.ALPHA_FIELDS):
        mask = problem.free & np.array([nm in group for nm in problem.names])
        if not mask.any():
            continue
        stage = replace(problem, free=mask, initial=current)
        result = least_squares_fit(stage, tol=tol, max_iters=max_iters)
        current = result.form.to_vector()
        sse = result.sse
        history.extend(result.sse_history[1:])
        n_iters += result.n_iters
        converged = converged and result.converged
        damping_increases += result.damping_increases
        logger.info("Stage %s: sse=%.6g after %d iterations", ",".join(n for n in group), sse, result.n_iters)
    return FitResult(form_cls.from_vector(current), sse, initial_sse, n_iters, converged, damping_increases, tuple(history))


# ----------------------------------------------------------------------
# MCMC
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class McmcConfig:
    n_steps: int = 20000
    burn_in: int = 5000
    proposal_sigma: tuple[float, ...] | None = None
    proposal_scale: float = 0.005
    seed: int = 0
    likelihood_sigma: float | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < self.n_steps:
            raise DomainError(f"need 0 <= burn_in < n_steps, got burn_in={self.burn_in}, n_steps={self.n_steps}")
        if self.proposal_sigma is not None and not all(s > 0 for s in self.proposal_sigma):
            raise DomainError("proposal_sigma entries must be > 0")
        if not self.proposal_scale > 0:
            raise DomainError("proposal_scale must be > 0")
        if self.likelihood_sigma is not None and not self.likelihood_sigma > 0:
            raise DomainError("likelihood_sigma must be > 0")


@dataclass(frozen=True, eq=False)
class Chain:
    names: tuple[str, ...]
    samples: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    burn_in: int
    mean: np.ndarray
    std: np.ndarray
    form: Form

    def model(self) -> EmpiricalModel:
        return EmpiricalModel(self.form, model_id=f"{self.form.FORM_ID}-mcmc")


def metropolis(
    log_post: Callable[[np.ndarray], float],
    p0: np.ndarray,
    proposal_sigma: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Random-walk Metropolis. Returns (samples, log posteriors, accepted proposals)."""
    p0 = np.asarray(p0, dtype=float)
    proposal_sigma = np.asarray(proposal_sigma, dtype=float)
    if proposal_sigma.shape != p0.shape:
        raise ValueError(f"proposal_sigma has shape {proposal_sigma.shape}, expected {p0.shape} to match p0")

    chain = np.zeros((n_steps, p0.size))
    ln_probs = np.zeros(n_steps)
    chain[0] = p0
    ln_probs[0] = log_post(p0)
    if not math.isfinite(ln_probs[0]):
        raise DomainError("starting point has zero posterior density")

    n_accept = 0
    for i in range(1, n_steps):
        proposal = chain[i - 1] + rng.normal(0.0, proposal_sigma)
        new_ln_prob = log_post(proposal)
        ratio = new_ln_prob - ln_probs[i - 1]
        if ratio >= 0 or np.log(rng.uniform()) < ratio:
            chain[i] = proposal
            ln_probs[i] = new_ln_prob
            n_accept += 1
        else:
            chain[i] = chain[i - 1]
            ln_probs[i] = ln_probs[i - 1]
    return chain, ln_probs, n_accept


def mcmc_sample(problem: FitProblem, cfg: McmcConfig = McmcConfig()) -> Chain:
    """Sample the free coefficients; uniform prior on the bounds, Gaussian likelihood on residuals."""
    p0 = problem.initial[problem.free]
    lower = problem.lower[problem.free]
    upper = problem.upper[problem.free]

    sigma = cfg.likelihood_sigma
    if sigma is None:
        sigma = float(np.std(problem.residual_vector(problem.initial)))
        if not sigma > 0:
            raise DomainError("residual spread at the initial guess is zero; set likelihood_sigma")
        logger.info("Likelihood sigma from initial residuals: %.6g Re", sigma)

    if cfg.proposal_sigma is not None:
        proposal = np.asarray(cfg.proposal_sigma, dtype=float)
    else:
        proposal = cfg.proposal_scale * np.maximum(np.abs(p0), 1e-6)

    two_var = 2.0 * sigma * sigma

    def log_post(p: np.ndarray) -> float:
        if np.any(p < lower) or np.any(p > upper):
            return -math.inf
        return -problem.sse(problem.full_vector(p)) / two_var

    rng = np.random.default_rng(cfg.seed)
    samples, ln_probs, n_accept = metropolis(log_post, p0, proposal, cfg.n_steps, rng)
    acceptance = n_accept / (cfg.n_steps - 1) if cfg.n_steps > 1 else 0.0
    if n_accept == 0:
        logger.warning("MCMC rejected every proposal (acceptance rate 0); shrink proposal_sigma")

    kept = samples[cfg.burn_in:]
    mean = kept.mean(axis=0)
    std = kept.std(axis=0)
    form = problem.form_cls.from_vector(problem.full_vector(mean))
    logger.info("MCMC acceptance rate %.3f over %d steps", acceptance, cfg.n_steps)
    return Chain(problem.free_names, samples, ln_probs, acceptance, cfg.burn_in, mean, std, form)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
def write_fit_report(form: Form, path: Path | str, **extra: Any) -> None:
    """One `name = value` line per coefficient, preceded by the form id."""
    values: dict[str, Any] = {"form": form.FORM_ID}
    values.update(zip(form.coefficient_names(), (float(v) for v in form.to_vector())))
    values.update(extra)
    write_key_values(values, path)


def read_fit_report(path: Path | str) -> Form:
    values = read_key_values(path)
    form_id = values.get("form")
    if form_id not in FORMS:
        raise DataFormatError(f"unknown or missing form '{form_id}'", path)
    form_cls = FORMS[form_id]
    try:
        return form_cls(**{name: float(values[name]) for name in form_cls.coefficient_names()})
    except KeyError as e:
        raise DataFormatError(f"missing coefficient {e}", path) from e


def write_chain(chain: Chain, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(chain.samples, columns=list(chain.names))
    frame["log_post"] = chain.log_post
    frame.to_csv(path, index=False, float_format="%.12g")
