"""Break-even compute theory as executable code.

Cost model per example: Backward = 2, Forward = 1, CheapForward = 0.7 by
default, generalized to arbitrary positive costs. Writing c1 = forward +
backward for the vanilla per-example cost and A = cheap_forward / c1,
B = 1 - A, the closed forms below reduce to the default-cost constants
(A = 0.7/3, B = 2.3/3) when the defaults are used.

* gamma(f)      = (cheap + (c1 - cheap) f) / c1, the per-iteration compute
                  ratio of predicted-gradient training to vanilla.
* rho_star      = kappa/2 + cheap / (2 kappa (cheap + (c1 - cheap) f)),
                  the minimum alignment for compute parity at fixed f.
* rho_switch    = kappa/2 + A / (2 kappa), the alignment above which the
                  optimal control fraction drops below 1.
* f_star        = argmin of Q(f) = phi(f, rho, kappa) * gamma(f) over (0, 1].
* sc_bound / nc_bound evaluate the constant-stepsize strongly convex bound
  and the average-gradient non-convex bound for a given variance level.

simulate_estimator is the Monte Carlo verifier for unbiasedness and the
exact variance formula; its inner loop lives in _kernels.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DimensionError, DomainError, MomentError, StepsizeError
from .estimator import control_batch_size, moments_from_values, v2_exact, variance_inflation
from .rng import substream

SWEEP_HEADER = ["f", "rho", "kappa", "phi", "gamma", "Q", "break_even"]


@dataclass(frozen=True)
class CostModel:
    backward: float = 2.0
    forward: float = 1.0
    cheap_forward: float = 0.7

    def __post_init__(self):
        if min(self.backward, self.forward, self.cheap_forward) <= 0:
            raise DomainError("all pass costs must be positive")
        if self.cheap_forward > self.forward + self.backward:
            raise DomainError("cheap_forward must not exceed forward + backward")

    @property
    def vanilla_per_example(self) -> float:
        return self.forward + self.backward

    def predicted_per_example(self, f: float) -> float:
        return self.cheap_forward + (self.vanilla_per_example - self.cheap_forward) * f

    @property
    def cheap_share(self) -> float:
        """A = cheap_forward / (forward + backward)."""
        return self.cheap_forward / self.vanilla_per_example


@dataclass(frozen=True)
class BoundInputs:
    initial_gap: float
    strong_convexity: float
    smoothness: float
    stepsize: float
    variance: float
    horizon: int

    def __post_init__(self):
        if self.initial_gap < 0 or self.variance < 0:
            raise DomainError("initial gap and variance must be nonnegative")
        if self.smoothness <= 0 or self.stepsize <= 0:
            raise DomainError("smoothness and stepsize must be positive")
        if self.horizon < 0:
            raise DomainError("horizon must be nonnegative")


def _check_f_open(f: float):
    if not 0.0 < f < 1.0:
        raise DomainError(f"control fraction must be in (0,1), got {f}")


def gamma(cm: CostModel, f: float) -> float:
    """Per-iteration compute ratio of predicted training to vanilla."""
    if not 0.0 < f <= 1.0:
        raise DomainError(f"control fraction must be in (0,1], got {f}")
    return cm.predicted_per_example(f) / cm.vanilla_per_example


def rho_star(cm: CostModel, f: float, kappa: float) -> float:
    """Break-even alignment at fixed control fraction f."""
    _check_f_open(f)
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    return kappa / 2.0 + cm.cheap_forward / (2.0 * kappa * cm.predicted_per_example(f))


def break_even_satisfied(cm: CostModel, f: float, rho: float, kappa: float) -> bool:
    """True iff phi(f, rho, kappa) * gamma(f) <= 1 (equal-budget parity)."""
    _check_f_open(f)
    return variance_inflation(f, rho, kappa) * gamma(cm, f) <= 1.0


def rho_switch(cm: CostModel, kappa: float) -> float:
    """Alignment above which the optimal control fraction moves off f = 1."""
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    return kappa / 2.0 + cm.cheap_share / (2.0 * kappa)


def f_star(cm: CostModel, rho: float, kappa: float, f_min: float = 0.01) -> float:
    """Minimizer of Q(f) = phi * gamma over f in (0, 1].

    Below the regime-switch threshold the boundary f = 1 wins. Above it the
    interior stationary point sqrt(A a / (B b)) applies, except in the
    degenerate perfect-alignment case a = 0, where Q decreases all the way
    down and the smallest admissible fraction f_min is returned.
    """
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    if not 0.0 < f_min < 1.0:
        raise DomainError(f"f_min must be in (0,1), got {f_min}")
    if rho <= rho_switch(cm, kappa):
        return 1.0
    a = 1.0 + kappa * kappa - 2.0 * rho * kappa
    b = 2.0 * rho * kappa - kappa * kappa
    if a <= 0.0:
        return f_min
    big_a = cm.cheap_share
    big_b = 1.0 - big_a
    return min(1.0, float(np.sqrt(big_a * a / (big_b * b))))


def q_objective(cm: CostModel, f: float, rho: float, kappa: float) -> float:
    """Compute-normalized variance objective Q(f) = phi(f,rho,kappa) gamma(f)."""
    if not 0.0 < f <= 1.0:
        raise DomainError(f"control fraction must be in (0,1], got {f}")
    return variance_inflation(f, rho, kappa) * gamma(cm, f)


def sc_bound(b: BoundInputs) -> float:
    """Strongly convex constant-stepsize bound with noise floor
    L eta V / (2 alpha)."""
    if b.strong_convexity <= 0:
        raise DomainError("strong convexity must be positive")
    if b.stepsize > 1.0 / b.smoothness:
        raise StepsizeError(
            f"stepsize {b.stepsize} exceeds 1/L = {1.0 / b.smoothness}")
    floor = b.smoothness * b.stepsize * b.variance / (2.0 * b.strong_convexity)
    contraction = (1.0 - b.strong_convexity * b.stepsize) ** b.horizon
    return contraction * (b.initial_gap - floor) + floor


def nc_bound(b: BoundInputs) -> float:
    """Non-convex average-gradient bound 2 gap / (eta T) + L eta V."""
    if b.stepsize > 1.0 / b.smoothness:
        raise StepsizeError(
            f"stepsize {b.stepsize} exceeds 1/L = {1.0 / b.smoothness}")
    if b.horizon < 1:
        raise DomainError("horizon must be >= 1")
    return 2.0 * b.initial_gap / (b.stepsize * b.horizon) \
        + b.smoothness * b.stepsize * b.variance


class SimulationResult(NamedTuple):
    mean_err: float
    emp_var: float
    predicted_var: float


def simulate_estimator(sigma_g: float, sigma_h: float, tau: float, dim: int,
                       f: float, m: int, trials: int, seed: int,
                       mu=None, mu_h=None, use_numba=None) -> SimulationResult:
    """Monte Carlo check of the debiased estimator against the exact variance.

    Per-example gradient pairs are Gaussian with the requested second
    moments, constructed as v = (tau / sigma_g^2) u + w with w independent of
    variance sigma_h^2 - tau^2 / sigma_g^2. Each trial draws one mini-batch,
    splits off the control micro-batch, and forms the debiased estimate;
    returned are ||mean(G) - mu||, the empirical E||G - mu||^2, and the
    closed-form prediction. mu and mu_h (scalar or length-dim vectors)
    default to zero; the estimator is unbiased for mu regardless of mu_h.
    """
    if sigma_g <= 0 or sigma_h < 0:
        raise MomentError(f"need sigma_g > 0 and sigma_h >= 0, got {sigma_g}, {sigma_h}")
    if abs(tau) > sigma_g * sigma_h:
        raise MomentError(
            f"|tau| = {abs(tau)} violates the Cauchy-Schwarz bound {sigma_g * sigma_h}")
    if dim < 1:
        raise DimensionError(f"dim must be >= 1, got {dim}")
    if m < 2:
        raise DomainError(f"mini-batch size must be >= 2, got {m}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    _check_f_open(f)
    m_c = control_batch_size(m, f)
    if m_c >= m:
        raise DomainError(f"f = {f} leaves no prediction micro-batch for m = {m}")
    f_eff = m_c / m

    mu_vec = np.zeros(dim) if mu is None else np.broadcast_to(
        np.asarray(mu, dtype=np.float64), (dim,)).copy()
    mu_h_vec = np.zeros(dim) if mu_h is None else np.broadcast_to(
        np.asarray(mu_h, dtype=np.float64), (dim,)).copy()

    su = sigma_g / np.sqrt(dim)
    coef = tau / sigma_g ** 2
    sw = np.sqrt(max(0.0, sigma_h ** 2 - tau ** 2 / sigma_g ** 2)) / np.sqrt(dim)

    rng = substream(seed, "simulation")
    chunk = max(1, int(2_000_000 // (m * dim)))
    sum_est = np.zeros(dim)
    sum_sq = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        zg = rng.standard_normal((n, m, dim))
        zw = rng.standard_normal((n, m, dim))
        part_est, part_sq = _kernels.mc_chunk(
            zg, zw, mu_vec, mu_h_vec, su, coef, sw, m_c, 1.0 - f_eff,
            use_numba=use_numba)
        sum_est += part_est
        sum_sq += part_sq
        done += n

    mean_err = float(np.linalg.norm(sum_est / trials - mu_vec))
    emp_var = sum_sq / trials
    predicted = v2_exact(moments_from_values(sigma_g, sigma_h, tau), f_eff, m)
    return SimulationResult(mean_err, emp_var, predicted)


@dataclass
class SweepResult:
    f_values: np.ndarray
    rho_values: np.ndarray
    kappa_values: np.ndarray
    rows: list  # (f, rho, kappa, phi, gamma, Q, break_even)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_HEADER)
            for row in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else int(v)
                                 for v in row])


def sweep(cm: CostModel, f_values, rho_values, kappa_values) -> SweepResult:
    """Evaluate phi, gamma, Q and the break-even verdict over a grid."""
    fs = np.asarray(f_values, dtype=np.float64)
    rhos = np.asarray(rho_values, dtype=np.float64)
    kappas = np.asarray(kappa_values, dtype=np.float64)
    for name, arr in (("f", fs), ("rho", rhos), ("kappa", kappas)):
        if arr.ndim != 1 or len(arr) == 0:
            raise DomainError(f"{name} grid must be a non-empty 1-D sequence")
        if len(arr) > 1 and not np.all(np.diff(arr) > 0):
            raise DomainError(f"{name} grid coordinates must be strictly increasing")
    rows = []
    for f in fs:
        for rho in rhos:
            for kappa in kappas:
                phi = variance_inflation(f, rho, kappa)
                g = gamma(cm, f)
                q = phi * g
                ok = (q <= 1.0) if f < 1.0 else True
                rows.append((float(f), float(rho), float(kappa),
                             float(phi), float(g), float(q), bool(ok)))
    return SweepResult(fs, rhos, kappas, rows)
