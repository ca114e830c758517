"""
Special functions and numerical oracles.

Everything here runs in 64-bit floating point regardless of the training
precision, and every function is vectorized over numpy arrays (scalars in,
scalars out).

    log_gamma      - Lanczos approximation (g=7, n=9) with reflection below 0.5
    digamma        - recurrence up to x >= 10, then the asymptotic series
    trigamma       - same scheme, derivative of digamma
    reg_inc_beta   - continued fraction (modified Lentz)
    beta_ppf       - safeguarded Newton inversion of reg_inc_beta
    numeric_kl     - quadrature oracle for closed-form KL divergences
    finite_diff_grad / compare_gradients - gradient verification
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Tuple, Union

import numpy as np
from scipy import integrate

from .errors import ContractError, DomainError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)

# Below this the asymptotic series is not used
_ASYMPTOTIC_FROM = 10.0

_CF_MAX_ITER = 10000
_CF_TOL = 1e-15
_CF_FPMIN = 1e-300

# Relative-error denominator floor for gradient reports
GRAD_FLOOR = 1e-8


def _as_positive(x: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(arr > 0):
        raise DomainError(f"{name} requires strictly positive arguments, got {x!r}")
    return arr


def _unwrap(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def _lanczos(x: np.ndarray) -> np.ndarray:
    # valid for x >= 0.5
    x = x - 1.0
    series = np.full_like(x, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        series = series + _LANCZOS_COEF[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_TWO_PI + (x + 0.5) * np.log(t) - t + np.log(series)


def log_gamma(x: ArrayLike) -> ArrayLike:
    """ln Gamma(x) for x > 0."""
    arr = _as_positive(x, "log_gamma")
    out = np.empty_like(arr)
    small = arr < 0.5
    if np.any(small):
        xs = arr[small]
        out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _lanczos(1.0 - xs)
    if np.any(~small):
        out[~small] = _lanczos(arr[~small])
    return _unwrap(out)


def digamma(x: ArrayLike) -> ArrayLike:
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    arr = _as_positive(x, "digamma").copy()
    acc = np.zeros_like(arr)
    mask = arr < _ASYMPTOTIC_FROM
    while np.any(mask):
        acc[mask] -= 1.0 / arr[mask]
        arr[mask] += 1.0
        mask = arr < _ASYMPTOTIC_FROM
    r = 1.0 / arr
    r2 = r * r
    series = r2 * (1.0 / 12 - r2 * (1.0 / 120 - r2 * (1.0 / 252 - r2 * (
        1.0 / 240 - r2 * (1.0 / 132 - r2 * (691.0 / 32760 - r2 / 12.0))))))
    return _unwrap(acc + np.log(arr) - 0.5 * r - series)


def trigamma(x: ArrayLike) -> ArrayLike:
    """psi'(x) for x > 0."""
    arr = _as_positive(x, "trigamma").copy()
    acc = np.zeros_like(arr)
    mask = arr < _ASYMPTOTIC_FROM
    while np.any(mask):
        acc[mask] += 1.0 / (arr[mask] * arr[mask])
        arr[mask] += 1.0
        mask = arr < _ASYMPTOTIC_FROM
    r = 1.0 / arr
    r2 = r * r
    tail = 1.0 / 6 - r2 * (1.0 / 30 - r2 * (1.0 / 42 - r2 * (1.0 / 30 - r2 * (
        5.0 / 66 - r2 * (691.0 / 2730 - r2 * 7.0 / 6)))))
    return _unwrap(acc + r * (1.0 + r * (0.5 + r * tail)))


def log_beta(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """ln B(a, b)."""
    a_arr = _as_positive(a, "log_beta")
    b_arr = _as_positive(b, "log_beta")
    return _unwrap(np.asarray(log_gamma(a_arr) + log_gamma(b_arr) - log_gamma(a_arr + b_arr)))


def beta_log_pdf(x: ArrayLike, a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """Log density of Beta(a, b) at x in [0, 1]."""
    x_arr = np.asarray(x, dtype=np.float64)
    a_arr = _as_positive(a, "beta_log_pdf")
    b_arr = _as_positive(b, "beta_log_pdf")
    if not np.all((x_arr >= 0) & (x_arr <= 1)):
        raise DomainError(f"beta_log_pdf requires x in [0, 1], got {x!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(a_arr == 1.0, 0.0, (a_arr - 1.0) * np.log(x_arr))
        right = np.where(b_arr == 1.0, 0.0, (b_arr - 1.0) * np.log1p(-x_arr))
    return _unwrap(np.asarray(left + right - log_beta(a_arr, b_arr)))


def _floor_tiny(v: np.ndarray) -> np.ndarray:
    return np.where(np.abs(v) < _CF_FPMIN, _CF_FPMIN, v)


def _beta_continued_fraction(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 / _floor_tiny(1.0 - qab * x / qap)
    h = d.copy()
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 / _floor_tiny(1.0 + aa * d)
        c = _floor_tiny(1.0 + aa / c)
        h = h * d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 / _floor_tiny(1.0 + aa * d)
        c = _floor_tiny(1.0 + aa / c)
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _CF_TOL):
            return h
    raise NumericError(
        f"incomplete beta continued fraction did not converge in {_CF_MAX_ITER} iterations"
    )


def reg_inc_beta(x: ArrayLike, a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """
    Regularized incomplete beta function I_x(a, b).

    Args:
        x: Point(s) in [0, 1]
        a: First shape parameter(s), > 0
        b: Second shape parameter(s), > 0

    Returns:
        I_x(a, b); exactly 0 at x=0 and exactly 1 at x=1
    """
    a_arr = _as_positive(a, "reg_inc_beta")
    b_arr = _as_positive(b, "reg_inc_beta")
    x_arr = np.asarray(x, dtype=np.float64)
    if not np.all((x_arr >= 0) & (x_arr <= 1)):
        raise DomainError(f"reg_inc_beta requires x in [0, 1], got {x!r}")
    x_arr, a_arr, b_arr = np.broadcast_arrays(x_arr, a_arr, b_arr)

    out = np.where(x_arr >= 1.0, 1.0, 0.0)
    inner = (x_arr > 0) & (x_arr < 1)
    if np.any(inner):
        xi, ai, bi = x_arr[inner], a_arr[inner], b_arr[inner]
        # Continued fraction converges fast below (a+1)/(a+b+2); use symmetry above
        swap = xi >= (ai + 1.0) / (ai + bi + 2.0)
        xs = np.where(swap, 1.0 - xi, xi)
        a_s = np.where(swap, bi, ai)
        b_s = np.where(swap, ai, bi)
        log_front = a_s * np.log(xs) + b_s * np.log1p(-xs) - np.asarray(log_beta(a_s, b_s))
        val = np.exp(log_front) * _beta_continued_fraction(xs, a_s, b_s) / a_s
        out[inner] = np.clip(np.where(swap, 1.0 - val, val), 0.0, 1.0)
    return _unwrap(out)


def reg_inc_beta_grad(x: ArrayLike, a: ArrayLike, b: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """
    Partial derivatives of I_x(a, b) w.r.t. a and b by central differences.

    Steps are relative to the shape parameters so that a - h stays positive.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    a_arr = _as_positive(a, "reg_inc_beta_grad")
    b_arr = _as_positive(b, "reg_inc_beta_grad")
    ha = 1e-5 * a_arr
    hb = 1e-5 * b_arr
    d_a = (np.asarray(reg_inc_beta(x_arr, a_arr + ha, b_arr))
           - np.asarray(reg_inc_beta(x_arr, a_arr - ha, b_arr))) / (2.0 * ha)
    d_b = (np.asarray(reg_inc_beta(x_arr, a_arr, b_arr + hb))
           - np.asarray(reg_inc_beta(x_arr, a_arr, b_arr - hb))) / (2.0 * hb)
    return _unwrap(np.asarray(d_a)), _unwrap(np.asarray(d_b))


def beta_ppf(u: ArrayLike, a: ArrayLike, b: ArrayLike,
             tol: float = 1e-14, max_iter: int = 200) -> ArrayLike:
    """
    Inverse of reg_inc_beta in x.

    Newton steps on I_x(a, b) - u, falling back to bisection whenever a step
    leaves the current bracket.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if not np.all((u_arr >= 0) & (u_arr <= 1)):
        raise DomainError(f"beta_ppf requires u in [0, 1], got {u!r}")
    a_arr = _as_positive(a, "beta_ppf")
    b_arr = _as_positive(b, "beta_ppf")
    u_arr, a_arr, b_arr = np.broadcast_arrays(u_arr, a_arr, b_arr)

    lo = np.zeros(u_arr.shape)
    hi = np.ones(u_arr.shape)
    x = np.clip(a_arr / (a_arr + b_arr), 1e-3, 1.0 - 1e-3)
    for _ in range(max_iter):
        f = np.asarray(reg_inc_beta(x, a_arr, b_arr)) - u_arr
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            pdf = np.exp(np.asarray(beta_log_pdf(x, a_arr, b_arr)))
            x_new = x - f / pdf
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(f == 0, x, np.where(bad, 0.5 * (lo + hi), x_new))
        done = (np.abs(x_new - x) <= tol) | (hi - lo <= tol)
        x = x_new
        if np.all(done):
            break
    else:
        logger.debug(f"beta_ppf stopped after {max_iter} iterations")
    x = np.where(u_arr <= 0.0, 0.0, np.where(u_arr >= 1.0, 1.0, x))
    return _unwrap(x)


@dataclass(frozen=True)
class GridSpec:
    """Uniform quadrature grid on [lower, upper]."""

    lower: float
    upper: float
    points: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ContractError(f"grid lower={self.lower} must be below upper={self.upper}")
        if self.points < 2:
            raise ContractError(f"grid needs at least 2 points, got {self.points}")

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.points)


def numeric_kl(log_p: Callable[[np.ndarray], np.ndarray],
               log_q: Callable[[np.ndarray], np.ndarray],
               grid: GridSpec) -> float:
    """
    Quadrature estimate of KL(p || q) for 1-D densities.

    Simpson's rule on an odd number of points, trapezoid otherwise.

    Args:
        log_p: Vectorized log density of p
        log_q: Vectorized log density of q
        grid: Integration grid covering the mass of both densities

    Returns:
        KL(p || q) estimate
    """
    x = grid.nodes()
    with np.errstate(over="ignore", invalid="ignore"):
        lp = np.asarray(log_p(x), dtype=np.float64)
        lq = np.asarray(log_q(x), dtype=np.float64)
        p = np.exp(lp)
    if np.any(np.isnan(lp)) or np.any(np.isnan(lq)) or not np.all(np.isfinite(p)):
        raise NumericError("non-finite density value on quadrature grid")
    support = p > 0
    if np.any(support & ~np.isfinite(lq)):
        raise NumericError("log_q is non-finite where p has mass")
    integrand = np.where(support, p * (lp - np.where(support, lq, 0.0)), 0.0)
    if grid.points % 2 == 1:
        return float(integrate.simpson(integrand, x=x))
    return float(integrate.trapezoid(integrand, x=x))


def finite_diff_grad(f: Callable[[np.ndarray], float], x: ArrayLike, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Args:
        f: Scalar function of an array shaped like x
        x: Evaluation point
        h: Step size

    Returns:
        Array shaped like x with (f(x + h e_i) - f(x - h e_i)) / 2h
    """
    x_arr = np.array(x, dtype=np.float64)
    flat = x_arr.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x_arr))
        flat[i] = orig - h
        f_minus = float(f(x_arr))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value while differencing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x_arr.shape)


@dataclass
class GradCheckReport:
    """Analytic vs numeric gradient comparison."""

    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float = field(default=0.0)

    def __post_init__(self):
        if self.analytic.shape != self.numeric.shape:
            raise ContractError(
                f"gradient shapes differ: {self.analytic.shape} vs {self.numeric.shape}"
            )

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold


def compare_gradients(analytic: ArrayLike, numeric: ArrayLike,
                      floor: float = GRAD_FLOOR) -> GradCheckReport:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    report = GradCheckReport(analytic=a, numeric=n)
    if a.size:
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        report.max_rel_error = float(np.max(np.abs(a - n) / denom))
    return report
