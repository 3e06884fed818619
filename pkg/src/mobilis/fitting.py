"""Maximum-likelihood fitting of the two mobility laws on truncated supports.

Waiting times follow a truncated exponential density

    p(t) = rate * exp(-rate*t) / (exp(-rate*t_lo) - exp(-rate*t_hi)),

displacements a truncated power law with exponential cutoff

    p(r) proportional to (r + r0)^(-beta) * exp(-r/kappa)  on [r_lo, r_hi],

normalized numerically. The exponential MLE is a monotone 1-D root find on
the score (the truncated mean minus the sample mean); the displacement MLE
is a quasi-Newton search over (beta, log kappa) with adaptive-quadrature
normalization at every step, polished until the parameter step falls below
1e-8 in relative terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from .errors import (BadSupportError, ConfigError, DegenerateDataError, NoDataError,
                     OutOfSupportError)

SCORE_TOL = 1e-10          # |truncated mean - sample mean| at the root, minutes
MAX_SCORE_ITER = 200
RATE_FLOOR = 1e-9          # flat-data limit; fitted rates never go below this
PARAM_STEP_TOL = 1e-9      # final simplex size in (beta, ln kappa) space

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_N_PANELS = 2048


def _psi(z: float) -> float:
    """1/z - 1/(e^z - 1), the truncated-exponential mean kernel; stable."""
    if z < 1e-2:
        return 0.5 - z / 12.0 + z ** 3 / 720.0
    if z > 700.0:
        return 1.0 / z
    return 1.0 / z - 1.0 / math.expm1(z)


def truncated_exp_mean(rate: float, lo: float, hi: float) -> float:
    if math.isinf(hi):
        return lo + 1.0 / rate
    d = hi - lo
    return lo + d * _psi(rate * d)


@dataclass(eq=False)
class ExponentialModel:
    """Exponential waiting-time law truncated to [t_lo, t_hi] minutes."""

    rate: float                # per minute
    t_lo: float = 0.0
    t_hi: float = math.inf

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise BadSupportError(f"rate must be positive and finite, got {self.rate}")
        if not (0 <= self.t_lo < self.t_hi):
            raise BadSupportError(f"bad support {self.t_lo}..{self.t_hi}")

    @property
    def support(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)

    def _span_mass(self) -> float:
        # 1 - exp(-rate*(t_hi-t_lo)), the in-support mass before shifting
        if math.isinf(self.t_hi):
            return 1.0
        return -math.expm1(-self.rate * (self.t_hi - self.t_lo))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.rate * np.exp(-self.rate * (x - self.t_lo)) / self._span_mass()

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        return math.log(self.rate) - self.rate * (x - self.t_lo) - math.log(self._span_mass())

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.expm1(-self.rate * (x - self.t_lo)) / self._span_mass()

    def mean(self) -> float:
        return truncated_exp_mean(self.rate, self.t_lo, self.t_hi)

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        return self.t_lo - np.log1p(-u * self._span_mass()) / self.rate

    def log_likelihood(self, x) -> float:
        return float(np.sum(self.log_pdf(x)))


@dataclass(eq=False)
class TruncatedPowerLawModel:
    """Power law with exponential cutoff, truncated to [r_lo, r_hi] meters."""

    beta: float
    kappa: float               # meters; may be inf (pure power law)
    r0: float = 0.0
    r_lo: float = 0.0
    r_hi: float = math.inf

    def __post_init__(self):
        if self.beta < 0 or not math.isfinite(self.beta):
            raise BadSupportError(f"beta must be >= 0, got {self.beta}")
        if not self.kappa > 0:
            raise BadSupportError(f"kappa must be positive, got {self.kappa}")
        if self.r0 < 0:
            raise BadSupportError(f"r0 must be >= 0, got {self.r0}")
        if not (0 <= self.r_lo < self.r_hi < math.inf):
            raise BadSupportError(f"support must be finite, got {self.r_lo}..{self.r_hi}")
        if self.r_lo + self.r0 == 0 and self.beta >= 1:
            raise BadSupportError(
                "non-normalizable head: use r0 > 0 or r_lo > 0 for beta >= 1")

    @property
    def support(self) -> tuple[float, float]:
        return (self.r_lo, self.r_hi)

    def _log_weight(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            lw = -self.beta * np.log(r + self.r0)
        if math.isfinite(self.kappa):
            lw = lw - r / self.kappa
        return lw

    @cached_property
    def log_norm(self) -> float:
        """log of the normalization integral, by adaptive quadrature."""
        return _log_norm(self.beta, self.kappa, self.r0, self.r_lo, self.r_hi)

    def pdf(self, x):
        return np.exp(self._log_weight(x) - self.log_norm)

    def log_pdf(self, x):
        return self._log_weight(x) - self.log_norm

    @cached_property
    def _panels(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Composite Gauss-Legendre panel masses for CDF evaluation."""
        if self.r_lo > 0:
            knots = np.geomspace(self.r_lo, self.r_hi, _N_PANELS + 1)
        else:
            head = self.r0 if self.r0 > 0 else self.r_hi * 1e-9
            knots = np.concatenate(([0.0], np.geomspace(min(head, self.r_hi / 2),
                                                        self.r_hi, _N_PANELS)))
        knots[0], knots[-1] = self.r_lo, self.r_hi
        mid = 0.5 * (knots[:-1] + knots[1:])
        half = 0.5 * np.diff(knots)
        pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        masses = (np.exp(self._log_weight(pts) - self.log_norm) @ _GL_WEIGHTS) * half
        if self.r_lo + self.r0 == 0 and self.beta > 0:
            # integrable singularity at 0: Gauss-Legendre underestimates the
            # head panel, so integrate it adaptively instead
            masses[0] = integrate.quad(self.pdf, knots[0], knots[1],
                                       limit=100)[0]
        cum = np.concatenate(([0.0], np.cumsum(masses)))
        return knots, cum, float(cum[-1])

    def cdf(self, x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        knots, cum, total = self._panels
        j = np.clip(np.searchsorted(knots, arr, side="right") - 1, 0, len(knots) - 2)
        a = knots[j]
        half = 0.5 * (arr - a)
        pts = (a + half)[:, None] + half[:, None] * _GL_NODES[None, :]
        partial = (np.exp(self._log_weight(pts) - self.log_norm) @ _GL_WEIGHTS) * half
        out = np.clip((cum[j] + partial) / total, 0.0, 1.0)
        return float(out[0]) if np.ndim(x) == 0 else out

    def log_likelihood(self, x) -> float:
        return float(np.sum(self.log_pdf(x)))


Model = ExponentialModel | TruncatedPowerLawModel


def _quad_points(kappa: float, r0: float, lo: float, hi: float) -> list[float] | None:
    """Breakpoints so adaptive quadrature never misses a sharp decay at lo."""
    pts: list[float] = []
    scale = kappa if math.isfinite(kappa) else hi
    step = min(scale, max(lo + r0, (hi - lo) * 1e-6))
    while lo + step < hi and len(pts) < 40:
        pts.append(lo + step)
        step *= 3.0
    return pts or None


def _log_norm(beta: float, kappa: float, r0: float, lo: float, hi: float) -> float:
    inv_k = 0.0 if math.isinf(kappa) else 1.0 / kappa
    pts = _quad_points(kappa, r0, lo, hi)

    def log_w(r):
        with np.errstate(divide="ignore"):
            return -beta * np.log(r + r0) - r * inv_k

    if lo + r0 > 0:
        ref = float(log_w(lo))
        val, _ = integrate.quad(lambda r: math.exp(log_w(r) - ref), lo, hi,
                                points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)
        return ref + math.log(val)
    # integrable singularity at r=0 (beta < 1 guaranteed by the model guard)
    val, _ = integrate.quad(lambda r: r ** (-beta) * math.exp(-r * inv_k), lo, hi,
                            points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)
    return math.log(val)


def _plc_moments(beta: float, kappa: float, r0: float, lo: float, hi: float):
    """Model expectations of log(r+r0), r and 1/(r+r0), by quadrature."""
    inv_k = 0.0 if math.isinf(kappa) else 1.0 / kappa
    ref = -beta * math.log(lo + r0) - lo * inv_k
    pts = _quad_points(kappa, r0, lo, hi)

    def w(r):
        return math.exp(-beta * math.log(r + r0) - r * inv_k - ref)

    def moment(f):
        return integrate.quad(lambda r: f(r) * w(r), lo, hi, points=pts,
                              limit=200, epsabs=1e-13, epsrel=1e-11)[0]

    z = moment(lambda r: 1.0)
    e_log = moment(lambda r: math.log(r + r0)) / z
    e_r = moment(lambda r: r) / z
    e_inv = moment(lambda r: 1.0 / (r + r0)) / z
    return e_log, e_r, e_inv


@dataclass
class FitResult:
    """Fitted model with sample count, likelihood and goodness of fit."""

    model: Model
    n_samples: int
    log_likelihood: float
    ks_statistic: float | None
    converged: bool
    iterations: int

    def to_json_dict(self) -> dict:
        if isinstance(self.model, ExponentialModel):
            name = "exponential"
            params = {"lambda": self.model.rate}
        else:
            name = "power_law_cutoff"
            params = {"beta": self.model.beta, "kappa": self.model.kappa,
                      "r0": self.model.r0}
        lo, hi = self.model.support
        return {"model": name, "params": params, "support": [lo, hi],
                "n": self.n_samples, "log_likelihood": self.log_likelihood,
                "ks": self.ks_statistic, "converged": self.converged}


def fit_exponential(samples, support: tuple[float, float] = (0.0, math.inf)) -> FitResult:
    """MLE of the truncated exponential rate by a monotone score root find."""
    lo, hi = support
    if not (0 <= lo < hi):
        raise ConfigError(f"bad support {lo}..{hi}")
    x = np.asarray(samples, dtype=float)
    x = x[(x >= lo) & (x <= hi)]
    n = len(x)
    if n < 2:
        raise NoDataError(f"need >= 2 samples inside support, got {n}")
    sample_mean = float(x.mean())
    if np.all(x == x[0]) and (x[0] == lo or x[0] == hi):
        raise DegenerateDataError("all samples equal and at a support edge")
    if sample_mean <= lo:
        raise DegenerateDataError("sample mean at the lower support edge")

    iterations = 0
    converged = True
    if math.isinf(hi):
        rate = 1.0 / (sample_mean - lo)
    else:
        def score(r: float) -> float:
            return truncated_exp_mean(r, lo, hi) - sample_mean

        if score(RATE_FLOOR) <= 0.0:
            # flatter than uniform: the MLE sits at the rate floor
            rate = RATE_FLOOR
        else:
            r_hi = 1.0 / max(sample_mean - lo, 1e-300)
            while score(r_hi) > 0.0:
                r_hi *= 4.0
                iterations += 1
                if iterations > 60:
                    raise DegenerateDataError("score root bracketing failed")
            rate, info = optimize.brentq(
                score, RATE_FLOOR, r_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                maxiter=MAX_SCORE_ITER, full_output=True)
            iterations += info.iterations
            converged = bool(info.converged) and abs(score(rate)) < SCORE_TOL

    model = ExponentialModel(rate, lo, hi)
    ks = float(ks_statistic(x, model)) if converged else None
    return FitResult(model, n, model.log_likelihood(x), ks, converged, iterations)


def fit_power_law_cutoff(samples, support: tuple[float, float], r0: float = 0.0,
                         *, r0_free: bool = False,
                         fix_beta: float | None = None) -> FitResult:
    """MLE of (beta, kappa) and optionally r0 for the displacement law."""
    lo, hi = support
    if not (0 <= lo < hi):
        raise ConfigError(f"bad support {lo}..{hi}")
    if math.isinf(hi):
        raise ConfigError("r_hi must be finite (use the observed maximum)")
    x = np.asarray(samples, dtype=float)
    x = x[(x >= lo) & (x <= hi)]
    n = len(x)
    if n < 10:
        raise NoDataError(f"need >= 10 samples inside support, got {n}")
    if lo == 0 and r0 == 0 and not r0_free and (fix_beta is None or fix_beta >= 1):
        raise BadSupportError("support contains 0 with r0=0: set r0 > 0 or r_lo > 0")

    sum_r = float(x.sum())
    mean_r = sum_r / n

    free: list[str] = []
    if fix_beta is None:
        free.append("beta")
    free.append("log_kappa")
    if r0_free:
        free.append("r0_scaled")

    def unpack(z: np.ndarray) -> tuple[float, float, float]:
        i = 0
        beta = fix_beta
        if fix_beta is None:
            beta = z[i]
            i += 1
        kappa = math.exp(z[i])
        i += 1
        r_off = (z[i] * hi) if r0_free else r0
        return float(beta), kappa, float(r_off)

    fixed_sum_log = None if r0_free else float(np.log(x + r0).sum())

    def nll_grad(z: np.ndarray) -> tuple[float, np.ndarray]:
        beta, kappa, r_off = unpack(z)
        if beta < 0 or beta > 30 or r_off < 0 or not math.isfinite(kappa):
            return 1e30, np.zeros(len(z))
        if lo + r_off == 0 and beta >= 1:
            return 1e30, np.zeros(len(z))
        sum_log = (fixed_sum_log if fixed_sum_log is not None
                   else float(np.log(x + r_off).sum()))
        log_z = _log_norm(beta, kappa, r_off, lo, hi)
        value = beta * sum_log + sum_r / kappa + n * log_z
        e_log, e_r, e_inv = _plc_moments(beta, kappa, r_off, lo, hi)
        grad = []
        if fix_beta is None:
            grad.append(sum_log - n * e_log)
        grad.append((n * e_r - sum_r) / kappa)
        if r0_free:
            sum_inv = float((1.0 / (x + r_off)).sum())
            grad.append(beta * (sum_inv - n * e_inv) * hi)
        return value, np.asarray(grad)

    z0 = []
    bounds = []
    if fix_beta is None:
        z0.append(1.0)
        bounds.append((0.0, 25.0))
    z0.append(math.log(max(mean_r, lo + 1e-6 * (hi - lo))))
    bounds.append((math.log(max((hi - lo) * 1e-7, 1e-12)), math.log(hi * 50.0)))
    if r0_free:
        z0.append(max(r0, 1e-6 * hi) / hi)
        bounds.append((0.0, 10.0))

    warm = optimize.minimize(nll_grad, np.asarray(z0), jac=True, method="L-BFGS-B",
                             bounds=bounds, options={"maxiter": 500, "ftol": 1e-15,
                                                     "gtol": 1e-12})
    polish = optimize.minimize(lambda z: nll_grad(z)[0], warm.x, method="Nelder-Mead",
                               options={"xatol": PARAM_STEP_TOL, "fatol": 1e-7,
                                        "maxiter": 4000, "maxfev": 8000})
    best = polish.x if polish.fun <= warm.fun else warm.x
    converged = bool(polish.success or warm.success)
    iterations = int(warm.nit + polish.nit)

    beta, kappa, r_off = unpack(np.asarray(best))
    model = TruncatedPowerLawModel(beta, kappa, r_off, lo, hi)
    ks = float(ks_statistic(x, model)) if converged else None
    return FitResult(model, n, model.log_likelihood(x), ks, converged, iterations)


def ks_statistic(samples, model: Model) -> float:
    """Sup distance between the empirical step CDF and the model CDF.

    Both one-sided gaps are evaluated at every sample point.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise NoDataError("no samples")
    cdf = np.asarray(model.cdf(x))
    steps = np.arange(1, n + 1) / n
    d_plus = float(np.max(steps - cdf))
    d_minus = float(np.max(cdf - (steps - 1.0 / n)))
    return max(d_plus, d_minus, 0.0)


def model_pdf(model: Model, x):
    """Normalized density at x (scalar or array); x must lie in the support."""
    arr = np.asarray(x, dtype=float)
    lo, hi = model.support
    if np.any(arr < lo) or np.any(arr > hi):
        raise OutOfSupportError(f"values outside support {lo}..{hi}")
    out = model.pdf(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def fit_histogram_regression(hist, family: str, r0: float = 0.0) -> Model:
    """Least-squares fit on log-pdf of occupied bins; comparison mode only."""
    centers = np.sqrt(hist.bin_edges[:-1] * hist.bin_edges[1:]) \
        if hist.bin_edges[0] > 0 else 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    mask = hist.counts > 0
    if mask.sum() < 3:
        raise NoDataError("too few occupied bins for histogram regression")
    c = centers[mask]
    logp = np.log(hist.pdf[mask])
    if family == "exponential":
        slope, _ = np.polyfit(c, logp, 1)
        rate = max(-slope, RATE_FLOOR)
        return ExponentialModel(rate, hist.bin_edges[0], hist.cutoff)
    if family == "power_law_cutoff":
        design = np.column_stack([-np.log(c + r0), -c, np.ones(len(c))])
        coef, *_ = np.linalg.lstsq(design, logp, rcond=None)
        beta = max(coef[0], 0.0)
        kappa = 1.0 / coef[1] if coef[1] > 1e-300 else math.inf
        return TruncatedPowerLawModel(beta, kappa, r0,
                                      max(hist.bin_edges[0], 0.0), hist.cutoff)
    raise ConfigError(f"unknown family {family!r}")
