"""Score distributions for same/different environments and decision thresholds.

Same-environment correlation scores follow a minimum-type Gumbel (extreme
value) law, cross-environment scores a generalized Gaussian. A false
positive is an authentic recording rejected because its score fell below
the threshold, so ``FPR(T)`` is the extreme-value CDF at ``T`` and
``FNR(T)`` the generalized-Gaussian survival function at ``T``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, gammaln
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, NumericalError, check_fraction, check_scores

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EvdParams:
    mu: float
    delta: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.delta > 0 and np.isfinite(self.delta)):
            raise InputError(f"invalid extreme-value parameters mu={self.mu}, delta={self.delta}")


@dataclass(frozen=True)
class GgdParams:
    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.alpha > 0 and self.beta > 0):
            raise InputError(
                f"invalid generalized-Gaussian parameters mu={self.mu}, "
                f"alpha={self.alpha}, beta={self.beta}"
            )


@dataclass(frozen=True)
class ThresholdSpec:
    mode: str           # "min-combined-error" or "fpr-constrained"
    parameter: float    # lambda or tau
    T: float
    achieved_fpr: float
    achieved_fnr: float

    @property
    def combined_error(self):
        if self.mode == "min-combined-error":
            return self.parameter * self.achieved_fpr + (1.0 - self.parameter) * self.achieved_fnr
        return 0.5 * (self.achieved_fpr + self.achieved_fnr)

    def to_dict(self):
        d = asdict(self)
        d["combined_error"] = self.combined_error
        return d


# -- extreme value ----------------------------------------------------------

def evd_pdf_cdf(params, rho):
    """Density and CDF of the minimum-type Gumbel law at `rho`."""
    z = (np.asarray(rho, dtype=np.float64) - params.mu) / params.delta
    with np.errstate(over="ignore"):
        ez = np.exp(z)
        pdf = np.exp(z - ez) / params.delta
    cdf = -np.expm1(-ez)
    return pdf, cdf


def evd_log_likelihood(params, scores):
    z = (np.asarray(scores, dtype=np.float64) - params.mu) / params.delta
    return float(np.sum(z - np.exp(z)) - z.size * np.log(params.delta))


def evd_sample(params, size, rng=None):
    """Inverse-CDF draws: ``mu + delta * ln(ln(1 / (1 - u)))``."""
    rng = np.random.default_rng(rng)
    u = rng.random(size)
    return params.mu + params.delta * np.log(-np.log1p(-u))


def _evd_weighted_mean(rho, delta):
    w = np.exp((rho - rho.max()) / delta)
    return np.dot(rho, w) / w.sum()


def evd_fit_mle(scores, bracket=(1e-4, 10.0), xtol=1e-10):
    """Maximum-likelihood location and scale of the extreme value law.

    The scale solves ``-delta - mean(rho) + sum(rho e^{rho/delta}) / sum(e^{rho/delta}) = 0``
    by bracketed root finding; the location then follows in closed form as
    ``delta * ln(mean(e^{rho/delta}))``. Exponentials are shifted by
    ``max(rho)`` to stay finite for small `delta`.
    """
    rho = check_scores(scores, "scores")
    mean = rho.mean()

    def score_eq(delta):
        return -delta - mean + _evd_weighted_mean(rho, delta)

    lo, hi = bracket
    f_lo, f_hi = score_eq(lo), score_eq(hi)
    if not (f_lo > 0 > f_hi):
        raise NumericalError(f"no scale root in [{lo}, {hi}] (f={f_lo:.3g}, {f_hi:.3g})")
    delta = brentq(score_eq, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    top = rho.max()
    mu = top + delta * np.log(np.mean(np.exp((rho - top) / delta)))
    return EvdParams(float(mu), float(delta))


# -- generalized Gaussian ---------------------------------------------------

def ggd_pdf_cdf(params, rho):
    """Density and CDF of the generalized Gaussian at `rho`.

    The CDF uses the regularized lower incomplete gamma function:
    ``1/2 + sign(rho - mu) / 2 * P(1/beta, (|rho - mu| / alpha)**beta)``.
    """
    x = np.asarray(rho, dtype=np.float64) - params.mu
    r = (np.abs(x) / params.alpha) ** params.beta
    log_norm = np.log(2.0 * params.alpha / params.beta) + gammaln(1.0 / params.beta)
    pdf = np.exp(-r - log_norm)
    cdf = 0.5 + 0.5 * np.sign(x) * gammainc(1.0 / params.beta, r)
    return pdf, cdf


def ggd_sample(params, size, rng=None):
    rng = np.random.default_rng(rng)
    g = rng.gamma(1.0 / params.beta, 1.0, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return params.mu + sign * params.alpha * g ** (1.0 / params.beta)


def ggd_moment_ratio(shape):
    """``G(x) = Gamma(2/x)**2 / (Gamma(1/x) Gamma(3/x))``, increasing in x."""
    x = np.asarray(shape, dtype=np.float64)
    return np.exp(2.0 * gammaln(2.0 / x) - gammaln(1.0 / x) - gammaln(3.0 / x))


def ggd_fit_moments(scores, shape_range=(0.05, 20.0), tol=1e-8):
    """Method-of-moments generalized-Gaussian fit.

    The shape inverts ``G(beta) = m1**2 / m2`` by bisection over
    `shape_range`, where m1 and m2 are the mean absolute and mean squared
    deviations from the sample mean.
    """
    rho = check_scores(scores, "scores")
    mu = rho.mean()
    dev = np.abs(rho - mu)
    m1 = dev.mean()
    m2 = np.mean(dev ** 2)
    ratio = m1 * m1 / m2
    lo, hi = shape_range
    g_lo, g_hi = ggd_moment_ratio(lo), ggd_moment_ratio(hi)
    if not g_lo <= ratio <= g_hi:
        raise NumericalError(
            f"moment ratio {ratio:.6g} outside G([{lo}, {hi}]) = [{g_lo:.6g}, {g_hi:.6g}]"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ggd_moment_ratio(mid) < ratio:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    alpha = m1 * np.exp(gammaln(1.0 / beta) - gammaln(2.0 / beta))
    return GgdParams(float(mu), float(alpha), float(beta))


# -- error rates and thresholds ---------------------------------------------

def fpr(evd, T):
    """Probability that a same-environment score falls below `T`."""
    return evd_pdf_cdf(evd, T)[1]


def fnr(ggd, T):
    """Probability that a cross-environment score reaches `T` or above."""
    return 1.0 - ggd_pdf_cdf(ggd, T)[1]


def _combined(evd, ggd, lam, T):
    return lam * fpr(evd, T) + (1.0 - lam) * fnr(ggd, T)


def _golden_min(f, a, b, tol=1e-12, max_iter=200):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_threshold(evd, ggd, lam=0.5, grid_points=2001):
    """Threshold in [-1, 1] minimizing ``lam * FPR + (1 - lam) * FNR``.

    A uniform grid locates the basin (ties go to the smaller threshold) and
    golden-section search refines within one grid step either side.
    """
    lam = check_fraction(lam, "lambda")
    grid = np.linspace(-1.0, 1.0, grid_points)
    obj = _combined(evd, ggd, lam, grid)
    i = int(np.argmin(obj))
    step = grid[1] - grid[0]
    a, b = max(-1.0, grid[i] - step), min(1.0, grid[i] + step)
    t_ref = _golden_min(lambda t: float(_combined(evd, ggd, lam, t)), a, b)
    T = t_ref if _combined(evd, ggd, lam, t_ref) < obj[i] else float(grid[i])
    return ThresholdSpec("min-combined-error", lam, float(T),
                         float(fpr(evd, T)), float(fnr(ggd, T)))


def threshold_for_fpr(evd, tau, ggd=None):
    """Closed-form threshold with false-positive rate exactly `tau`.

    ``T = delta * ln(ln(1 / (1 - tau))) + mu``; the achieved FNR is reported
    when `ggd` is given (NaN otherwise).
    """
    tau = check_fraction(tau, "tau", closed_low=False, closed_high=False)
    T = evd.delta * np.log(-np.log1p(-tau)) + evd.mu
    achieved_fnr = float(fnr(ggd, T)) if ggd is not None else float("nan")
    return ThresholdSpec("fpr-constrained", tau, float(T), float(fpr(evd, T)), achieved_fnr)


def histogram_kld(scores, cdf, bins=50, support=(-1.0, 1.0), eps=1e-12):
    """KL divergence from the empirical histogram to a model's bin masses."""
    edges = np.linspace(support[0], support[1], bins + 1)
    counts, _ = np.histogram(np.asarray(scores, dtype=np.float64), bins=edges)
    p = counts / counts.sum()
    q = np.maximum(np.diff(cdf(edges)), eps)
    q = q / q.sum()
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass(frozen=True)
class FitReport:
    evd: EvdParams
    ggd: GgdParams
    threshold: ThresholdSpec
    kld_intra: float
    kld_inter: float
    lam: float

    def to_dict(self):
        return {
            "evd": asdict(self.evd),
            "ggd": asdict(self.ggd),
            "threshold": self.threshold.to_dict(),
            "kld": {"intra": self.kld_intra, "inter": self.kld_inter},
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            th = dict(doc["threshold"])
            th.pop("combined_error", None)
            return cls(EvdParams(**doc["evd"]), GgdParams(**doc["ggd"]), ThresholdSpec(**th),
                       doc["kld"]["intra"], doc["kld"]["inter"], doc["lambda"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed fit document: {exc!r}") from exc


def fit_report(intra, inter, lam=0.5):
    """Fit both score laws, pick the optimal threshold and report goodness of fit."""
    evd = evd_fit_mle(intra)
    ggd = ggd_fit_moments(inter)
    threshold = optimal_threshold(evd, ggd, lam)
    kld_intra = histogram_kld(intra, lambda x: evd_pdf_cdf(evd, x)[1])
    kld_inter = histogram_kld(inter, lambda x: ggd_pdf_cdf(ggd, x)[1])
    return FitReport(evd, ggd, threshold, kld_intra, kld_inter, float(lam))


class ThresholdEstimator(BaseEstimator):
    """Learn the forged/as-claimed decision threshold from labelled scores.

    Parameters
    ----------
    lam : float, default=0.5
        Weight of the false-positive rate in the combined error.
    tau : float or None
        If set, use the threshold whose false-positive rate equals `tau`
        instead of minimizing the combined error.

    Attributes
    ----------
    evd_, ggd_ : fitted score distributions
    threshold_ : ThresholdSpec
    report_ : FitReport
    """

    def __init__(self, lam=0.5, tau=None):
        self.lam = lam
        self.tau = tau

    def fit(self, X, y):
        """`X`: correlation scores; `y`: 1 for same-environment pairs, 0 otherwise."""
        scores = np.asarray(X, dtype=np.float64).ravel()
        y = np.asarray(y).ravel()
        if scores.shape != y.shape:
            raise InputError("X and y must have the same length")
        self.report_ = fit_report(scores[y == 1], scores[y == 0], self.lam)
        self.evd_ = self.report_.evd
        self.ggd_ = self.report_.ggd
        if self.tau is None:
            self.threshold_ = self.report_.threshold
        else:
            self.threshold_ = threshold_for_fpr(self.evd_, self.tau, self.ggd_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return np.asarray(X, dtype=np.float64) - self.threshold_.T

    def predict(self, X):
        """1 where the score indicates a forgery (below the threshold)."""
        return (self.decision_function(X) < 0).astype(int)
