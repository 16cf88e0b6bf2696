"""Two-Gaussian grey-value model and soft-tissue/bone voxel classification.

The grey values inside a vertebra's search region form a bimodal
histogram (soft tissue below, bone above).  An EM fit of a two-component
Gaussian mixture yields the class intersection; empirical offsets around
it define a low/high threshold band, and voxels falling between the two
thresholds are resolved by a local neighborhood-mean criterion that
adapts the decision to the local noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .errors import DegenerateFitError, GeometryError
from .volgrid import Volume

# responsibilities below this weight mean a component has died
_MIN_WEIGHT = 1e-9
# sigmas are floored at this fraction of the data range so that exactly
# constant sub-populations (noiseless synthetic data) cannot collapse the fit
_SIGMA_FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class GaussianPair:
    """Two mixture components ordered by mean (soft tissue, then bone)."""

    w1: float
    mu1: float
    sigma1: float
    w2: float
    mu2: float
    sigma2: float

    def __post_init__(self):
        if not (0.0 < self.w1 < 1.0 and 0.0 < self.w2 < 1.0):
            raise GeometryError("component weights must lie in (0, 1)")
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise GeometryError("component weights must sum to 1")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise GeometryError("component sigmas must be positive")
        if not self.mu1 < self.mu2:
            raise GeometryError("components must be ordered mu1 < mu2")


@dataclass(frozen=True)
class ThresholdBand:
    """Low/high thresholds around the class intersection x_star."""

    x_star: float
    low: float
    high: float

    def __post_init__(self):
        if not self.low <= self.x_star <= self.high:
            raise GeometryError("band must satisfy low <= x_star <= high")

    @classmethod
    def from_fit(cls, fit: GaussianPair, delta_low=None, delta_high=None):
        """Band at the intersection with empirical offsets.

        Offsets default to half the smaller fitted sigma, which scales
        them with the noise level.  Offsets must not cross the modes.
        """
        x = gaussian_intersection(fit)
        if delta_low is None:
            delta_low = 0.5 * min(fit.sigma1, fit.sigma2)
        if delta_high is None:
            delta_high = 0.5 * min(fit.sigma1, fit.sigma2)
        if delta_low < 0 or delta_high < 0:
            raise GeometryError("offsets must be non-negative")
        low, high = x - delta_low, x + delta_high
        if not (fit.mu1 < low and high < fit.mu2):
            raise GeometryError("offsets cross the fitted modes")
        return cls(x, low, high)


def _em_run(values, init, sigma_floor, tol=1e-8, max_iter=500):
    """EM for a 2-component 1D Gaussian mixture from a given split init.

    Convergence: log-likelihood improvement below ``tol`` relative to the
    log-likelihood magnitude.
    """
    w = np.array(init[0], dtype=np.float64)
    mu = np.array(init[1], dtype=np.float64)
    sigma = np.maximum(np.array(init[2], dtype=np.float64), sigma_floor)
    n = values.size
    prev_ll = -np.inf
    for _ in range(max_iter):
        # E step in log space
        log_pdf = (-0.5 * ((values[:, None] - mu) / sigma) ** 2
                   - np.log(sigma) - 0.5 * np.log(2 * np.pi) + np.log(w))
        m = log_pdf.max(axis=1, keepdims=True)
        log_norm = m[:, 0] + np.log(np.exp(log_pdf - m).sum(axis=1))
        ll = float(log_norm.sum())
        if ll < prev_ll - 1e-6 * max(1.0, abs(prev_ll)):
            raise AssertionError("EM log-likelihood decreased")
        resp = np.exp(log_pdf - log_norm[:, None])
        # M step
        nk = resp.sum(axis=0)
        if nk.min() / n < _MIN_WEIGHT:
            raise DegenerateFitError("a mixture component died during EM")
        w = nk / n
        mu = (resp * values[:, None]).sum(axis=0) / nk
        var = (resp * (values[:, None] - mu) ** 2).sum(axis=0) / nk
        sigma = np.sqrt(np.maximum(var, sigma_floor ** 2))
        if ll - prev_ll < tol * max(1.0, abs(ll)) and np.isfinite(prev_ll):
            prev_ll = ll
            break
        prev_ll = ll
    order = np.argsort(mu)
    w, mu, sigma = w[order], mu[order], sigma[order]
    return prev_ll, w, mu, sigma


def fit_two_gaussians(vol: Volume, region) -> GaussianPair:
    """EM fit of two Gaussians to the grey values inside a search region.

    Initialized from an Otsu split of the region histogram, plus quartile
    splits as further deterministic starts: Otsu alone can isolate a
    sparse far mode (dense compact bone) instead of the soft/trabecular
    structure.  The highest final log-likelihood wins, Otsu on ties.

    Raises DegenerateFitError for regions that cannot support a bimodal
    model (constant values, or a component collapsing).
    """
    mask = region.voxel_mask(vol) if hasattr(region, "voxel_mask") else region
    values = np.asarray(vol.data[mask.bits], dtype=np.float64)
    if values.size < 1000:
        raise GeometryError("region must contain at least 1000 voxels")
    rng = float(values.max() - values.min())
    if rng <= 0.0:
        raise DegenerateFitError("constant-valued region is not bimodal")
    sigma_floor = max(_SIGMA_FLOOR_FRACTION * rng, 1e-12)

    def split_init(threshold):
        lo, hi = values[values <= threshold], values[values > threshold]
        if lo.size == 0 or hi.size == 0:
            return None
        return ((lo.size / values.size, hi.size / values.size),
                (float(lo.mean()), float(hi.mean())),
                (float(lo.std()), float(hi.std())))

    inits = []
    otsu = split_init(threshold_otsu(values, nbins=256))
    if otsu is not None:
        inits.append(otsu)
    for q in (25.0, 50.0, 75.0):
        cand = split_init(float(np.percentile(values, q)))
        if cand is not None and cand not in inits:
            inits.append(cand)
    if not inits:
        raise DegenerateFitError("region histogram cannot be split")

    best = None
    for init in inits:
        try:
            result = _em_run(values, init, sigma_floor)
        except DegenerateFitError:
            continue
        if best is None or result[0] > best[0] + 1e-9:
            best = result
    if best is None:
        raise DegenerateFitError("both EM starts collapsed")

    _, w, mu, sigma = best
    if sigma.min() < 1e-6 * rng:
        raise DegenerateFitError("sigma collapse: input is not bimodal")
    if not mu[0] < mu[1]:
        raise DegenerateFitError("fitted means are not separated")
    return GaussianPair(float(w[0]), float(mu[0]), float(sigma[0]),
                        float(w[1]), float(mu[1]), float(sigma[1]))


def _intersection_raw(w1, mu1, sigma1, w2, mu2, sigma2):
    """Roots of w1*N(mu1,s1) = w2*N(mu2,s2), as a list of x values."""
    s1, s2 = sigma1 ** 2, sigma2 ** 2
    if abs(s1 - s2) < 1e-15 * (s1 + s2):
        # equal variances: the log ratio is linear in x
        b = 2.0 * (mu2 - mu1) * s1
        c = (mu1 ** 2 - mu2 ** 2) * s1 - 2.0 * s1 * s1 * np.log(
            (w1 * sigma2) / (w2 * sigma1))
        return [-c / b]
    a = s2 - s1
    b = 2.0 * (mu2 * s1 - mu1 * s2)
    c = (mu1 ** 2 * s2 - mu2 ** 2 * s1
         - 2.0 * s1 * s2 * np.log((w1 * sigma2) / (w2 * sigma1)))
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return []
    r = np.sqrt(disc)
    return [(-b - r) / (2.0 * a), (-b + r) / (2.0 * a)]


def gaussian_intersection(g: GaussianPair) -> float:
    """The weighted-density crossing point between the two modes.

    Solves the log-quadratic w1*N(x; mu1, s1) = w2*N(x; mu2, s2) and
    returns the root inside (mu1, mu2) where dominance flips from the
    lower to the upper component.
    """
    roots = [x for x in _intersection_raw(g.w1, g.mu1, g.sigma1,
                                          g.w2, g.mu2, g.sigma2)
             if g.mu1 < x < g.mu2]
    if not roots:
        raise DegenerateFitError("no density crossing between the modes")
    if len(roots) == 1:
        return float(roots[0])

    def log_ratio(x):
        return (np.log(g.w1 / g.sigma1) - 0.5 * ((x - g.mu1) / g.sigma1) ** 2
                - np.log(g.w2 / g.sigma2) + 0.5 * ((x - g.mu2) / g.sigma2) ** 2)

    for x in sorted(roots):
        if log_ratio(0.5 * (g.mu1 + x)) > 0:
            return float(x)
    return float(sorted(roots)[0])


def neighborhood_mean(vol: Volume, radius=1):
    """Mean over the (2r+1)^3 neighborhood of every voxel, borders clamped."""
    size = 2 * int(radius) + 1
    return ndimage.uniform_filter(vol.data.astype(np.float64), size=size,
                                  mode="nearest")


def bone_map(vol: Volume, band: ThresholdBand, radius=1):
    """Boolean bone classification of every voxel (vectorized rule).

    Below ``low`` is soft tissue, above ``high`` is bone; in the transition
    band a voxel is bone iff its local neighborhood mean exceeds x_star.
    """
    data = vol.data
    local = neighborhood_mean(vol, radius)
    return (data > band.high) | ((data >= band.low) & (local > band.x_star))


def classify_voxel(vol: Volume, index, band: ThresholdBand, radius=1):
    """Classify one voxel as 'soft' or 'bone' (same rule as bone_map)."""
    ix, iy, iz = index
    value = float(vol.data[ix, iy, iz])
    if value < band.low:
        return "soft"
    if value > band.high:
        return "bone"
    r = int(radius)
    sl = tuple(slice(max(0, i - r), min(n, i + r + 1))
               for i, n in zip((ix, iy, iz), vol.dims))
    block = vol.data[sl].astype(np.float64)
    # clamped neighborhood: out-of-volume positions replicate the edge voxel
    pads = [(r - (i - max(0, i - r)), r - (min(n - 1, i + r) - i))
            for i, n in zip((ix, iy, iz), vol.dims)]
    block = np.pad(block, pads, mode="edge")
    return "bone" if block.mean() > band.x_star else "soft"
