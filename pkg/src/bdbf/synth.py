"""Synthetic scenes with known ground truth.

A scene draws smooth random basis maps, a weight vector from a known prior,
and latent noise, then samples sparse depth measurements without
replacement from pixels closer than the depth cap. All randomness comes
from independent streams of one seed, so a scene is bit-reproducible and
re-sampling the measurements does not perturb the basis or the noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .basis import BasisMap, RegressionSystem, SparseDepthSet, assemble
from .errors import DimensionError, InputError, SparsityError
from .fitting import GaussianPrior, fit_ml

DEPTH_CAP = 80.0

# stream ids for np.random.default_rng([seed, stream])
_BASIS, _WEIGHTS, _NOISE, _SAMPLING = range(4)


def default_prior(num_bases: int, bias: bool = True) -> GaussianPrior:
    """Bias weight around ln(10 m); remaining weights small and independent."""
    mean = np.zeros(num_bases)
    var = np.full(num_bases, 0.05)
    if bias:
        mean[0] = math.log(10.0)
        var[0] = 0.1
    return GaussianPrior(mean, np.diag(var))


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    num_bases: int = 8
    bias: bool = True
    seed: int = 0
    noise_precision: float = 4.0
    prior_mean: tuple[float, ...] | None = None
    prior_cov: tuple[tuple[float, ...], ...] | None = None
    prior_alpha: float = 1.0
    # int -> number of pixels, float -> fraction of all pixels
    sparsity: int | float = 2000
    smoothness: float = 6.0
    noise_family: str = "gaussian"
    depth_cap: float | None = DEPTH_CAP

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.num_bases < 1:
            raise DimensionError("height, width and num_bases must be positive")
        if self.bias and self.num_bases < 1:
            raise DimensionError("bias needs at least one basis")
        if not self.noise_precision > 0.0:
            raise InputError("noise precision must be positive (math.inf disables noise)")
        if self.noise_family not in ("gaussian", "laplace"):
            raise InputError(f"unknown noise family {self.noise_family!r}")
        if not self.prior_alpha > 0.0:
            raise InputError("prior_alpha must be positive")
        if self.smoothness < 0.0:
            raise InputError("smoothness must be non-negative")
        self.resolve_count(self.sparsity)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def resolve_count(self, level: int | float) -> int:
        return resolve_level(level, self.n_pixels)

    def prior(self) -> GaussianPrior:
        if self.prior_mean is None and self.prior_cov is None:
            return default_prior(self.num_bases, self.bias)
        base = default_prior(self.num_bases, self.bias)
        mean = base.mean if self.prior_mean is None else np.asarray(self.prior_mean, float)
        cov = base.cov if self.prior_cov is None else np.asarray(self.prior_cov, float)
        return GaussianPrior(mean, cov)


def resolve_level(level: int | float, n_pixels: int) -> int:
    """Measurement count for a sparsity level given as count (int) or fraction (float)."""
    if isinstance(level, (bool, np.bool_)):
        raise SparsityError("sparsity level must be a number")
    if isinstance(level, (int, np.integer)):
        count = int(level)
    else:
        f = float(level)
        if not (0.0 <= f <= 1.0):
            raise SparsityError(f"sparsity fraction must lie in [0, 1], got {f}")
        count = int(round(f * n_pixels))
    if count < 0 or count > n_pixels:
        raise SparsityError(f"sparsity count {count} outside [0, {n_pixels}]")
    return count


@dataclass(frozen=True, eq=False)
class SynthScene:
    config: SynthConfig
    basis: BasisMap
    w_true: np.ndarray
    latent_true: np.ndarray
    depth_true: np.ndarray
    sparse: SparseDepthSet
    # eligible pixels (flat indices, depth < cap) in sampling order
    sample_order: np.ndarray = field(repr=False)

    @property
    def eligible(self) -> int:
        return self.sample_order.size

    def measurements(self, count: int) -> SparseDepthSet:
        if count > self.sample_order.size:
            raise SparsityError(
                f"requested {count} measurements but only {self.sample_order.size} pixels are below the depth cap"
            )
        idx = self.sample_order[:count]
        w = self.config.width
        return SparseDepthSet(idx // w, idx % w, self.depth_true.reshape(-1)[idx])

    def system(self) -> RegressionSystem:
        return assemble(self.basis, self.sparse)


def smooth_basis(rng: np.random.Generator, height: int, width: int, num_bases: int,
                 bias: bool, smoothness: float) -> BasisMap:
    """Low-pass filtered Gaussian noise channels, each standardised to zero mean, unit variance."""
    values = np.empty((height, width, num_bases))
    start = 0
    if bias:
        values[:, :, 0] = 1.0
        start = 1
    for c in range(start, num_bases):
        ch = rng.standard_normal((height, width))
        if smoothness > 0.0:
            ch = ndimage.gaussian_filter(ch, sigma=smoothness, mode="wrap")
        ch -= ch.mean()
        sd = ch.std()
        values[:, :, c] = ch / sd if sd > 0.0 else ch
    return BasisMap(values, has_bias=bias)


def _noise(rng: np.random.Generator, cfg: SynthConfig, shape) -> np.ndarray:
    if math.isinf(cfg.noise_precision):
        return np.zeros(shape)
    var = 1.0 / cfg.noise_precision
    if cfg.noise_family == "gaussian":
        return rng.standard_normal(shape) * math.sqrt(var)
    return rng.laplace(0.0, math.sqrt(var / 2.0), size=shape)


def generate(cfg: SynthConfig) -> SynthScene:
    def stream(k: int) -> np.random.Generator:
        return np.random.default_rng([cfg.seed, k])

    basis = smooth_basis(stream(_BASIS), cfg.height, cfg.width, cfg.num_bases, cfg.bias, cfg.smoothness)
    prior = cfg.prior()
    if prior.n_bases != cfg.num_bases:
        raise DimensionError("prior dimension does not match num_bases")
    rng_w = stream(_WEIGHTS)
    w_true = prior.mean + np.linalg.cholesky(prior.cov) @ rng_w.standard_normal(cfg.num_bases) / math.sqrt(
        cfg.prior_alpha
    )
    shape = (cfg.height, cfg.width)
    latent = (basis.rows() @ w_true).reshape(shape) + _noise(stream(_NOISE), cfg, shape)
    depth = np.exp(latent)
    flat = depth.reshape(-1)
    if cfg.depth_cap is None:
        eligible = np.arange(flat.size)
    else:
        eligible = np.flatnonzero(flat < cfg.depth_cap)
    order = stream(_SAMPLING).permutation(eligible)
    count = cfg.resolve_count(cfg.sparsity)
    scene = SynthScene(cfg, basis, w_true, latent, depth, SparseDepthSet.empty(), order)
    object.__setattr__(scene, "sparse", scene.measurements(count))
    return scene


def sample_sparsity_sweep(scene: SynthScene, levels) -> list[SparseDepthSet]:
    """Nested measurement sets: each level is a prefix of the same sampling order."""
    counts = [scene.config.resolve_count(lv) for lv in levels]
    return [scene.measurements(c) for c in counts]


def brute_force_posterior(sys: RegressionSystem, prior: GaussianPrior, alpha: float, beta: float):
    """Posterior ``(m, Sigma)`` by conditioning the joint Gaussian of ``(w, z)``.

    Independent of the precision-form update: it only uses the prior
    covariance and the marginal covariance of ``z``. Restricted to tiny
    systems (M <= 3, N <= 8); meant as a test oracle.
    """
    n, m = sys.design.shape
    if m > 3 or n > 8:
        raise DimensionError(f"brute-force oracle limited to M<=3, N<=8 (got M={m}, N={n})")
    p = np.asarray(prior.cov) / alpha
    m0 = np.asarray(prior.mean)
    if n == 0:
        return m0.copy(), p.copy()
    phi = sys.design
    cross = p @ phi.T  # cov(w, z)
    cov_z = phi @ p @ phi.T + np.eye(n) / beta
    gain = np.linalg.solve(cov_z, cross.T).T
    mean = m0 + gain @ (sys.targets - phi @ m0)
    cov = p - gain @ cross.T
    return mean, 0.5 * (cov + cov.T)


def ml_weight_samples(configs) -> np.ndarray:
    """ML weights of each scene's own measurements, one row per config."""
    out = []
    for cfg in configs:
        scene = generate(cfg)
        out.append(fit_ml(scene.system()).w_ml)
    return np.array(out)
