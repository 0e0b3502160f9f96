"""Synthetic radio-map scenarios: emitter spectra, spatial loss fields, noise.

Grid point ``(i, j)`` sits at the physical coordinate ``y = [i, j]`` meters, so a
101 x 101 grid covers a 100 m x 100 m region.  PSD centre frequencies are
1-based band indices (``f in {1, ..., K}``); returned spectra are 0-based arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.ndimage import map_coordinates

from .tensor_core import unfold

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class PsdComponent:
    active: int
    amplitude: float
    center: float
    width: float


@dataclass(frozen=True)
class PsdSpec:
    components: tuple[PsdComponent, ...]

    def validate(self, K: int) -> None:
        if len(self.components) > 3:
            raise ScenarioError("at most three spectral components are supported")
        for c in self.components:
            if c.active not in (0, 1):
                raise ScenarioError(f"active flag must be 0 or 1, got {c.active}")
            if c.amplitude <= 0 or c.width <= 0:
                raise ScenarioError("amplitude and width must be positive")
            if not 1 <= c.center <= K:
                raise ScenarioError(f"center {c.center} outside bands 1..{K}")


@dataclass(frozen=True)
class EmitterSpec:
    location: tuple[float, float]
    pathloss_exponent: float
    psd: PsdSpec


@dataclass(frozen=True)
class ShadowSpec:
    sigma: float = 4.0
    xc: float = 30.0
    gen_resolution: int = 4
    exact: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ScenarioError("sigma must be nonnegative")
        if self.xc <= 0:
            raise ScenarioError("decorrelation distance must be positive")
        if self.gen_resolution < 1:
            raise ScenarioError("gen_resolution must be >= 1")


@dataclass
class ScenarioConfig:
    I: int = 101
    J: int = 101
    K: int = 64
    R: int = 2
    sigma: float = 4.0
    xc: float = 30.0
    eta_range: tuple[float, float] = (2.0, 3.0)
    amp_range: tuple[float, float] = (0.5, 2.0)
    width_range: tuple[float, float] = (2.0, 4.0)
    n_components: int = 3
    p_active: float = 0.5
    min_clearance: float = 0.5
    emitter_height: float = 0.0
    gen_resolution: int = 4
    exact_shadow: bool = False
    pathloss: bool = True
    slf_rank: int | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.I, self.J, self.K, self.R) < 1:
            raise ScenarioError("I, J, K and R must be positive")
        if self.slf_rank is not None and not 1 <= self.slf_rank <= min(self.I, self.J):
            raise ScenarioError("slf_rank must lie in 1..min(I, J)")
        if self.emitter_height < 0:
            raise ScenarioError("emitter_height must be nonnegative")
        self.eta_range = tuple(self.eta_range)
        self.amp_range = tuple(self.amp_range)
        self.width_range = tuple(self.width_range)

    @property
    def shadow(self) -> ShadowSpec:
        return ShadowSpec(self.sigma, self.xc, self.gen_resolution, self.exact_shadow)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    slfs: list[np.ndarray]
    psd: np.ndarray
    map: np.ndarray
    emitters: list[EmitterSpec] = field(default_factory=list)
    seed: int | None = None

    @property
    def R(self) -> int:
        return self.psd.shape[1]

    def slf_matrix(self) -> np.ndarray:
        return np.column_stack([s.ravel(order="F") for s in self.slfs])


def sinc2(x):
    # np.sinc is the normalized sinc sin(pi x) / (pi x)
    return np.sinc(x) ** 2


def gen_psd(spec: PsdSpec, K: int) -> np.ndarray:
    """Sum of squared sinc bumps, ``c(k) = sum_i p_i a_i sinc^2((k - f_i) / w_i)``."""
    spec.validate(K)
    k = np.arange(1, K + 1, dtype=float)
    c = np.zeros(K)
    for comp in spec.components:
        if comp.active:
            c += comp.amplitude * sinc2((k - comp.center) / comp.width)
    return c


def sample_psd_spec(cfg: ScenarioConfig, rng) -> PsdSpec:
    """Draw a PSD spec; all-inactive draws are rejected and redrawn."""
    while True:
        comps = tuple(
            PsdComponent(
                active=int(rng.random() < cfg.p_active),
                amplitude=float(rng.uniform(*cfg.amp_range)),
                center=float(rng.integers(1, cfg.K + 1)),
                width=float(rng.uniform(*cfg.width_range)),
            )
            for _ in range(cfg.n_components)
        )
        if any(c.active for c in comps):
            return PsdSpec(comps)


def exponential_covariance(points: np.ndarray, sigma: float, xc: float) -> np.ndarray:
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    return sigma**2 * np.exp(-d / xc)


def _correlated_normal(points, sigma, xc, rng) -> np.ndarray:
    cov = exponential_covariance(points, sigma, xc)
    jitter = 0.0
    for _ in range(6):
        try:
            chol = linalg.cholesky(cov + jitter * np.eye(len(cov)), lower=True)
            break
        except linalg.LinAlgError:
            jitter = max(jitter * 10, 1e-10 * sigma**2)
    else:
        raise np.linalg.LinAlgError(
            "shadow covariance factorization failed; increase jitter or gen_resolution"
        )
    return chol @ rng.standard_normal(len(cov))


def gen_shadow_field(spec: ShadowSpec, grid: tuple[int, int], rng) -> np.ndarray:
    """Zero-mean Gaussian field with covariance ``sigma^2 exp(-d / xc)`` in dB.

    With ``spec.exact`` (grids up to 64 x 64) the full covariance is factorized.
    Otherwise the field is drawn exactly on a coarse lattice of spacing
    ``gen_resolution`` and bilinearly upsampled.
    """
    I, J = grid
    if spec.sigma == 0:
        return np.zeros((I, J))
    rng = np.random.default_rng(rng)
    if spec.exact or spec.gen_resolution == 1:
        if I * J > 64 * 64:
            raise ScenarioError("exact shadow synthesis is limited to 64 x 64 grids")
        ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
        pts = np.column_stack([ii.ravel(), jj.ravel()]).astype(float)
        return _correlated_normal(pts, spec.sigma, spec.xc, rng).reshape(I, J)

    step = spec.gen_resolution
    ni = -(-(I - 1) // step) + 1
    nj = -(-(J - 1) // step) + 1
    ci, cj = np.meshgrid(np.arange(ni) * step, np.arange(nj) * step, indexing="ij")
    pts = np.column_stack([ci.ravel(), cj.ravel()]).astype(float)
    coarse = _correlated_normal(pts, spec.sigma, spec.xc, rng).reshape(ni, nj)
    gi, gj = np.meshgrid(np.arange(I) / step, np.arange(J) / step, indexing="ij")
    return map_coordinates(coarse, [gi, gj], order=1, mode="nearest")


def grid_clearance(location, grid) -> float:
    """Distance from ``location`` to the nearest grid point."""
    I, J = grid
    zi = min(max(round(location[0]), 0), I - 1)
    zj = min(max(round(location[1]), 0), J - 1)
    return float(np.hypot(location[0] - zi, location[1] - zj))


def gen_slf(
    emitter: EmitterSpec,
    shadow: np.ndarray,
    grid: tuple[int, int],
    min_clearance: float = 0.5,
    pathloss: bool = True,
    height: float = 0.0,
) -> np.ndarray:
    """``S(i, j) = ||y - z||^(-eta) * 10^(shadow(i, j) / 10)`` at ``y = [i, j]``.

    A nonzero ``height`` places the emitter above the sensing plane, so the
    distance becomes ``sqrt(||y - z||^2 + height^2)``.
    """
    I, J = grid
    shadow = np.asarray(shadow, dtype=float)
    if shadow.shape != (I, J):
        raise ScenarioError(f"shadow field must be {(I, J)}, got {shadow.shape}")
    gain = 10.0 ** (shadow / 10.0)
    if not pathloss:
        return gain
    if emitter.pathloss_exponent <= 0:
        raise ScenarioError("path-loss exponent must be positive")
    if height == 0 and grid_clearance(emitter.location, grid) < min_clearance:
        raise ScenarioError(
            f"emitter at {emitter.location} is closer than {min_clearance} m to a grid point"
        )
    ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    d = np.sqrt((ii - emitter.location[0]) ** 2 + (jj - emitter.location[1]) ** 2 + height**2)
    return d ** (-emitter.pathloss_exponent) * gain


def sample_location(cfg: ScenarioConfig, rng) -> tuple[float, float]:
    while True:
        z = (float(rng.uniform(0, cfg.I - 1)), float(rng.uniform(0, cfg.J - 1)))
        if grid_clearance(z, (cfg.I, cfg.J)) >= cfg.min_clearance:
            return z


def assemble_ground_truth(cfg: ScenarioConfig, rng=None) -> GroundTruth:
    """Draw ``R`` emitters and build ``X = sum_r S_r o c_r``.

    ``rng`` defaults to a generator seeded with ``cfg.seed``.  With
    ``cfg.slf_rank`` set, each SLF is an exact rank-``slf_rank`` product of
    uniform random factors instead of a path-loss field (no emitters are
    recorded).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    grid = (cfg.I, cfg.J)
    emitters, slfs, psds = [], [], []
    for _ in range(cfg.R):
        spec = sample_psd_spec(cfg, rng)
        if cfg.slf_rank is not None:
            # exact low-rank test fields: nonnegative random factors
            a = rng.uniform(0, 1, (cfg.I, cfg.slf_rank))
            b = rng.uniform(0, 1, (cfg.J, cfg.slf_rank))
            slfs.append(a @ b.T)
            psds.append(gen_psd(spec, cfg.K))
            continue
        loc = sample_location(cfg, rng)
        eta = float(rng.uniform(*cfg.eta_range))
        em = EmitterSpec(loc, eta, spec)
        shadow = gen_shadow_field(cfg.shadow, grid, rng)
        slfs.append(gen_slf(em, shadow, grid, cfg.min_clearance, cfg.pathloss, cfg.emitter_height))
        psds.append(gen_psd(spec, cfg.K))
        emitters.append(em)
    C = np.column_stack(psds)
    X = np.einsum("ijr,kr->ijk", np.stack(slfs, axis=-1), C)
    return GroundTruth(slfs, C, X, emitters, cfg.seed)


def add_noise(x: np.ndarray, snr_db: float, rng=None) -> np.ndarray:
    """Add iid Gaussian noise rescaled so ``10 log10(||X||^2 / ||N||^2) == snr_db``.

    ``snr_db = inf`` returns a copy of the input.
    """
    x = np.asarray(x, dtype=float)
    if np.isposinf(snr_db):
        return x.copy()
    xnorm = np.linalg.norm(x)
    if xnorm == 0:
        raise ScenarioError("SNR is undefined for an all-zero tensor")
    rng = np.random.default_rng(rng)
    n = rng.standard_normal(x.shape)
    n *= xnorm / np.linalg.norm(n) * 10.0 ** (-snr_db / 20.0)
    return x + n


def lowrank_energy_ratio(s: np.ndarray, i: int) -> float:
    """Fraction of the singular-value sum carried by the top ``i`` values."""
    mu = np.linalg.svd(np.asarray(s, dtype=float), compute_uv=False)
    if not 1 <= i <= len(mu):
        raise ValueError(f"i must lie in 1..{len(mu)}")
    return float(mu[:i].sum() / mu.sum())


def check_ground_truth(gt: GroundTruth, tol: float = 1e-10) -> None:
    """Assert the map equals ``S C^T`` along mode 3 and every factor is nonnegative."""
    x3 = unfold(gt.map, 3)
    model = gt.slf_matrix() @ gt.psd.T
    scale = max(np.linalg.norm(x3), 1.0)
    if np.linalg.norm(x3 - model) > tol * scale:
        raise ScenarioError("radio map does not match sum of SLF/PSD outer products")
    if min(s.min() for s in gt.slfs) < 0 or gt.psd.min() < 0:
        raise ScenarioError("negative SLF or PSD entry")
