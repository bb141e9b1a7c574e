"""Warm start for log-concave marginals: band, isotropize, Chow subspace.

The fast path to a good initial direction: condition on a random thin band
of ``<w, x>`` (which concentrates the interesting label structure), project
survivors orthogonally onto the complement of ``w``, re-isotropize that
conditional distribution by rejection sampling against a learned exponential
reweighting, and read the degree-1 and degree-2 label-moment structure (Chow
parameters).  The target direction correlates with the span of the first
moment and the large-eigenvalue eigenvectors of the second, so a random unit
vector of that low-dimensional subspace has non-trivial correlation with
constant probability.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EmptyBand,
    EmptySubspace,
    InvalidConfig,
    Nonconvergence,
    SingularCovariance,
    SourceExhausted,
)
from .certificate import ProjectedBatch
from .geometry import as_unit, check_unit, subspace_basis
from .synthetic import InstanceSpec, as_labeled_batch, sample_batch

logger = logging.getLogger(__name__)

#: Anti-anti-concentration cap on the band offset scale: one-dimensional
#: projections of the shipped isotropic log-concave families have density
#: bounded below on [-0.3, 0.3], so offsets up to 2s = 0.2 stay inside it.
S_CAP = 0.1

#: Dedicated high batch index so warm-start draws never collide with
#: training or evaluation streams of the same instance.
WARMSTART_BATCH_BASE = 2_000_003


def noise_margin(alpha: float, bigA: float, s: float) -> float:
    """The band noise margin ``xi = (s / bigA)**(1/alpha)``.

    After conditioning on a random thin band at offset about ``s``, all but
    an ``xi``-ish fraction of the conditional distribution keeps flip
    probability bounded away from 1/2 by ``xi``.
    """
    if not (0 < alpha < 1) or bigA <= 0 or s <= 0:
        raise InvalidConfig("need alpha in (0,1), bigA > 0, s > 0")
    return (s / bigA) ** (1.0 / alpha)


@dataclass(frozen=True)
class RandomBandConfig:
    """A drawn conditioning band ``<w, x> in [x0, x0 + s_prime]``."""

    epsilon: float
    s: float
    s_prime: float
    x0: float
    seed: int

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise InvalidConfig(f"epsilon must be positive, got {self.epsilon}")
        if not (0.0 < self.s_prime < self.s):
            raise InvalidConfig(
                f"need 0 < s_prime < s, got s_prime={self.s_prime}, s={self.s}"
            )
        if not (self.s <= self.x0 <= 2.0 * self.s + 1e-12):
            raise InvalidConfig(
                f"x0 must lie in [s, 2s] = [{self.s}, {2 * self.s}], got {self.x0}"
            )

    @classmethod
    def from_noise(
        cls, alpha: float, bigA: float, epsilon: float, seed: int
    ) -> "RandomBandConfig":
        """Draw the band scales from the noise parameters and a seed.

        ``s`` is a small multiple of ``alpha * epsilon`` shrunk by the log of
        the noise budget and capped by the anti-anti-concentration constant;
        the band width ``s_prime`` would ideally be the tiny ``xi^3 * s *
        epsilon``, but desk-scale sample budgets cannot populate a band that
        thin, so it is floored at ``s/2`` (the noise-margin analysis degrades
        gracefully; the trade-off is recorded in the diagnostics).
        """
        if not (0 < alpha < 1) or bigA <= 0 or epsilon <= 0:
            raise InvalidConfig("need alpha in (0,1), bigA > 0, epsilon > 0")
        log_arg = bigA * math.log(bigA + math.e) / (alpha * epsilon) + math.e
        s = min(S_CAP, alpha * epsilon / (8.0 * math.log(log_arg)))
        xi = noise_margin(alpha, bigA, s)
        s_prime = max(xi**3 * s * epsilon, s / 2.0)
        rng = np.random.default_rng(seed)
        x0 = s * (1.0 + rng.random())
        return cls(epsilon=epsilon, s=s, s_prime=s_prime, x0=x0, seed=seed)


def random_band_project(samples, w: np.ndarray, cfg: RandomBandConfig) -> ProjectedBatch:
    """Keep ``<w, x> in [x0, x0 + s_prime]`` and project orthogonally off ``w``.

    Unlike the certificate transform this is the plain orthogonal projection
    ``x - <w, x> w`` (no division), which preserves log-concavity of the
    conditional marginal.
    """
    check_unit(w, "w")
    batch = as_labeled_batch(samples)
    if len(batch) == 0:
        raise EmptyBand("no input samples")
    s = batch.x @ w
    keep = (s >= cfg.x0) & (s <= cfg.x0 + cfg.s_prime)
    n_keep = int(np.count_nonzero(keep))
    if n_keep == 0:
        raise EmptyBand(
            f"no samples with <w, x> in [{cfg.x0:.6g}, {cfg.x0 + cfg.s_prime:.6g}]"
        )
    z = batch.x[keep] - np.outer(s[keep], w)
    return ProjectedBatch(
        z=z, y=batch.y[keep], survival=n_keep / len(batch), n_input=len(batch)
    )


@dataclass(frozen=True)
class RejectionReweighter:
    """An exponential-tilt shift ``r`` and its measured quality.

    A point ``x`` is accepted with probability ``min(1, exp(-<r, x>))``;
    ``gamma`` is the measured reweighted-mean norm at ``r`` (the
    stationarity certificate) and ``acceptance_rate`` the measured mean
    acceptance probability.
    """

    r: np.ndarray
    gamma: float
    acceptance_rate: float

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=np.float64)
        object.__setattr__(self, "r", r)
        if not (0.0 < self.acceptance_rate <= 1.0):
            raise InvalidConfig(
                f"acceptance_rate must lie in (0, 1], got {self.acceptance_rate}"
            )

    def acceptance_probabilities(self, x: np.ndarray) -> np.ndarray:
        logits = -np.clip(np.asarray(x, dtype=np.float64) @ self.r, -60.0, 60.0)
        return np.minimum(1.0, np.exp(logits))


def _reweighted_mean(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    w = np.minimum(1.0, np.exp(-np.clip(x @ r, -60.0, 60.0)))
    return (x * w[:, None]).mean(axis=0)


def psgd_stationary_point(
    samples,
    gamma: float,
    radius: float = 10.0,
    iters: int = 300,
    seed: int = 0,
) -> RejectionReweighter:
    """Find a shift ``r`` making the reweighted mean small, by projected SGD.

    Minimizes ``F(r) = ||E[x * min(1, exp(-<r, x>))]||^2`` with the
    two-independent-halves unbiased gradient estimator (one half estimates
    the reweighted mean, the other its Jacobian), radial projection to
    ``||r|| <= radius``, step ``1 / (L_hat * sqrt(k))`` under the empirical
    smoothness estimate ``L_hat = 2 * mean ||x||^2``, and best-iterate
    selection by the measured full-sample mean norm.  ``gamma`` is the
    stationarity target: iteration stops early once the measured norm is
    below it, and Nonconvergence — carrying the best iterate — is raised
    when the norm stays above ``10 * gamma``.
    """
    if gamma <= 0 or radius <= 0 or iters < 1:
        raise InvalidConfig("need gamma > 0, radius > 0, iters >= 1")
    x = np.ascontiguousarray(np.asarray(samples, dtype=np.float64))
    if x.ndim != 2 or x.shape[0] < 4:
        raise InvalidConfig(f"need a 2-d sample array with >= 4 rows, got {x.shape}")
    n, m = x.shape
    rng = np.random.default_rng(seed)
    l_hat = 2.0 * float(np.mean(np.sum(x * x, axis=1)))
    r = np.zeros(m)
    best_r = r.copy()
    best_norm = float(np.linalg.norm(_reweighted_mean(x, r)))
    half = min(2048, n // 2)
    for k in range(1, iters + 1):
        idx = rng.choice(n, size=2 * half, replace=False)
        x1, x2 = x[idx[:half]], x[idx[half:]]
        g1 = _reweighted_mean(x1, r)
        s2 = x2 @ r
        active = s2 >= 0.0
        weights = np.where(active, np.exp(-np.clip(s2, 0.0, 60.0)), 0.0)
        # Jacobian of the reweighted mean applied to g1, estimated on the
        # second half: -E[x x^T 1{<r,x> >= 0} e^{-<r,x>}] @ g1
        jac_g = -(x2 * weights[:, None]).T @ (x2 @ g1) / half
        grad = 2.0 * jac_g
        r = r - grad / (l_hat * math.sqrt(k))
        norm_r = float(np.linalg.norm(r))
        if norm_r > radius:
            r = r * (radius / norm_r)
        if k % 10 == 0 or k == iters:
            cur = float(np.linalg.norm(_reweighted_mean(x, r)))
            if cur < best_norm:
                best_norm, best_r = cur, r.copy()
            if best_norm <= gamma:
                break
    acc = float(np.mean(np.minimum(1.0, np.exp(-np.clip(x @ best_r, -60, 60)))))
    if best_norm > 10.0 * gamma:
        raise Nonconvergence(
            f"reweighted-mean norm {best_norm:.4g} above 10*gamma={10 * gamma:.4g} "
            f"after {iters} iterations",
            r=best_r,
            g_norm=best_norm,
        )
    return RejectionReweighter(r=best_r, gamma=best_norm, acceptance_rate=acc)


def _rejection_indices(
    x: np.ndarray, r: np.ndarray, target_n: int, rng: np.random.Generator
) -> np.ndarray:
    probs = np.minimum(1.0, np.exp(-np.clip(x @ r, -60.0, 60.0)))
    accepted = np.flatnonzero(rng.random(len(x)) < probs)
    if len(accepted) < target_n:
        raise SourceExhausted(
            f"only {len(accepted)} acceptances from {len(x)} inputs, "
            f"needed {target_n}"
        )
    return accepted[:target_n]


def rejection_resample(samples, r: np.ndarray, target_n: int, seed: int = 0):
    """Accept each point with probability ``min(1, exp(-<r, x>))``.

    Consumes inputs in order until ``target_n`` acceptances; returns the
    accepted points and the measured acceptance rate.  Raises
    SourceExhausted when the inputs run out first.
    """
    if target_n < 1:
        raise InvalidConfig(f"target_n must be >= 1, got {target_n}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidConfig(f"need a 2-d sample array, got shape {x.shape}")
    rng = np.random.default_rng(seed)
    idx = _rejection_indices(x, np.asarray(r, dtype=np.float64), target_n, rng)
    consumed = int(idx[-1]) + 1
    rate = target_n / consumed
    return x[idx], rate


def standardize(samples):
    """Whiten: returns ``(z, mean, cov_sqrt)`` with ``z = C^{-1/2}(x - mean)``.

    ``cov_sqrt`` is the symmetric positive square root of the empirical
    covariance; SingularCovariance if its smallest eigenvalue is <= 1e-8.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidConfig(f"need a 2-d array with >= 2 rows, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() <= 1e-8:
        raise SingularCovariance(
            f"empirical covariance has min eigenvalue {eigvals.min():.3g}"
        )
    root = eigvecs @ np.diag(np.sqrt(eigvals)) @ eigvecs.T
    inv_root = eigvecs @ np.diag(1.0 / np.sqrt(eigvals)) @ eigvecs.T
    return centered @ inv_root, mean, root


@dataclass
class ChowParameters:
    """Empirical label moments: ``T1 = E[y x]``, ``T2 = E[y (x x^T - I)]``."""

    T1: np.ndarray
    T2: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    n_used: int

    def __post_init__(self) -> None:
        if np.max(np.abs(self.T2 - self.T2.T)) > 1e-9:
            raise InvalidConfig("T2 must be symmetric within 1e-9")
        residual = self.T2 @ self.eigvecs - self.eigvecs * self.eigvals[None, :]
        if residual.size and np.max(np.abs(residual)) > 1e-7:
            raise InvalidConfig("eigendecomposition residual above 1e-7")


def chow_parameters(z: np.ndarray, y: np.ndarray) -> ChowParameters:
    """First and second label moments with the spectral decomposition of T2."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InvalidConfig(f"need >= 2 samples, got shape {z.shape}")
    if y.shape != (z.shape[0],):
        raise InvalidConfig("labels must align with samples")
    n, m = z.shape
    t1 = (y[:, None] * z).mean(axis=0)
    t2 = (y[:, None] * z).T @ z / n - y.mean() * np.eye(m)
    t2 = (t2 + t2.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(t2)
    return ChowParameters(T1=t1, T2=t2, eigvals=eigvals, eigvecs=eigvecs, n_used=n)


def build_subspace(chow: ChowParameters, zeta: float) -> np.ndarray:
    """Orthonormal basis of ``span{T1} + span{eigvecs with |eigval| >= zeta}``.

    ``T1`` enters only when its norm clears the estimation noise floor
    ``4 * sqrt(m / n_used)`` (an exactly-zero or noise-level first moment
    contributes nothing).  Raises EmptySubspace when no direction survives.
    """
    if zeta <= 0:
        raise InvalidConfig(f"zeta must be positive, got {zeta}")
    m = chow.T1.shape[0]
    columns = []
    t1_floor = max(4.0 * math.sqrt(m / max(chow.n_used, 1)), 1e-12)
    t1_norm = float(np.linalg.norm(chow.T1))
    if t1_norm >= t1_floor:
        columns.append(chow.T1 / t1_norm)
    selected = np.abs(chow.eigvals) >= zeta
    for i in np.flatnonzero(selected):
        columns.append(chow.eigvecs[:, i])
    if not columns:
        raise EmptySubspace(
            f"no direction passed: |T1|={t1_norm:.3g} < {t1_floor:.3g} and no "
            f"|eigenvalue| >= {zeta:.3g} (max {np.max(np.abs(chow.eigvals)):.3g})"
        )
    raw = np.column_stack(columns)
    q, r_mat = np.linalg.qr(raw)
    keep = np.abs(np.diag(r_mat)) > 1e-9
    basis = q[:, keep]
    dim_bound = 10.0 * zeta**-4
    if basis.shape[1] > dim_bound:
        logger.warning(
            "subspace dimension %d exceeds the diagnostic bound %.3g",
            basis.shape[1],
            dim_bound,
        )
    return basis


@dataclass(frozen=True)
class WarmStartConfig:
    """Budgets and knobs for the warm start pipeline."""

    alpha: float
    bigA: float
    epsilon: float
    seed: int = 0
    samples: int = 400_000
    resample_n: int = 20_000
    gamma: Optional[float] = None
    zeta: Optional[float] = None
    psgd_iters: int = 300
    max_zeta_retries: int = 5

    def __post_init__(self) -> None:
        if not (0 < self.alpha < 1) or self.bigA <= 0 or self.epsilon <= 0:
            raise InvalidConfig("need alpha in (0,1), bigA > 0, epsilon > 0")
        if self.samples < 100 or self.resample_n < 10:
            raise InvalidConfig("samples/resample_n budgets too small")
        if self.gamma is not None and self.gamma <= 0:
            raise InvalidConfig("gamma must be positive when given")
        if self.zeta is not None and self.zeta <= 0:
            raise InvalidConfig("zeta must be positive when given")


@dataclass
class WarmStartResult:
    """The proposed initial direction and the pipeline's diagnostics."""

    v: np.ndarray
    subspace_dim: int
    xi: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v": [float(a) for a in self.v],
            "subspace_dim": self.subspace_dim,
            "xi": self.xi,
            "diagnostics": {k: float(v) for k, v in self.diagnostics.items()},
        }


def warm_start(sample_source, w: np.ndarray, cfg: WarmStartConfig) -> WarmStartResult:
    """Run the full warm-start pipeline around the direction ``w``.

    ``sample_source`` is an instance (drawn from a dedicated batch stream) or
    a labeled batch.  Steps: draw the random band and project; re-isotropize
    the band conditional (SGD for the exponential-tilt shift, rejection
    resample, whiten); estimate Chow moments; cut the spectral subspace (the
    cutoff is floored at the eigenvalue noise scale, and lowered on
    EmptySubspace up to ``max_zeta_retries`` times); return a seeded random
    unit vector of the subspace pulled back through the covariance root,
    embedded in the complement of ``w``.
    """
    check_unit(w, "w")
    d = w.shape[0]
    if isinstance(sample_source, InstanceSpec):
        raw = sample_batch(
            sample_source, cfg.samples, batch=WARMSTART_BATCH_BASE + cfg.seed
        )
    else:
        raw = as_labeled_batch(sample_source)
    band = RandomBandConfig.from_noise(cfg.alpha, cfg.bigA, cfg.epsilon, cfg.seed)
    projected = random_band_project(raw, w, band)
    basis = subspace_basis(w)  # (d, d-1)
    coords = projected.z @ basis
    labels = projected.y.astype(np.float64)
    xi = noise_margin(cfg.alpha, cfg.bigA, band.s)
    gamma = cfg.gamma
    if gamma is None:
        gamma = 1.0 / max(math.log(1.0 / xi), 2.0)
        gamma = min(max(gamma, 1e-3), 0.5)
    diagnostics: dict = {
        "band_survival": projected.survival,
        "band_x0": band.x0,
        "band_width": band.s_prime,
        "gamma_target": gamma,
    }
    try:
        reweighter = psgd_stationary_point(
            coords, gamma, iters=cfg.psgd_iters, seed=cfg.seed
        )
        diagnostics["psgd_converged"] = 1.0
    except Nonconvergence as err:
        logger.warning("isotropization did not converge: %s", err)
        fallback_acc = float(
            np.mean(np.minimum(1.0, np.exp(-np.clip(coords @ err.r, -60, 60))))
        )
        reweighter = RejectionReweighter(
            r=err.r, gamma=err.g_norm, acceptance_rate=fallback_acc
        )
        diagnostics["psgd_converged"] = 0.0
    diagnostics["gamma_out"] = reweighter.gamma
    if reweighter.acceptance_rate < 0.05:
        logger.warning(
            "acceptance rate %.3g below the 0.05 floor; resampled set may be "
            "too small to be informative",
            reweighter.acceptance_rate,
        )
    rng = np.random.default_rng(cfg.seed)
    target_n = min(
        cfg.resample_n,
        max(10, int(0.5 * reweighter.acceptance_rate * len(coords))),
    )
    idx = _rejection_indices(coords, reweighter.r, target_n, rng)
    acc_rate = target_n / (int(idx[-1]) + 1)
    diagnostics["acceptance_rate"] = acc_rate
    z_std, _, cov_root = standardize(coords[idx])
    chow = chow_parameters(z_std, labels[idx])
    m = coords.shape[1]
    noise_floor = 4.0 * math.sqrt(m / chow.n_used)
    zeta = cfg.zeta if cfg.zeta is not None else xi**2
    zeta = max(zeta, noise_floor)
    sub = None
    for attempt in range(cfg.max_zeta_retries + 1):
        try:
            sub = build_subspace(chow, zeta)
            break
        except EmptySubspace:
            if attempt == cfg.max_zeta_retries:
                raise
            zeta *= 0.5
            logger.debug("empty subspace, lowering zeta to %.3g", zeta)
    diagnostics["zeta_used"] = zeta
    diagnostics["subspace_dim"] = sub.shape[1]
    coeffs = rng.standard_normal(sub.shape[1])
    v_std = sub @ coeffs
    norm = np.linalg.norm(v_std)
    if norm < 1e-12:
        raise EmptySubspace("degenerate random combination in subspace")
    v_coords = cov_root @ (v_std / norm)
    v_full = basis @ v_coords
    v_full = v_full - (v_full @ w) * w
    v = as_unit(v_full)
    return WarmStartResult(
        v=v, subspace_dim=sub.shape[1], xi=xi, diagnostics=diagnostics
    )
