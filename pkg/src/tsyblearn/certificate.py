"""Certificate search: band-condition + project, scan for a negative window.

The engine takes a candidate direction ``w`` suspected of being far from the
true halfspace normal, conditions on a thin positive band ``<w, x> in
[sigma1, sigma2]``, maps survivors through the perspective projection onto
``w``'s orthogonal complement, and searches that space for a *certificate*: a
direction ``v`` and threshold window on which the conditional label mean is
significantly negative.  A correct normal admits no such window (labels
correlate nonnegatively with every nonnegative window function), so a found
witness is one-sided evidence that ``w`` errs, and it lifts back to the
original space as a reweighting function with provably negative correlation.

The search alternates a threshold scan with perceptron-like updates of ``v``:
when no window certifies, the labeled mass in the outer window supplies a
gradient whose correlation with the unknown good direction is positive, so a
small normalized step makes progress.  Fresh samples are consumed every round
and any found witness is re-validated on a holdout batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np

from .errors import EmptyBand, InvalidConfig, SourceExhausted
from .geometry import (
    Band,
    check_unit,
    normalized_update,
    perspective_projection_batch,
    random_unit,
)
from .synthetic import InstanceSpec, LabeledBatch, as_labeled_batch, sample_batch

logger = logging.getLogger(__name__)

#: Rotation (radians) applied per update when the step size is "auto".
AUTO_STEP_ROTATION = 0.35

#: Holdout acceptance slack and significance, in standard errors.
HOLDOUT_SLACK_SE = 3.0

#: Auto-calibration floor: the scan threshold never drops below this many
#: standard errors of a +/-1 mean, keeping accepted witnesses significant.
THRESHOLD_FLOOR_SE = 10.0


@dataclass(frozen=True)
class TransformConfig:
    """Band-conditioning + perspective-projection parameters.

    The band on ``<w, x>`` is ``[rho*R/2, rho*R/sqrt(2)]``: a thin slab at
    distance proportional to ``rho`` inside the well-behaved radius ``R``.
    """

    w: np.ndarray
    rho: float
    R: float

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        check_unit(w, "w")
        if not (0.0 < self.rho <= 1.0):
            raise InvalidConfig(f"rho must lie in (0, 1], got {self.rho}")
        if self.R <= 0:
            raise InvalidConfig(f"R must be positive, got {self.R}")

    @property
    def sigma1(self) -> float:
        return self.rho * self.R / 2.0

    @property
    def sigma2(self) -> float:
        return self.rho * self.R / math.sqrt(2.0)

    def band(self) -> Band:
        return Band(normal=self.w, lo=self.sigma1, hi=self.sigma2)


@dataclass(frozen=True)
class ProjectedSample:
    """One transformed record: ``z`` lies in the complement of ``w``."""

    z: np.ndarray
    y: int


@dataclass
class ProjectedBatch:
    """Columnar transformed batch with its survival bookkeeping.

    ``survival`` is the fraction of raw inputs that landed in the band;
    ``n_input`` the raw count they were drawn from.
    """

    z: np.ndarray
    y: np.ndarray
    survival: float = 1.0
    n_input: int = 0

    def __post_init__(self) -> None:
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.z.ndim != 2:
            raise InvalidConfig(f"z must be 2-d, got shape {self.z.shape}")
        if self.y.shape != (self.z.shape[0],):
            raise InvalidConfig(
                f"y has shape {self.y.shape}, expected ({self.z.shape[0]},)"
            )
        if self.y.size and not np.all(np.abs(self.y) == 1):
            raise InvalidConfig("labels must be +1 or -1")
        self.y = self.y.astype(np.int8)
        if not self.n_input:
            self.n_input = len(self.y)

    def __len__(self) -> int:
        return self.z.shape[0]

    def __iter__(self) -> Iterator[ProjectedSample]:
        for i in range(len(self)):
            yield ProjectedSample(z=self.z[i], y=int(self.y[i]))

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return ProjectedSample(z=self.z[idx], y=int(self.y[idx]))
        return ProjectedBatch(
            z=self.z[idx], y=self.y[idx], survival=self.survival, n_input=0
        )


def as_projected_batch(data) -> ProjectedBatch:
    """Coerce a ProjectedBatch, a sequence of ProjectedSamples, or (Z, y)."""
    if isinstance(data, ProjectedBatch):
        return data
    if isinstance(data, tuple) and len(data) == 2:
        return ProjectedBatch(z=data[0], y=data[1])
    records = list(data)
    if records and isinstance(records[0], ProjectedSample):
        return ProjectedBatch(
            z=np.stack([r.z for r in records]),
            y=np.array([r.y for r in records], dtype=np.int8),
        )
    raise InvalidConfig(f"cannot interpret {type(data).__name__} as a projected batch")


def transform(samples, cfg: TransformConfig) -> ProjectedBatch:
    """Condition on the band and perspective-project the survivors.

    Keeps points with ``<w, x>`` in ``[sigma1, sigma2]`` and maps each to
    ``x / <w, x>`` minus its ``w`` component.  Raises EmptyBand when nothing
    survives.
    """
    batch = as_labeled_batch(samples)
    if len(batch) == 0:
        raise EmptyBand("no input samples to transform")
    s = batch.x @ cfg.w
    keep = (s >= cfg.sigma1) & (s <= cfg.sigma2)
    n_keep = int(np.count_nonzero(keep))
    if n_keep == 0:
        raise EmptyBand(
            f"no samples with <w, x> in [{cfg.sigma1:.6g}, {cfg.sigma2:.6g}] "
            f"out of {len(batch)}"
        )
    z = perspective_projection_batch(batch.x[keep], cfg.w)
    return ProjectedBatch(
        z=z, y=batch.y[keep], survival=n_keep / len(batch), n_input=len(batch)
    )


def certificate_value(samples, v: np.ndarray, t_lo: float, t_hi: float) -> float:
    """Empirical mean of ``1{-t_hi <= <v, z> <= -t_lo} * y`` over the batch.

    The mean is over *all* provided samples (points outside the window
    contribute zero), matching the population quantity the scan bounds.
    """
    if t_lo >= t_hi:
        raise InvalidConfig(f"need t_lo < t_hi, got [{t_lo}, {t_hi}]")
    batch = as_projected_batch(samples)
    if len(batch) == 0:
        return 0.0
    proj = batch.z @ v
    inside = (proj >= -t_hi) & (proj <= -t_lo)
    return float(np.sum(batch.y[inside]) / len(batch))


def scan_thresholds(samples, v: np.ndarray, R: float, c: float) -> Optional[float]:
    """Search thresholds ``t0`` in ``[R/2, R]`` for a window value <= -c.

    Candidates are the sample values of ``-<v, z>`` inside the range plus
    both endpoints (the closed lower endpoint realizes the limit of the open
    scan interval).  Returns the candidate minimizing the empirical window
    value, ties broken toward larger ``t0``, provided that minimum is at most
    ``-c``; otherwise None.
    """
    if R <= 0 or c <= 0:
        raise InvalidConfig(f"need R > 0 and c > 0, got R={R}, c={c}")
    batch = as_projected_batch(samples)
    n = len(batch)
    if n == 0:
        return None
    p = -(batch.z @ v)
    order = np.argsort(p, kind="stable")
    p_sorted = p[order]
    y_sorted = batch.y[order].astype(np.int64)
    # suffix sums of labels for p >= t0, capped at p <= R
    hi = int(np.searchsorted(p_sorted, R, side="right"))
    suffix = np.zeros(hi + 1, dtype=np.int64)
    if hi:
        suffix[:hi] = np.cumsum(y_sorted[:hi][::-1])[::-1]
    in_range = p_sorted[(p_sorted >= R / 2.0) & (p_sorted <= R)]
    candidates = np.unique(np.concatenate([in_range, [R / 2.0, R]]))
    best_t0, best_val = None, math.inf
    for t0 in candidates:
        j = int(np.searchsorted(p_sorted, t0, side="left"))
        val = suffix[min(j, hi)] / n
        if val <= best_val:  # ties prefer larger t0; candidates ascend
            best_t0, best_val = float(t0), val
    if best_val <= -c:
        return best_t0
    return None


def update_direction(samples, v: np.ndarray, R: float) -> np.ndarray:
    """Gradient estimate: mean of ``1{-R <= <v,z> <= -R/2} * y * z`` off ``v``.

    The returned vector has its ``v`` component removed; the empty-window
    case returns the zero vector.
    """
    if R <= 0:
        raise InvalidConfig(f"need R > 0, got R={R}")
    batch = as_projected_batch(samples)
    n = len(batch)
    if n == 0:
        return np.zeros_like(np.asarray(v, dtype=np.float64))
    proj = batch.z @ v
    inside = (proj >= -R) & (proj <= -R / 2.0)
    if not np.any(inside):
        return np.zeros(batch.z.shape[1])
    g = (batch.y[inside, None] * batch.z[inside]).sum(axis=0) / n
    g = g - (g @ v) * v
    return g


@dataclass(frozen=True)
class CertificateWitness:
    """A found certificate and the provenance needed to use it later.

    Encodes the original-space function
    ``T(x) = (1 / <w, x>) * 1{sigma1 <= <w,x> <= sigma2,
    -t1 <= <v, proj(x)> <= -t2}`` whose label correlation
    ``E[T(x) * y * <w, x>]`` was measured negative (``value``).
    """

    w: np.ndarray
    v: np.ndarray
    sigma1: float
    sigma2: float
    t1: float
    t2: float
    value: float
    n_used: int

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)
        check_unit(w, "w")
        check_unit(v, "v")
        if abs(float(w @ v)) > 1e-9:
            raise InvalidConfig("witness directions w and v must be orthogonal")
        if not (0.0 < self.sigma1 < self.sigma2):
            raise InvalidConfig(
                f"need 0 < sigma1 < sigma2, got [{self.sigma1}, {self.sigma2}]"
            )
        if not (0.0 < self.t2 < self.t1):
            raise InvalidConfig(f"need 0 < t2 < t1, got t2={self.t2}, t1={self.t1}")
        if not self.value < 0:
            raise InvalidConfig(f"witness value must be negative, got {self.value}")

    def indicator(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the band-and-window support."""
        pts = np.asarray(x, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        s = pts @ self.w
        in_band = (s >= self.sigma1) & (s <= self.sigma2)
        out = np.zeros(pts.shape[0], dtype=bool)
        if np.any(in_band):
            ratio = (pts[in_band] @ self.v) / s[in_band]
            out[in_band] = (ratio >= -self.t1) & (ratio <= -self.t2)
        return out[0] if single else out

    def t_values(self, x: np.ndarray) -> np.ndarray:
        """``T(x)``: ``1 / <w, x>`` on the support, 0 elsewhere."""
        pts = np.asarray(x, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        mask = self.indicator(pts)
        out = np.zeros(pts.shape[0])
        if np.any(mask):
            out[mask] = 1.0 / (pts[mask] @ self.w)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "w": [float(a) for a in self.w],
            "v": [float(a) for a in self.v],
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "t1": self.t1,
            "t2": self.t2,
            "value": self.value,
            "n_used": self.n_used,
        }

    @staticmethod
    def from_dict(payload: dict) -> "CertificateWitness":
        return CertificateWitness(
            w=np.asarray(payload["w"], dtype=np.float64),
            v=np.asarray(payload["v"], dtype=np.float64),
            sigma1=float(payload["sigma1"]),
            sigma2=float(payload["sigma2"]),
            t1=float(payload["t1"]),
            t2=float(payload["t2"]),
            value=float(payload["value"]),
            n_used=int(payload["n_used"]),
        )


def default_threshold(alpha: float, bigA: float, L: float, R: float) -> float:
    """Heuristic default scan threshold ``c = (R*L / (4*A))**(2/alpha) / 8``.

    The analysis only pins this constant up to polynomial factors; this
    concrete choice is conservative (small) and the auto-calibration floor
    keeps it meaningful relative to sampling noise.
    """
    return (R * L / (4.0 * bigA)) ** (2.0 / alpha) / 8.0


def default_step(c: float, beta: float) -> float:
    """The correlation-improvement step ``c / (2 * beta^3)``."""
    return c / (2.0 * beta**3)


def threshold_floor(n: int) -> float:
    """Smallest admissible scan threshold on ``n`` samples per round."""
    return THRESHOLD_FLOOR_SE / math.sqrt(max(n, 1))


@dataclass(frozen=True)
class CertSearchConfig:
    """Knobs for the certificate search, in transformed-space units.

    ``R`` here is the scan radius of the *projected* space.  ``step`` may be
    a positive float or the string ``"auto"`` (rotate by a fixed small angle
    each round).  ``threshold_c`` of None selects the default formula.
    """

    alpha: float
    bigA: float
    L: float
    R: float
    beta: float
    theta_min: float
    max_iters: int = 25
    step: Union[float, str] = "auto"
    threshold_c: Optional[float] = None
    samples_per_round: int = 50_000
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise InvalidConfig(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("bigA", "L", "R", "beta"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if not (0.0 < self.theta_min <= math.pi):
            raise InvalidConfig(
                f"theta_min must lie in (0, pi], got {self.theta_min}"
            )
        if self.max_iters < 1 or self.samples_per_round < 1:
            raise InvalidConfig("max_iters and samples_per_round must be >= 1")
        if isinstance(self.step, str):
            if self.step != "auto":
                raise InvalidConfig(f"step must be positive or 'auto', got {self.step!r}")
        elif self.step <= 0:
            raise InvalidConfig(f"step must be positive, got {self.step}")
        if self.threshold_c is not None and self.threshold_c <= 0:
            raise InvalidConfig(f"threshold_c must be positive, got {self.threshold_c}")

    @property
    def effective_threshold(self) -> float:
        c = self.threshold_c
        if c is None:
            c = default_threshold(self.alpha, self.bigA, self.L, self.R)
        return max(c, threshold_floor(self.samples_per_round))

    def step_size(self, g_norm: float) -> float:
        if self.step == "auto":
            return math.tan(AUTO_STEP_ROTATION) / g_norm
        return float(self.step)

    @staticmethod
    def transformed_params(
        alpha: float,
        bigA: float,
        L: float,
        R: float,
        beta: float,
        rho: float,
        band_mass: float,
    ) -> dict:
        """Regularity constants of the band-conditioned projected space.

        The projection turns radius ``R`` into ``1/rho``, scales densities by
        ``(R * rho)**3`` up to the band geometry, divides the noise-tail
        constant by the band mass, and inflates the sub-exponential parameter
        by ``(1/rho) * (1 + log(1/rho))``.
        """
        if not (0 < rho <= 1):
            raise InvalidConfig(f"rho must lie in (0, 1], got {rho}")
        if not (0 < band_mass <= 1):
            raise InvalidConfig(f"band_mass must lie in (0, 1], got {band_mass}")
        log_term = 1.0 + math.log(1.0 / rho) if rho < 1 else 1.0
        return {
            "alpha": alpha,
            "bigA": bigA / band_mass,
            "L": L * (R * rho) ** 3,
            "R": 1.0 / rho,
            "beta": max(1.0, (beta / rho) * log_term),
        }

    @classmethod
    def for_transformed(
        cls,
        alpha: float,
        bigA: float,
        L: float,
        R: float,
        beta: float,
        rho: float,
        band_mass: float,
        theta_min: float,
        **overrides,
    ) -> "CertSearchConfig":
        """Build a config in projected-space units from original-space ones."""
        params = cls.transformed_params(alpha, bigA, L, R, beta, rho, band_mass)
        params["theta_min"] = theta_min
        params.update(overrides)
        return cls(**params)


class TransformedSampleSource:
    """Supplies fresh transformed batches, remembering witness provenance.

    Backed either by an instance generator (a new raw batch per round, drawn
    at successive batch indices) or by a fixed dataset consumed in sequential
    chunks (SourceExhausted when it runs out).
    """

    def __init__(
        self,
        cfg: TransformConfig,
        samples_per_round: int,
        *,
        instance: Optional[InstanceSpec] = None,
        data: Optional[LabeledBatch] = None,
        start_batch: int = 0,
    ) -> None:
        if (instance is None) == (data is None):
            raise InvalidConfig("provide exactly one of instance= or data=")
        if samples_per_round < 1:
            raise InvalidConfig("samples_per_round must be >= 1")
        self.cfg = cfg
        self.samples_per_round = samples_per_round
        self.instance = instance
        self.data = data
        self.next_batch_index = start_batch
        self.offset = 0
        self.raw_consumed = 0

    @property
    def w(self) -> np.ndarray:
        return self.cfg.w

    @property
    def sigma1(self) -> float:
        return self.cfg.sigma1

    @property
    def sigma2(self) -> float:
        return self.cfg.sigma2

    def __call__(self) -> ProjectedBatch:
        if self.instance is not None:
            raw = sample_batch(self.instance, self.samples_per_round, self.next_batch_index)
            self.next_batch_index += 1
        else:
            if self.offset >= len(self.data):
                raise SourceExhausted(
                    f"dataset exhausted after {self.offset} samples"
                )
            raw = self.data[self.offset : self.offset + self.samples_per_round]
            self.offset += len(raw)
        self.raw_consumed += len(raw)
        return transform(raw, self.cfg)


def _as_source(sample_source) -> Callable[[], ProjectedBatch]:
    if callable(sample_source):
        return sample_source
    iterator = iter(sample_source)

    def pull() -> ProjectedBatch:
        try:
            return as_projected_batch(next(iterator))
        except StopIteration:
            raise SourceExhausted("sample source iterator exhausted") from None

    return pull


@dataclass
class CertSearchTrace:
    """Per-round diagnostics of a certificate search."""

    rounds: int = 0
    scan_values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    v_history: list = field(default_factory=list)
    holdout_rejections: int = 0
    n_used: int = 0
    c_used: float = 0.0


def compute_certificate(
    sample_source,
    v0: np.ndarray,
    cfg: CertSearchConfig,
    trace: Optional[CertSearchTrace] = None,
) -> Optional[CertificateWitness]:
    """Run the scan-or-update loop; a witness on success, None on Fail.

    Each round pulls a fresh transformed batch, scans thresholds in
    ``[R/2, R]`` for window value <= -c, and on a hit re-measures the window
    on a fresh holdout batch, accepting when the holdout value stays below
    ``-c`` up to sampling slack (and strictly below zero).  Otherwise the
    outer-window gradient rotates ``v`` and the loop continues.  ``None``
    (Fail) is the contractual outcome when no certificate is found — it
    carries no claim that none exists.

    The source should expose ``w``, ``sigma1``, ``sigma2`` attributes for
    witness provenance (TransformedSampleSource does); plain iterables of
    projected batches work for the search itself but cannot mint a witness
    and so always return None after exhausting their rounds.
    """
    source = _as_source(sample_source)
    v = np.asarray(v0, dtype=np.float64).copy()
    check_unit(v, "v0")
    c = cfg.effective_threshold
    if trace is None:
        trace = CertSearchTrace()
    trace.c_used = c
    w = getattr(sample_source, "w", None)
    sigma1 = getattr(sample_source, "sigma1", None)
    sigma2 = getattr(sample_source, "sigma2", None)
    for round_idx in range(cfg.max_iters):
        batch = source()
        trace.rounds += 1
        trace.n_used += batch.n_input
        trace.v_history.append(v.copy())
        t0 = scan_thresholds(batch, v, cfg.R, c)
        if t0 is not None:
            holdout = source()
            trace.n_used += holdout.n_input
            val = certificate_value(holdout, v, t0, cfg.R)
            proj = holdout.z @ v
            inside = (proj >= -cfg.R) & (proj <= -t0)
            terms = np.where(inside, holdout.y, 0).astype(np.float64)
            se = float(np.std(terms) / math.sqrt(max(len(holdout), 1)))
            if val <= -c + HOLDOUT_SLACK_SE * se and val < 0:
                if w is None:
                    logger.warning(
                        "certificate found but source carries no provenance; "
                        "returning None"
                    )
                    return None
                return CertificateWitness(
                    w=w,
                    v=_reorthogonalize(v, w),
                    sigma1=float(sigma1),
                    sigma2=float(sigma2),
                    t1=cfg.R,
                    t2=t0,
                    value=val,
                    n_used=trace.n_used,
                )
            trace.holdout_rejections += 1
            logger.debug(
                "round %d: holdout rejected t0=%.4g (value %.4g, needed <= %.4g)",
                round_idx,
                t0,
                val,
                -c + HOLDOUT_SLACK_SE * se,
            )
        g = update_direction(batch, v, cfg.R)
        g_norm = float(np.linalg.norm(g))
        trace.scan_values.append(None if t0 is None else float(t0))
        trace.grad_norms.append(g_norm)
        if g_norm < 1e-15:
            logger.debug("round %d: zero gradient, direction unchanged", round_idx)
            continue
        v = normalized_update(v, g, cfg.step_size(g_norm))
        if w is not None:
            # The projected points carry O(eps * ||z||^2) components along w,
            # so v accumulates drift out of the complement; remove it each
            # step to keep the minted witness exactly orthogonal.
            v = _reorthogonalize(v, w)
    return None


def _reorthogonalize(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = v - float(v @ w) * w
    return out / float(np.linalg.norm(out))


def lift_certificate(witness: CertificateWitness, samples) -> float:
    """Original-space correlation ``mean(T(x) * y * <w, x>)`` on ``samples``.

    Because ``T(x) * <w, x>`` is exactly the band-and-window indicator, this
    equals the band survival fraction times the projected-space window value
    measured on the same sample — the scale that certifies against the
    whole-space distribution rather than the conditional one.
    """
    batch = as_labeled_batch(samples)
    if len(batch) == 0:
        return 0.0
    mask = witness.indicator(batch.x)
    return float(np.sum(batch.y[mask]) / len(batch))


def random_init(d: int, seed: int, orthogonal_to: Optional[np.ndarray] = None) -> np.ndarray:
    """Uniform random unit vector, optionally inside a vector's complement."""
    if d < 2:
        raise InvalidConfig(f"d must be >= 2, got {d}")
    rng = np.random.default_rng(seed)
    return random_unit(d, rng, orthogonal_to=orthogonal_to)
