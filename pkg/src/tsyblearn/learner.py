"""Projected online gradient descent driven by a non-optimality certificate oracle.

The outer learning loop: each round asks an oracle whether the current
direction is certifiably non-optimal.  A returned certifying function feeds
a linear loss whose gradient steps the iterate; an oracle Fail means no
certificate was found and the current direction is returned as the answer.
Two oracle implementations are provided — random-restart threshold scanning
for well-behaved marginals, and a warm-started variant for the log-concave
families that seeds the scan from label-moment structure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from .certificate import (
    CertificateWitness,
    CertSearchConfig,
    TransformConfig,
    TransformedSampleSource,
    compute_certificate,
    lift_certificate,
    random_init,
)
from .errors import (
    EmptyBand,
    EmptySubspace,
    InvalidConfig,
    Nonconvergence,
    OracleContractViolation,
    SingularCovariance,
    SourceExhausted,
    TsyblearnError,
)
from .geometry import check_unit, project_to_ball
from .synthetic import (
    InstanceSpec,
    LabeledBatch,
    NoiseSpec,
    WellBehavedParams,
    as_labeled_batch,
    sample_batch,
)
from .warmstart import WarmStartConfig, warm_start

logger = logging.getLogger(__name__)

#: Batch-index bases keeping the learner's, the oracle's, and the warm
#: start's sample streams disjoint for a given instance.
LEARNER_BATCH_BASE = 3_000_017
ORACLE_BATCH_BASE = 5_000_011

#: Guess cap of the doubling loop in the log-concave oracle (radians).
GUESS_CAP = 1.0


class CertOutcome(Enum):
    WITNESS = "Witness"
    FAIL = "Fail"
    ZERO_VECTOR = "ZeroVector"


class StopReason(Enum):
    ORACLE_FAIL = "OracleFail"
    CONTRACT_VIOLATION = "ContractViolation"
    EXHAUSTED = "Exhausted"


@dataclass(frozen=True)
class CertificateHandle:
    """Learner-facing view of a witness: a bounded certifying function.

    ``t_values`` rescales the witness's ``1/<w, x>`` weights by ``sigma1``
    so that ``sup |T| <= 1``; the correlation ``E[T(x) * y * <w, x>]`` then
    equals ``sigma1`` times the band-and-window label mean, preserving the
    witness's negative sign guarantee.
    """

    witness: CertificateWitness

    @property
    def w(self) -> np.ndarray:
        return self.witness.w

    def t_values(self, x: np.ndarray) -> np.ndarray:
        return self.witness.sigma1 * self.witness.t_values(x)

    def margin_terms(self, samples) -> np.ndarray:
        """Per-sample ``T(x) * y * <w, x>`` values (0 off the support)."""
        batch = as_labeled_batch(samples)
        mask = self.witness.indicator(batch.x)
        terms = np.zeros(len(batch))
        terms[mask] = self.witness.sigma1 * batch.y[mask]
        return terms

    def margin_correlation(self, samples) -> float:
        """Empirical ``E[T(x) * y * <w, x>]`` — the holdout validation value."""
        batch = as_labeled_batch(samples)
        return self.witness.sigma1 * lift_certificate(self.witness, batch)


@dataclass(frozen=True)
class LearnerConfig:
    """Round and sample budgets for the outer loop.

    ``rho_eps`` of None defers to the oracle's ``rho(epsilon)``.  ``start``
    selects the initial iterate: ``"e1"`` (the default coordinate vector),
    ``"zero"`` (first round takes the margin-only gradient step), or
    ``"random"`` (seeded unit vector, for decorrelating repeated runs).
    """

    epsilon: float
    delta: float = 0.05
    rho_eps: Optional[float] = None
    max_rounds: int = 20
    samples_n: int = 200_000
    seed: int = 0
    start: str = "e1"

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon <= math.pi):
            raise InvalidConfig(f"epsilon must lie in (0, pi], got {self.epsilon}")
        if not (0.0 < self.delta < 1.0):
            raise InvalidConfig(f"delta must lie in (0, 1), got {self.delta}")
        if self.rho_eps is not None and not (0.0 < self.rho_eps <= 1.0):
            raise InvalidConfig(f"rho_eps must lie in (0, 1], got {self.rho_eps}")
        if self.max_rounds < 1:
            raise InvalidConfig(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.samples_n < self.max_rounds:
            raise InvalidConfig("samples_n must cover at least one sample per round")
        if self.start not in ("e1", "zero", "random"):
            raise InvalidConfig(
                f"start must be 'e1', 'zero' or 'random', got {self.start!r}"
            )


@dataclass
class RoundRecord:
    """One round of the loop: the queried iterate and what happened to it."""

    index: int
    w: np.ndarray
    loss: float
    cert_outcome: CertOutcome
    step: float
    grad: Optional[np.ndarray] = None
    cert_value: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "round": self.index,
            "w": [float(a) for a in self.w],
            "loss": self.loss,
            "cert_outcome": self.cert_outcome.value,
            "step": self.step,
            "grad": None if self.grad is None else [float(a) for a in self.grad],
            "cert_value": self.cert_value,
        }


@dataclass
class LearnerTrace:
    """Full history of a run, serializable as JSON-lines (one round per line)."""

    rounds: List[RoundRecord] = field(default_factory=list)
    final_w: Optional[np.ndarray] = None
    stop_reason: Optional[StopReason] = None
    fallback_used: bool = False

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.rounds]
        tail = {
            "final_w": None
            if self.final_w is None
            else [float(a) for a in self.final_w],
            "stop_reason": None if self.stop_reason is None else self.stop_reason.value,
            "fallback_used": self.fallback_used,
        }
        lines.append(json.dumps(tail, sort_keys=True))
        return "\n".join(lines) + "\n"


def model_payload(w: np.ndarray, cfg: LearnerConfig) -> dict:
    """The final-model record: direction plus the config fingerprint."""
    blob = json.dumps(
        {
            "epsilon": cfg.epsilon,
            "delta": cfg.delta,
            "rho_eps": cfg.rho_eps,
            "max_rounds": cfg.max_rounds,
            "samples_n": cfg.samples_n,
            "seed": cfg.seed,
            "start": cfg.start,
        },
        sort_keys=True,
    )
    return {
        "w": [float(a) for a in w],
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "seed": cfg.seed,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
    }


def loss_gradient(samples, handle: Optional[CertificateHandle], rho_eps: float) -> np.ndarray:
    """Gradient of the round's linear loss: ``-mean((T(x) + rho/2) * y * x)``.

    With no handle (the zero-iterate branch) only the margin term
    ``-mean((rho/2) * y * x)`` remains.  The norm is at most
    ``1 + rho/2`` times the mean sample norm scale.
    """
    if rho_eps < 0:
        raise InvalidConfig(f"rho_eps must be >= 0, got {rho_eps}")
    batch = as_labeled_batch(samples)
    if len(batch) == 0:
        raise InvalidConfig("loss gradient needs a nonempty batch")
    weights = np.full(len(batch), rho_eps / 2.0)
    if handle is not None:
        weights = weights + handle.t_values(batch.x)
    terms = weights * batch.y.astype(np.float64)
    return -np.asarray((batch.x * terms[:, None]).mean(axis=0))


def ogd_step(w_t: np.ndarray, grad: np.ndarray, eta_t: float) -> np.ndarray:
    """One projected gradient step: ``Pi_ball(w - eta * grad)``."""
    w = np.asarray(w_t, dtype=np.float64)
    return project_to_ball(w - eta_t * np.asarray(grad, dtype=np.float64))


def rho_for_well_behaved(
    theta: float,
    params: WellBehavedParams,
    noise: NoiseSpec,
    dimension: int,
) -> float:
    """Default certificate-magnitude floor ``rho(theta)`` for the learner.

    ``(theta * L * R / (A * d))**(2/alpha) * theta / (beta * d)``, clamped to
    (0, 1].  Decreasing as theta decreases, as the oracle contract requires.
    The exponent constants are heuristic closures; auto-calibration replaces
    the value with half the measured certificate magnitude on a pilot run.
    """
    if not (0.0 < theta <= math.pi):
        raise InvalidConfig(f"theta must lie in (0, pi], got {theta}")
    if dimension < 2:
        raise InvalidConfig(f"dimension must be >= 2, got {dimension}")
    base = theta * params.L * params.R / (noise.bigA * dimension)
    value = base ** (2.0 / noise.alpha) * theta / (params.beta * dimension)
    return float(min(max(value, 1e-300), 1.0))


def angle_to_error(theta: float, params: WellBehavedParams, eps: float) -> float:
    """Convert an angle guarantee into a 0-1 error budget.

    ``U * beta^2 * log^2(1/eps) * theta + eps`` — the disagreement mass a
    well-behaved marginal can place in a wedge of angle theta, plus the
    target slack.
    """
    if theta < 0:
        raise InvalidConfig(f"theta must be >= 0, got {theta}")
    if not (0.0 < eps <= 1.0):
        raise InvalidConfig(f"eps must lie in (0, 1], got {eps}")
    return params.U * params.beta**2 * math.log(1.0 / eps) ** 2 * theta + eps


class _LearnerSource:
    """Fresh per-round batches from an instance, dataset, or callable."""

    def __init__(self, source, seed: int) -> None:
        self.instance: Optional[InstanceSpec] = None
        self.data: Optional[LabeledBatch] = None
        self.fn: Optional[Callable[[int], LabeledBatch]] = None
        self.offset = 0
        self.cursor = LEARNER_BATCH_BASE + 10_000 * seed
        if isinstance(source, InstanceSpec):
            self.instance = source
        elif callable(source):
            self.fn = source
        else:
            self.data = as_labeled_batch(source)

    def next(self, n: int) -> LabeledBatch:
        if self.instance is not None:
            batch = sample_batch(self.instance, n, batch=self.cursor)
            self.cursor += 1
            return batch
        if self.fn is not None:
            return as_labeled_batch(self.fn(n))
        if self.offset >= len(self.data):
            raise SourceExhausted(f"dataset exhausted after {self.offset} samples")
        out = self.data[self.offset : self.offset + n]
        self.offset += len(out)
        return out


def _start_vector(d: int, cfg: LearnerConfig) -> np.ndarray:
    if cfg.start == "zero":
        return np.zeros(d)
    if cfg.start == "random":
        rng = np.random.default_rng(cfg.seed)
        v = rng.standard_normal(d)
        return v / np.linalg.norm(v)
    w = np.zeros(d)
    w[0] = 1.0
    return w


def learn(sample_source, oracle, cfg: LearnerConfig):
    """Run the certificate-driven OGD loop; returns ``(direction, trace)``.

    Round t: if the iterate is zero, take the margin-only gradient step;
    otherwise query the oracle at the normalized iterate with
    ``(epsilon, delta / max_rounds)``.  Fail returns the current direction.
    A witness is re-validated on the round's fresh batch — a validation
    value above ``-rho/4`` plus three standard errors (when the batch holds
    any support points at all) is logged as an oracle contract violation
    and treated as Fail.  Otherwise the handle's loss gradient steps the
    iterate with ``eta_t = 1 / (sqrt(t) + rho)``.  If all rounds pass, the
    round whose validation value was least negative supplies the fallback
    answer (flagged in the trace).
    """
    rho = cfg.rho_eps
    if rho is None:
        if not hasattr(oracle, "rho"):
            raise InvalidConfig(
                "rho_eps not set and the oracle exposes no rho(theta)"
            )
        rho = float(oracle.rho(cfg.epsilon))
    if not (0.0 < rho <= 1.0):
        raise InvalidConfig(f"resolved rho must lie in (0, 1], got {rho}")
    source = _LearnerSource(sample_source, cfg.seed)
    per_round = max(1, cfg.samples_n // cfg.max_rounds)
    trace = LearnerTrace()
    w: Optional[np.ndarray] = None
    try:
        return _learn_rounds(source, oracle, cfg, rho, per_round, trace, w)
    except TsyblearnError as err:
        # Let callers flush whatever rounds completed before the failure.
        err.partial_trace = trace
        raise


def _learn_rounds(source, oracle, cfg, rho, per_round, trace, w):
    for t in range(1, cfg.max_rounds + 1):
        batch = source.next(per_round)
        if w is None:
            w = _start_vector(batch.x.shape[1], cfg)
        eta = 1.0 / (math.sqrt(t) + rho)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            g = loss_gradient(batch, None, rho)
            trace.rounds.append(
                RoundRecord(t, w.copy(), 0.0, CertOutcome.ZERO_VECTOR, eta, g)
            )
            w = ogd_step(w, g, eta)
            continue
        # A nonzero iterate may be microscopically small when rho is tiny
        # (the margin-only step scales with rho); its direction is still
        # well-defined, so normalize directly rather than through a
        # magnitude-thresholded helper.
        wn = w / norm_w
        handle = oracle.query(wn, cfg.epsilon, cfg.delta / cfg.max_rounds)
        if handle is None:
            trace.rounds.append(
                RoundRecord(t, w.copy(), 0.0, CertOutcome.FAIL, eta)
            )
            trace.stop_reason = StopReason.ORACLE_FAIL
            trace.final_w = wn
            return wn, trace
        terms = handle.margin_terms(batch)
        hval = float(np.mean(terms))
        n_support = int(np.count_nonzero(terms))
        se = float(np.std(terms) / math.sqrt(len(terms)))
        # A batch with no support points carries no evidence either way, and
        # the negativity bar gets the same 3-standard-error measurement slack
        # the oracle's own holdout check uses.
        if n_support > 0 and hval > -rho / 4.0 + 3.0 * se:
            violation = OracleContractViolation(
                f"round {t}: holdout value {hval:.4g} above "
                f"-rho/4 + 3se = {-rho / 4.0 + 3.0 * se:.4g}"
            )
            logger.warning("%s", violation)
            trace.rounds.append(
                RoundRecord(
                    t, w.copy(), 0.0, CertOutcome.FAIL, eta, cert_value=hval
                )
            )
            trace.stop_reason = StopReason.CONTRACT_VIOLATION
            trace.final_w = wn
            return wn, trace
        g = loss_gradient(batch, handle, rho)
        loss = float(g @ w)
        trace.rounds.append(
            RoundRecord(
                t, w.copy(), loss, CertOutcome.WITNESS, eta, g, cert_value=hval
            )
        )
        w = ogd_step(w, g, eta)
    witness_rounds = [
        r for r in trace.rounds if r.cert_outcome is CertOutcome.WITNESS
    ]
    if witness_rounds:
        best = max(witness_rounds, key=lambda r: r.cert_value)
        final = best.w / np.linalg.norm(best.w)
        logger.info(
            "all %d rounds produced witnesses; falling back to the least-"
            "negative round %d (value %.4g)",
            cfg.max_rounds,
            best.index,
            best.cert_value,
        )
    elif float(np.linalg.norm(w)) > 0.0:
        final = w / np.linalg.norm(w)
    else:
        final = np.zeros(w.shape[0])
        final[0] = 1.0
    trace.stop_reason = StopReason.EXHAUSTED
    trace.fallback_used = True
    trace.final_w = final
    return final, trace


def _perspective_scale(theta: float) -> float:
    """Perspective parameter for a scan targeted at angles >= theta.

    ``rho = tan(theta)`` puts the projected decision boundary's offset
    ``1/tan(angle)`` inside the scan range ``(R'/2, R']`` exactly when the
    true angle is in the targeted regime, and beyond the window (forcing
    Fail) when the angle is below theta; capped at 1.
    """
    return float(min(1.0, math.tan(min(theta, math.pi / 2.5))))


class WellBehavedCertOracle:
    """Certificate oracle for well-behaved marginals: random-restart scans.

    Each query builds the band-and-projection transform around the queried
    direction, measures the band mass on a pilot batch, and runs the
    threshold-scan search from a few random orthogonal initializations.
    Consumes its own sample stream; create a fresh oracle per run for
    reproducibility.
    """

    def __init__(
        self,
        instance: InstanceSpec,
        params: WellBehavedParams,
        noise: NoiseSpec,
        *,
        samples_per_round: int = 50_000,
        max_iters: int = 25,
        restarts: int = 3,
        seed: int = 0,
        rho_override: Optional[float] = None,
    ) -> None:
        if restarts < 1:
            raise InvalidConfig(f"restarts must be >= 1, got {restarts}")
        self.instance = instance
        self.params = params
        self.noise = noise
        self.samples_per_round = samples_per_round
        self.max_iters = max_iters
        self.restarts = restarts
        self.seed = seed
        self.rho_override = rho_override
        self.queries = 0
        self._cursor = ORACLE_BATCH_BASE + 10_000 * seed
        self._cursor0 = self._cursor

    @property
    def samples_drawn(self) -> int:
        """Raw samples consumed so far (each cursor step is one batch)."""
        return (self._cursor - self._cursor0) * self.samples_per_round

    def rho(self, theta: float) -> float:
        if self.rho_override is not None:
            return self.rho_override
        return rho_for_well_behaved(
            theta, self.params, self.noise, self.instance.marginal.dimension
        )

    def calibrate_rho(self, theta: float, *, seed: int = 0) -> float:
        """Set rho to half the certificate magnitude measured near angle theta.

        Runs a pilot query at a direction rotated ``1.5 * theta`` away from
        the instance's target — the midpoint of the factor-two angle regime
        the scan's perspective scale targets, where the projected boundary
        offset sits strictly inside the scan range.  Calibration uses harness
        knowledge of the target; the resulting rho is then fixed for real
        queries.
        """
        target = self.instance.target
        d = target.shape[0]
        probe = np.zeros(d)
        probe[int(np.argmin(np.abs(target)))] = 1.0
        ortho = probe - (probe @ target) * target
        ortho /= np.linalg.norm(ortho)
        pilot_angle = min(1.5 * theta, 1.5)
        w_pilot = math.cos(pilot_angle) * target + math.sin(pilot_angle) * ortho
        handle = self.query(w_pilot, theta, 0.1)
        if handle is None:
            logger.warning(
                "rho calibration at theta=%.3g found no certificate; "
                "keeping default", theta
            )
            return self.rho(theta)
        pilot_batch = sample_batch(
            self.instance, self.samples_per_round, batch=self._advance()
        )
        magnitude = abs(handle.margin_correlation(pilot_batch))
        self.rho_override = float(min(1.0, max(magnitude / 2.0, 1e-300)))
        return self.rho_override

    def _advance(self) -> int:
        out = self._cursor
        self._cursor += 1
        return out

    def query(self, w: np.ndarray, theta: float, delta: float):
        check_unit(w, "w")
        self.queries += 1
        rho_persp = _perspective_scale(theta)
        tcfg = TransformConfig(w=w, rho=rho_persp, R=self.params.R)
        pilot = sample_batch(
            self.instance, self.samples_per_round, batch=self._advance()
        )
        s = pilot.x @ tcfg.w
        band_mass = float(np.mean((s >= tcfg.sigma1) & (s <= tcfg.sigma2)))
        if band_mass <= 0.0:
            logger.debug("query %d: empty band, Fail", self.queries)
            return None
        cfg = CertSearchConfig.for_transformed(
            self.noise.alpha,
            self.noise.bigA,
            self.params.L,
            self.params.R,
            self.params.beta,
            rho_persp,
            band_mass,
            theta_min=theta,
            max_iters=self.max_iters,
            samples_per_round=self.samples_per_round,
            seed=self.seed,
        )
        d = w.shape[0]
        for restart in range(self.restarts):
            v0 = random_init(
                d, seed=self.seed + 7919 * self.queries + restart, orthogonal_to=w
            )
            src = TransformedSampleSource(
                tcfg,
                self.samples_per_round,
                instance=self.instance,
                start_batch=self._cursor,
            )
            witness = compute_certificate(src, v0, cfg)
            self._cursor = src.next_batch_index
            if witness is not None:
                return CertificateHandle(witness)
        return None


class LogConcaveWarmStartOracle:
    """Certificate oracle that seeds the scan from label-moment structure.

    Runs the doubling loop over angle guesses ``theta, 2*theta, ..., 1``:
    each guess warm-starts a direction from the band/Chow pipeline and tries
    the threshold scan from both signs of it.  The first validated witness
    wins (the loop is sequential, so the smallest guess wins ties by
    construction).
    """

    def __init__(
        self,
        instance: InstanceSpec,
        params: WellBehavedParams,
        noise: NoiseSpec,
        *,
        samples_per_round: int = 50_000,
        warm_samples: int = 400_000,
        max_iters: int = 12,
        seed: int = 0,
        rho_override: Optional[float] = None,
    ) -> None:
        self.instance = instance
        self.params = params
        self.noise = noise
        self.samples_per_round = samples_per_round
        self.warm_samples = warm_samples
        self.max_iters = max_iters
        self.seed = seed
        self.rho_override = rho_override
        self.queries = 0
        self._cursor = ORACLE_BATCH_BASE + 10_000 * seed + 1_000_000
        self._cursor0 = self._cursor
        self.warm_calls = 0

    @property
    def samples_drawn(self) -> int:
        """Raw samples consumed: scan batches plus warm-start draws."""
        scan = (self._cursor - self._cursor0) * self.samples_per_round
        return scan + self.warm_calls * self.warm_samples

    def rho(self, theta: float) -> float:
        if self.rho_override is not None:
            return self.rho_override
        return rho_for_well_behaved(
            theta, self.params, self.noise, self.instance.marginal.dimension
        )

    def _guesses(self, theta: float):
        out = []
        g = theta
        while g < GUESS_CAP:
            out.append(g)
            g *= 2.0
        out.append(GUESS_CAP)
        return out

    def query(self, w: np.ndarray, theta: float, delta: float):
        check_unit(w, "w")
        self.queries += 1
        for guess_idx, guess in enumerate(self._guesses(theta)):
            wcfg = WarmStartConfig(
                alpha=self.noise.alpha,
                bigA=self.noise.bigA,
                epsilon=guess,
                seed=self.seed + 104_729 * self.queries + guess_idx,
                samples=self.warm_samples,
            )
            self.warm_calls += 1
            try:
                ws = warm_start(self.instance, w, wcfg)
            except (
                EmptyBand,
                EmptySubspace,
                SourceExhausted,
                SingularCovariance,
                Nonconvergence,
            ) as err:
                logger.debug("guess %.3g: warm start failed (%s)", guess, err)
                continue
            rho_persp = _perspective_scale(guess)
            tcfg = TransformConfig(w=w, rho=rho_persp, R=self.params.R)
            pilot = sample_batch(
                self.instance, self.samples_per_round, batch=self._advance()
            )
            s = pilot.x @ tcfg.w
            band_mass = float(np.mean((s >= tcfg.sigma1) & (s <= tcfg.sigma2)))
            if band_mass <= 0.0:
                continue
            cfg = CertSearchConfig.for_transformed(
                self.noise.alpha,
                self.noise.bigA,
                self.params.L,
                self.params.R,
                self.params.beta,
                rho_persp,
                band_mass,
                theta_min=guess,
                max_iters=self.max_iters,
                samples_per_round=self.samples_per_round,
                seed=self.seed,
            )
            for v0 in (ws.v, -ws.v):
                src = TransformedSampleSource(
                    tcfg,
                    self.samples_per_round,
                    instance=self.instance,
                    start_batch=self._cursor,
                )
                witness = compute_certificate(src, v0, cfg)
                self._cursor = src.next_batch_index
                if witness is not None:
                    return CertificateHandle(witness)
        return None

    def _advance(self) -> int:
        out = self._cursor
        self._cursor += 1
        return out
