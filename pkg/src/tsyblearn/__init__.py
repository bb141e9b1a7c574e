"""Learning homogeneous halfspaces under Tsybakov noise.

A certificate-driven pipeline: synthetic instances with certified noise
profiles, a band-and-projection certificate search, a spectral warm start
for log-concave marginals, an online-gradient outer loop, and a batch CLI.
"""

from __future__ import annotations

from .certificate import (
    CertSearchConfig,
    CertificateWitness,
    TransformConfig,
    TransformedSampleSource,
    compute_certificate,
    lift_certificate,
)
from .errors import (
    DegenerateDirection,
    DivisionNearZero,
    EmptyBand,
    EmptySubspace,
    InvalidConfig,
    Nonconvergence,
    OracleContractViolation,
    SingularCovariance,
    SourceExhausted,
    TsyblearnError,
    UnsupportedFamily,
)
from .geometry import angle, as_unit, orth_component, project_to_ball
from .learner import (
    CertOutcome,
    CertificateHandle,
    LearnerConfig,
    LearnerTrace,
    LogConcaveWarmStartOracle,
    RoundRecord,
    StopReason,
    WellBehavedCertOracle,
    angle_to_error,
    learn,
    model_payload,
    rho_for_well_behaved,
)
from .synthetic import (
    Family,
    InstanceSpec,
    LabeledBatch,
    MarginalSpec,
    NoiseSpec,
    WellBehavedParams,
    adversarialish,
    constant_rate,
    disagreement_error,
    margin_power_law,
    read_binary,
    read_text,
    sample_batch,
    well_behaved_params,
    write_binary,
    write_text,
)
from .warmstart import (
    WarmStartConfig,
    WarmStartResult,
    chow_parameters,
    psgd_stationary_point,
    rejection_resample,
    standardize,
    warm_start,
)

__version__ = "0.1.0"

__all__ = [
    "CertOutcome",
    "CertSearchConfig",
    "CertificateHandle",
    "CertificateWitness",
    "DegenerateDirection",
    "DivisionNearZero",
    "EmptyBand",
    "EmptySubspace",
    "Family",
    "InstanceSpec",
    "InvalidConfig",
    "LabeledBatch",
    "LearnerConfig",
    "LearnerTrace",
    "LogConcaveWarmStartOracle",
    "MarginalSpec",
    "NoiseSpec",
    "Nonconvergence",
    "OracleContractViolation",
    "RoundRecord",
    "SingularCovariance",
    "SourceExhausted",
    "StopReason",
    "TransformConfig",
    "TransformedSampleSource",
    "TsyblearnError",
    "UnsupportedFamily",
    "WarmStartConfig",
    "WarmStartResult",
    "WellBehavedCertOracle",
    "WellBehavedParams",
    "adversarialish",
    "angle",
    "angle_to_error",
    "as_unit",
    "chow_parameters",
    "compute_certificate",
    "constant_rate",
    "disagreement_error",
    "learn",
    "lift_certificate",
    "margin_power_law",
    "model_payload",
    "orth_component",
    "project_to_ball",
    "psgd_stationary_point",
    "read_binary",
    "read_text",
    "rejection_resample",
    "rho_for_well_behaved",
    "sample_batch",
    "standardize",
    "warm_start",
    "well_behaved_params",
    "write_binary",
    "write_text",
]
