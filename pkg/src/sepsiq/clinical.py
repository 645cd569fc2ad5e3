"""The sepsis decision process: state schema, 5x5 dose actions, rewards.

Feature order is fixed and shared by the simulator, the CSV schema and the
network input layer. IV fluid doses are mL over the 4-hour window;
vasopressor doses are the window's maximum rate in ug/kg/min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DomainError, FittingError, SchemaError

FEATURE_NAMES: tuple = (
    "Age",
    "Gender",
    "Shock Index",
    "Readmission",
    "Elixhauser",
    "Glasgow Coma Scale",
    "SIRS",
    "SOFA",
    "Arterial Lactate",
    "Bicarbonate",
    "INR",
    "Sodium",
    "White Blood Cell Count",
    "CO2",
    "Creatinine",
    "Ionised Calcium",
    "SGOT",
    "Prothrombin Time",
    "Platelets",
    "Platelet Count",
    "Total Bilirubin",
    "Albumin",
    "Calcium",
    "Glucose",
    "Hemoglobin",
    "PTT",
    "Potassium",
    "SGPT",
    "Arterial Blood Gas",
    "BUN",
    "Chloride",
    "Arterial pH",
    "Magnesium",
    "Diastolic Blood Pressure",
    "Mean Blood Pressure",
    "Respiratory Rate",
    "SpO2",
    "Systolic Blood Pressure",
    "PaCO2",
    "PaO2",
    "FiO2",
    "PaO2/FiO2 Ratio",
    "Temperature (C)",
    "Weight (kg)",
    "Heart Rate",
    "Total Fluid Output",
    "Mechanical Ventilation",
    "Fluid Output (4h)",
)

N_FEATURES = 48
SOFA_INDEX = FEATURE_NAMES.index("SOFA")
LACTATE_INDEX = FEATURE_NAMES.index("Arterial Lactate")

N_DOSE_BINS = 5
N_ACTIONS = N_DOSE_BINS * N_DOSE_BINS


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names with the indices the reward logic reads."""

    names: tuple
    sofa_index: int
    lactate_index: int

    def __post_init__(self):
        if len(self.names) != N_FEATURES:
            raise SchemaError(f"expected {N_FEATURES} features, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("feature names must be unique")
        for idx, label in ((self.sofa_index, "sofa"), (self.lactate_index, "lactate")):
            if not 0 <= idx < len(self.names):
                raise SchemaError(f"{label} index {idx} out of range")


DEFAULT_SCHEMA = FeatureSchema(FEATURE_NAMES, SOFA_INDEX, LACTATE_INDEX)


@dataclass(frozen=True)
class DoseAction:
    """One (IV fluid bin, vasopressor bin) pair; (0, 0) means no drugs."""

    iv_bin: int
    vp_bin: int

    def __post_init__(self):
        for label, value in (("iv_bin", self.iv_bin), ("vp_bin", self.vp_bin)):
            if not 0 <= value < N_DOSE_BINS:
                raise DomainError(f"{label} must be in 0..4, got {value}")


def action_index(action: DoseAction) -> int:
    """Flat index, IV-major: index = 5 * iv_bin + vp_bin."""
    return N_DOSE_BINS * action.iv_bin + action.vp_bin


def index_to_action(index: int) -> DoseAction:
    if not 0 <= index < N_ACTIONS:
        raise DomainError(f"action index must be in 0..24, got {index}")
    return DoseAction(index // N_DOSE_BINS, index % N_DOSE_BINS)


@dataclass(frozen=True)
class QuartileBinner:
    """Nearest-rank quartile cut-points fitted on one drug's nonzero doses."""

    q1: float
    q2: float
    q3: float
    n_fit: int

    def __post_init__(self):
        if not (0.0 < self.q1 <= self.q2 <= self.q3):
            raise DomainError(
                f"cut-points must be positive and non-decreasing, got "
                f"({self.q1}, {self.q2}, {self.q3})"
            )

    @property
    def cutpoints(self) -> tuple:
        return (self.q1, self.q2, self.q3)


def fit_bins(nonzero_doses: Sequence[float]) -> QuartileBinner:
    """Fit quartile cut-points at nearest ranks ceil(N/4), ceil(N/2), ceil(3N/4)."""
    doses = np.asarray(list(nonzero_doses), dtype=np.float64)
    if doses.size and (not np.all(np.isfinite(doses)) or np.any(doses <= 0.0)):
        raise DomainError("doses must be finite and strictly positive")
    if np.unique(doses).size < 4:
        raise FittingError(
            f"need at least 4 distinct positive doses, got {np.unique(doses).size}"
        )
    ordered = np.sort(doses)
    n = ordered.size
    ranks = (math.ceil(n / 4), math.ceil(n / 2), math.ceil(3 * n / 4))
    q1, q2, q3 = (float(ordered[r - 1]) for r in ranks)
    return QuartileBinner(q1, q2, q3, n)


def dose_to_bin(binner: QuartileBinner, dose: float) -> int:
    """0 for no drug, else 1 + number of cut-points strictly below the dose."""
    if dose < 0.0 or not np.isfinite(dose):
        raise DomainError(f"dose must be finite and non-negative, got {dose}")
    if dose == 0.0:
        return 0
    return min(4, 1 + sum(cut < dose for cut in binner.cutpoints))


@dataclass(frozen=True)
class DoseBinners:
    """The fitted binners for both drugs, persisted alongside checkpoints."""

    iv: QuartileBinner
    vp: QuartileBinner


def bin_action(binners: DoseBinners, iv_dose: float, vp_dose: float) -> int:
    return action_index(
        DoseAction(dose_to_bin(binners.iv, iv_dose), dose_to_bin(binners.vp, vp_dose))
    )


_BINNER_KEYS = ("q1", "q2", "q3", "n_fit")


def save_binners(path, binners: DoseBinners) -> None:
    lines = []
    for drug, binner in (("iv", binners.iv), ("vp", binners.vp)):
        for key in _BINNER_KEYS:
            value = getattr(binner, key)
            text = repr(float(value)) if key != "n_fit" else str(value)
            lines.append(f"{drug}_{key} = {text}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_binners(path) -> DoseBinners:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SchemaError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    expected = {f"{drug}_{key}" for drug in ("iv", "vp") for key in _BINNER_KEYS}
    if set(values) != expected:
        missing = sorted(expected - set(values))
        extra = sorted(set(values) - expected)
        raise SchemaError(f"{path}: missing keys {missing}, unexpected keys {extra}")

    def build(drug: str) -> QuartileBinner:
        return QuartileBinner(
            q1=float(values[f"{drug}_q1"]),
            q2=float(values[f"{drug}_q2"]),
            q3=float(values[f"{drug}_q3"]),
            n_fit=int(values[f"{drug}_n_fit"]),
        )

    return DoseBinners(iv=build("iv"), vp=build("vp"))


@dataclass(frozen=True)
class RewardParams:
    """Terminal outcome rewards plus intermediate shaping coefficients.

    The intermediate reward is
    ``c0 * 1{sofa' == sofa and sofa > 0} + c1 * (sofa' - sofa)
    + c2 * tanh(lactate' - lactate)``; defaults penalize stagnant or rising
    organ failure and rising lactate.
    """

    terminal_survive: float = 15.0
    terminal_death: float = -15.0
    c0: float = -0.025
    c1: float = -0.125
    c2: float = -2.0

    def __post_init__(self):
        if not self.terminal_survive > 0.0 > self.terminal_death:
            raise DomainError(
                "terminal_survive must be positive and terminal_death negative"
            )


def _check_clinical_range(sofa: float, lactate: float) -> None:
    if not (0.0 <= sofa <= 24.0) or not np.isfinite(sofa):
        raise DomainError(f"SOFA must be in [0, 24], got {sofa}")
    if lactate < 0.0 or not np.isfinite(lactate):
        raise DomainError(f"lactate must be non-negative, got {lactate}")


def intermediate_reward(
    sofa: float,
    sofa_next: float,
    lactate: float,
    lactate_next: float,
    params: RewardParams,
) -> float:
    """Shaping reward for a non-terminal 4-hour transition."""
    _check_clinical_range(sofa, lactate)
    _check_clinical_range(sofa_next, lactate_next)
    stagnant = 1.0 if (sofa_next == sofa and sofa > 0.0) else 0.0
    return float(
        params.c0 * stagnant
        + params.c1 * (sofa_next - sofa)
        + params.c2 * math.tanh(lactate_next - lactate)
    )


def terminal_reward(survived: bool, params: RewardParams) -> float:
    return params.terminal_survive if survived else params.terminal_death


class SofaGroup(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


def sofa_group(sofa: float) -> SofaGroup:
    """Severity group: SOFA < 5 low, 5..15 medium (inclusive), > 15 high."""
    if not (0.0 <= sofa <= 24.0) or not np.isfinite(sofa):
        raise DomainError(f"SOFA must be in [0, 24], got {sofa}")
    if sofa < 5.0:
        return SofaGroup.LOW
    if sofa <= 15.0:
        return SofaGroup.MEDIUM
    return SofaGroup.HIGH
