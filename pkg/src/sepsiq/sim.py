"""Synthetic septic-cohort generator emitting offline trajectories.

A latent severity process drives everything: observed SOFA is a noisy,
rounded read of latent severity, lactate relaxes toward a severity-dependent
equilibrium, and a logistic hazard in latent severity decides mortality.
Treatments act through *mismatch* against a severity-appropriate dose level:
well-matched IV fluids pull severity down, mis-dosed fluids let it climb,
and vasopressor mismatch scales the mortality hazard (with excess
vasopressors also pushing lactate up). The synthetic clinician doses around
the appropriate level with a per-patient practice bias and softmax jitter,
and essentially never gives vasopressors to low-SOFA patients.

The other 45 features are distractors: AR(1) noise around plausible
clinical ranges with a mild loading on observed SOFA. Mortality depends on
the latent path, not on the observed features, so the problem stays
partially observed.

Per-patient generator streams are derived from (seed, patient_id), which
makes trajectories independent of cohort size, and dynamics noise is drawn
on its own stream in a fixed order so that forcing a different action with
zero treatment-effect coefficients reproduces the identical severity path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .clinical import (
    LACTATE_INDEX,
    N_FEATURES,
    SOFA_INDEX,
    DoseAction,
    RewardParams,
    action_index,
    index_to_action,
    intermediate_reward,
    terminal_reward,
)
from .data import TransitionRecord
from .errors import ConfigError
from .kvconfig import dataclass_from_kv, dataclass_to_kv


@dataclass
class SimParams:
    """Everything the generator needs; all coefficients are tunable."""

    cohort_size: int = 100
    max_steps: int = 20
    seed: int = 0
    # admission severity (latent, clipped to [0.5, 24])
    init_sofa_mean: float = 9.0
    init_sofa_sd: float = 5.5
    # severity dynamics per 4-hour step
    base_drift: float = 0.25
    iv_effect: float = 0.7
    drift_sd: float = 0.8
    # mortality hazard (logistic in latent severity, scaled by VP mismatch)
    hazard_mid: float = 14.0
    hazard_width: float = 2.2
    hazard_scale: float = 0.08
    vp_hazard_effect: float = 0.35
    # lactate dynamics
    lactate_pull: float = 0.25
    lactate_sd: float = 0.3
    vp_lactate_effect: float = 0.15
    # observation of SOFA
    sofa_obs_sd: float = 0.8
    # behavior (clinician) policy
    iv_temp: float = 0.7
    vp_temp: float = 0.6
    severity_sensitivity: float = 1.0
    practice_variation: float = 0.6
    explore_rate: float = 0.10
    # discharge once latent severity falls this low
    discharge_sofa: float = 1.0
    # distractor feature autocorrelation
    feature_ar: float = 0.7

    def validate(self) -> None:
        if self.cohort_size < 1:
            raise ConfigError(f"cohort_size must be >= 1, got {self.cohort_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.iv_temp <= 0 or self.vp_temp <= 0:
            raise ConfigError("policy temperatures must be positive")
        if not 0.0 <= self.explore_rate <= 1.0:
            raise ConfigError("explore_rate must be in [0, 1]")
        if self.hazard_scale < 0 or self.hazard_width <= 0:
            raise ConfigError("hazard parameters out of range")
        worst = self.hazard_scale * math.exp(self.vp_hazard_effect * 3.0)
        if worst > 1.0:
            raise ConfigError(
                f"hazard can exceed 1 (worst case {worst:.3f}); lower hazard_scale "
                "or vp_hazard_effect"
            )
        if not 0.0 <= self.feature_ar < 1.0:
            raise ConfigError("feature_ar must be in [0, 1)")

    def to_text(self) -> str:
        return dataclass_to_kv(self)

    @classmethod
    def from_text(cls, text: str) -> "SimParams":
        params = dataclass_from_kv(cls, text)
        params.validate()
        return params


def appropriate_iv_bin(sofa: float) -> int:
    """Fluid level a well-matched clinician targets at this severity."""
    return int(np.clip(round(sofa / 5.0), 0, 4))


def appropriate_vp_bin(sofa: float) -> int:
    """Vasopressor level: none below SOFA 5, then ramping to the max bin."""
    if sofa < 5.0:
        return 0
    return int(np.clip(1 + math.floor((sofa - 5.0) / 4.0), 1, 4))


def _sample_level(target: float, temp: float, rng: np.random.Generator) -> int:
    """Draw a bin 0..4 with softmax(-|bin - target| / temp); one rng draw."""
    logits = -np.abs(np.arange(5, dtype=np.float64) - target) / temp
    weights = np.exp(logits - logits.max())
    cdf = np.cumsum(weights / weights.sum())
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def behavior_action(
    state: np.ndarray,
    params: SimParams,
    rng: np.random.Generator,
    iv_bias: float = 0.0,
    vp_bias: float = 0.0,
) -> DoseAction:
    """Severity-responsive stochastic clinician policy.

    Reads observed SOFA from the raw state vector. With default parameters
    the vasopressor distribution is stochastically increasing in SOFA and
    puts most of its mass on bin 0 below SOFA 5; ``severity_sensitivity`` 0
    removes the SOFA dependence entirely. ``explore_rate`` mixes in a
    uniformly random dose pair, so every action keeps some support in every
    severity stratum (an offline learner needs anchors even for rarely
    chosen treatments).
    """
    if params.explore_rate > 0.0 and rng.random() < params.explore_rate:
        return index_to_action(int(rng.integers(25)))
    sofa = float(state[SOFA_INDEX])
    s = params.severity_sensitivity
    iv_target = float(np.clip(s * appropriate_iv_bin(sofa) + iv_bias, 0.0, 4.0))
    vp_target = float(np.clip(s * appropriate_vp_bin(sofa) + vp_bias, 0.0, 4.0))
    iv_bin = _sample_level(iv_target, params.iv_temp, rng)
    vp_bin = _sample_level(vp_target, params.vp_temp, rng)
    return DoseAction(iv_bin, vp_bin)


# Raw dose ranges per bin: IV fluids in mL per 4h, vasopressors in ug/kg/min.
IV_DOSE_RANGES = ((0.0, 0.0), (20.0, 100.0), (100.0, 350.0), (350.0, 750.0), (750.0, 1800.0))
VP_DOSE_RANGES = ((0.0, 0.0), (0.01, 0.08), (0.08, 0.22), (0.22, 0.45), (0.45, 1.2))


def _draw_dose(ranges, level: int, rng: np.random.Generator) -> float:
    if level == 0:
        return 0.0
    lo, hi = ranges[level]
    return float(rng.uniform(lo, hi))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _lactate_equilibrium(latent_sofa: float) -> float:
    return 0.8 + 0.35 * latent_sofa


class SeverityStep(NamedTuple):
    latent_sofa: float
    lactate: float
    died: bool


def severity_step(
    latent_sofa: float,
    lactate: float,
    action: DoseAction,
    params: SimParams,
    rng: np.random.Generator,
) -> SeverityStep:
    """Advance latent severity/lactate one interval and draw mortality.

    Consumes exactly three draws (severity noise, lactate noise, death
    uniform) in a fixed order, so with all treatment-effect coefficients at
    zero the outcome is independent of the action.
    """
    mis_iv = abs(action.iv_bin - appropriate_iv_bin(latent_sofa))
    mis_vp = abs(action.vp_bin - appropriate_vp_bin(latent_sofa))
    eps_sofa = rng.standard_normal()
    eps_lac = rng.standard_normal()
    u_death = rng.random()

    drift = params.base_drift + params.iv_effect * (mis_iv - 1.0)
    next_sofa = float(np.clip(latent_sofa + drift + params.drift_sd * eps_sofa, 0.0, 24.0))

    excess_vp = max(0.0, action.vp_bin - appropriate_vp_bin(latent_sofa))
    pull = params.lactate_pull * (_lactate_equilibrium(next_sofa) - lactate)
    next_lac = float(
        np.clip(
            lactate + pull + params.vp_lactate_effect * excess_vp + params.lactate_sd * eps_lac,
            0.3,
            30.0,
        )
    )

    hazard = (
        params.hazard_scale
        * _sigmoid((next_sofa - params.hazard_mid) / params.hazard_width)
        * math.exp(params.vp_hazard_effect * (mis_vp - 1.0))
    )
    return SeverityStep(next_sofa, next_lac, bool(u_death < hazard))


@dataclass(frozen=True)
class FeatureSpec:
    mean: float
    sd: float
    low: float
    high: float
    sofa_loading: float
    static: bool = False


# Distractor generators for every feature except SOFA and lactate.
# Values are kept in plausible clinical ranges; loadings give a mild
# correlation with observed SOFA so the network has to learn to ignore them.
FEATURE_SPECS = {
    0: FeatureSpec(65.0, 15.0, 18.0, 95.0, 0.0, static=True),       # Age
    2: FeatureSpec(0.80, 0.15, 0.3, 1.8, 0.35),                     # Shock Index
    4: FeatureSpec(3.5, 2.0, 0.0, 12.0, 0.0, static=True),          # Elixhauser
    5: FeatureSpec(13.0, 2.5, 3.0, 15.0, -0.45),                    # GCS
    6: FeatureSpec(2.0, 1.0, 0.0, 4.0, 0.40),                       # SIRS
    9: FeatureSpec(23.0, 4.0, 8.0, 38.0, -0.30),                    # Bicarbonate
    10: FeatureSpec(1.4, 0.5, 0.8, 6.0, 0.30),                      # INR
    11: FeatureSpec(139.0, 4.5, 120.0, 158.0, -0.10),               # Sodium
    12: FeatureSpec(11.0, 4.5, 0.5, 40.0, 0.35),                    # WBC
    13: FeatureSpec(24.0, 4.0, 10.0, 40.0, -0.25),                  # CO2
    14: FeatureSpec(1.4, 0.8, 0.3, 8.0, 0.40),                      # Creatinine
    15: FeatureSpec(1.12, 0.08, 0.8, 1.45, -0.15),                  # Ionised Calcium
    16: FeatureSpec(45.0, 30.0, 8.0, 400.0, 0.30),                  # SGOT
    17: FeatureSpec(14.5, 3.5, 9.0, 40.0, 0.30),                    # Prothrombin Time
    18: FeatureSpec(220.0, 90.0, 15.0, 600.0, -0.35),               # Platelets
    19: FeatureSpec(215.0, 85.0, 15.0, 600.0, -0.35),               # Platelet Count
    20: FeatureSpec(1.2, 1.0, 0.1, 15.0, 0.35),                     # Total Bilirubin
    21: FeatureSpec(3.1, 0.6, 1.4, 5.0, -0.30),                     # Albumin
    22: FeatureSpec(8.4, 0.7, 6.0, 11.0, -0.15),                    # Calcium
    23: FeatureSpec(135.0, 45.0, 45.0, 400.0, 0.20),                # Glucose
    24: FeatureSpec(10.5, 2.0, 5.0, 17.0, -0.20),                   # Hemoglobin
    25: FeatureSpec(35.0, 10.0, 18.0, 110.0, 0.30),                 # PTT
    26: FeatureSpec(4.1, 0.5, 2.4, 6.8, 0.15),                      # Potassium
    27: FeatureSpec(40.0, 28.0, 5.0, 400.0, 0.25),                  # SGPT
    28: FeatureSpec(0.0, 3.5, -18.0, 15.0, -0.30),                  # Arterial Blood Gas (BE)
    29: FeatureSpec(25.0, 12.0, 3.0, 110.0, 0.40),                  # BUN
    30: FeatureSpec(104.0, 5.0, 85.0, 125.0, 0.10),                 # Chloride
    31: FeatureSpec(7.38, 0.06, 7.05, 7.60, -0.35),                 # Arterial pH
    32: FeatureSpec(2.0, 0.3, 1.0, 3.4, 0.05),                      # Magnesium
    33: FeatureSpec(62.0, 10.0, 30.0, 110.0, -0.30),                # Diastolic BP
    34: FeatureSpec(75.0, 11.0, 40.0, 130.0, -0.35),                # Mean BP
    35: FeatureSpec(20.0, 5.0, 6.0, 45.0, 0.35),                    # Respiratory Rate
    36: FeatureSpec(96.0, 2.5, 78.0, 100.0, -0.30),                 # SpO2
    37: FeatureSpec(115.0, 16.0, 65.0, 190.0, -0.35),               # Systolic BP
    38: FeatureSpec(39.0, 6.0, 18.0, 75.0, -0.20),                  # PaCO2
    39: FeatureSpec(95.0, 25.0, 40.0, 350.0, -0.25),                # PaO2
    40: FeatureSpec(0.45, 0.15, 0.21, 1.0, 0.40),                   # FiO2
    41: FeatureSpec(230.0, 90.0, 40.0, 520.0, -0.45),               # PaO2/FiO2
    42: FeatureSpec(37.3, 0.8, 34.0, 41.0, 0.25),                   # Temperature
    43: FeatureSpec(80.0, 16.0, 40.0, 160.0, 0.0, static=True),     # Weight
    44: FeatureSpec(95.0, 16.0, 40.0, 170.0, 0.35),                 # Heart Rate
    45: FeatureSpec(6000.0, 2500.0, 0.0, 20000.0, -0.20),           # Total Fluid Output
    47: FeatureSpec(220.0, 110.0, 0.0, 900.0, -0.30),               # Fluid Output (4h)
}

GENDER_INDEX = 1
READMISSION_INDEX = 3
MECH_VENT_INDEX = 46

_DYNAMIC_IDX = np.array(
    [i for i, spec in sorted(FEATURE_SPECS.items()) if not spec.static], dtype=np.int64
)
_STATIC_IDX = np.array(
    [i for i, spec in sorted(FEATURE_SPECS.items()) if spec.static], dtype=np.int64
)
_DYN_MEAN = np.array([FEATURE_SPECS[i].mean for i in _DYNAMIC_IDX])
_DYN_SD = np.array([FEATURE_SPECS[i].sd for i in _DYNAMIC_IDX])
_DYN_LOW = np.array([FEATURE_SPECS[i].low for i in _DYNAMIC_IDX])
_DYN_HIGH = np.array([FEATURE_SPECS[i].high for i in _DYNAMIC_IDX])
_DYN_LOADING = np.array([FEATURE_SPECS[i].sofa_loading for i in _DYNAMIC_IDX])
_SOFA_REF_MEAN = 9.0
_SOFA_REF_SD = 5.5


@dataclass
class _PatientFeatures:
    """Static values plus the AR(1) latent noise behind the distractors."""

    static_values: np.ndarray
    z: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator) -> "_PatientFeatures":
        statics = np.empty(len(_STATIC_IDX) + 2)
        for j, idx in enumerate(_STATIC_IDX):
            spec = FEATURE_SPECS[idx]
            statics[j] = np.clip(
                spec.mean + spec.sd * rng.standard_normal(), spec.low, spec.high
            )
        statics[-2] = float(rng.random() < 0.55)  # Gender
        statics[-1] = float(rng.random() < 0.20)  # Readmission
        return cls(static_values=statics, z=rng.standard_normal(len(_DYNAMIC_IDX)))

    def step(self, rho: float, rng: np.random.Generator) -> "_PatientFeatures":
        noise = rng.standard_normal(len(_DYNAMIC_IDX))
        return _PatientFeatures(
            static_values=self.static_values,
            z=rho * self.z + math.sqrt(1.0 - rho * rho) * noise,
        )


def _observe(
    latent_sofa: float,
    lactate: float,
    feats: _PatientFeatures,
    params: SimParams,
    rng: np.random.Generator,
) -> tuple:
    """Build the observed 48-feature state; returns (sofa_obs, state)."""
    sofa_obs = float(
        np.round(np.clip(latent_sofa + params.sofa_obs_sd * rng.standard_normal(), 0.0, 24.0))
    )
    vent_u = rng.random()

    state = np.zeros(N_FEATURES)
    state[SOFA_INDEX] = sofa_obs
    state[LACTATE_INDEX] = lactate

    sofa_z = (sofa_obs - _SOFA_REF_MEAN) / _SOFA_REF_SD
    mix = _DYN_LOADING * sofa_z + np.sqrt(1.0 - _DYN_LOADING**2) * feats.z
    state[_DYNAMIC_IDX] = np.clip(_DYN_MEAN + _DYN_SD * mix, _DYN_LOW, _DYN_HIGH)
    state[_STATIC_IDX] = feats.static_values[: len(_STATIC_IDX)]
    state[GENDER_INDEX] = feats.static_values[-2]
    state[READMISSION_INDEX] = feats.static_values[-1]
    state[MECH_VENT_INDEX] = float(vent_u < _sigmoid((sofa_obs - 11.0) / 3.0))
    return sofa_obs, state


@dataclass
class Trajectory:
    """One patient's ordered transitions; the last record is the terminal one."""

    patient_id: int
    records: list
    died: bool

    @property
    def terminal_timestep(self) -> int:
        return len(self.records)


def _practice_bias(sd: float, rng: np.random.Generator) -> float:
    return float(np.clip(np.round(sd * rng.standard_normal()), -2.0, 2.0))


def simulate_patient(
    patient_id: int,
    params: SimParams,
    rewards: RewardParams,
) -> Trajectory:
    """Generate one trajectory from streams derived from (seed, patient_id)."""
    seq = np.random.SeedSequence([params.seed, patient_id])
    dyn_rng, policy_rng, feat_rng = (np.random.default_rng(c) for c in seq.spawn(3))

    latent = float(np.clip(dyn_rng.normal(params.init_sofa_mean, params.init_sofa_sd), 0.5, 24.0))
    lactate = float(
        np.clip(_lactate_equilibrium(latent) + 0.5 * dyn_rng.standard_normal(), 0.3, 30.0)
    )
    iv_bias = _practice_bias(params.practice_variation, policy_rng)
    vp_bias = _practice_bias(params.practice_variation, policy_rng)
    feats = _PatientFeatures.init(feat_rng)
    sofa_obs, state = _observe(latent, lactate, feats, params, feat_rng)

    records = []
    died = False
    for t in range(params.max_steps):
        action = behavior_action(state, params, policy_rng, iv_bias, vp_bias)
        iv_dose = _draw_dose(IV_DOSE_RANGES, action.iv_bin, policy_rng)
        vp_dose = _draw_dose(VP_DOSE_RANGES, action.vp_bin, policy_rng)

        next_latent, next_lactate, died_now = severity_step(
            latent, lactate, action, params, dyn_rng
        )
        feats = feats.step(params.feature_ar, feat_rng)
        next_sofa_obs, next_state = _observe(
            next_latent, next_lactate, feats, params, feat_rng
        )

        terminal = (
            died_now
            or t == params.max_steps - 1
            or next_latent <= params.discharge_sofa
        )
        if terminal:
            died = died_now
            reward = terminal_reward(not died_now, rewards)
        else:
            reward = intermediate_reward(
                sofa_obs, next_sofa_obs, lactate, next_lactate, rewards
            )

        records.append(
            TransitionRecord(
                patient_id=patient_id,
                timestep=t,
                state=state,
                action_index=action_index(action),
                raw_iv_dose=iv_dose,
                raw_vp_dose=vp_dose,
                reward=reward,
                next_state=next_state,
                terminal=terminal,
                sofa=sofa_obs,
                lactate=lactate,
                died=False,  # trajectory outcome filled in below
            )
        )
        if terminal:
            break
        latent, lactate = next_latent, next_lactate
        sofa_obs, state = next_sofa_obs, next_state

    for rec in records:
        rec.died = died
    return Trajectory(patient_id=patient_id, records=records, died=died)


def generate_cohort(params: SimParams, rewards: RewardParams | None = None) -> list:
    """Deterministic cohort; patient i's trajectory does not depend on cohort size."""
    params.validate()
    rewards = rewards or RewardParams()
    return [simulate_patient(pid, params, rewards) for pid in range(params.cohort_size)]


def validate_trajectory(traj: Trajectory, rewards: RewardParams) -> None:
    """Full-scan well-formedness assertion used by tests and data tooling.

    Checks single-terminal placement, state chaining, reward consistency
    against the shaping formula, and the outcome/terminal-reward link.
    """
    records = traj.records
    assert records, "trajectory must contain at least one transition"
    for t, rec in enumerate(records):
        assert rec.timestep == t
        assert rec.terminal == (t == len(records) - 1), "terminal must be last and unique"
        assert rec.died == traj.died
        if t + 1 < len(records):
            np.testing.assert_array_equal(rec.next_state, records[t + 1].state)
        if rec.terminal:
            expected = terminal_reward(not traj.died, rewards)
        else:
            expected = intermediate_reward(
                rec.state[SOFA_INDEX],
                rec.next_state[SOFA_INDEX],
                rec.state[LACTATE_INDEX],
                rec.next_state[LACTATE_INDEX],
                rewards,
            )
        assert rec.reward == expected, f"reward mismatch at t={t}"
