"""Offline dataset contract: CSV schema, patient splits, normalization, sampling.

The CSV layout is shared by the simulator and any externally prepared
export. Column order is fixed:

    patient_id,timestep,f00..f47,action_index,raw_iv_dose,raw_vp_dose,
    reward,nf00..nf47,terminal,sofa,lactate,died

Floats are serialized with ``repr`` so a save/load round trip is bit-exact.
Splits are by patient, never by row, so trajectories cannot leak across
parts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .clinical import N_ACTIONS, N_FEATURES, DoseBinners
from .errors import DomainError, SchemaError, SplitError

STATE_COLUMNS = tuple(f"f{i:02d}" for i in range(N_FEATURES))
NEXT_STATE_COLUMNS = tuple(f"nf{i:02d}" for i in range(N_FEATURES))
CSV_HEADER = (
    "patient_id",
    "timestep",
    *STATE_COLUMNS,
    "action_index",
    "raw_iv_dose",
    "raw_vp_dose",
    "reward",
    *NEXT_STATE_COLUMNS,
    "terminal",
    "sofa",
    "lactate",
    "died",
)

STD_FLOOR = 1e-6


@dataclass
class TransitionRecord:
    """One 4-hour patient timestep in the offline buffer."""

    patient_id: int
    timestep: int
    state: np.ndarray
    action_index: int
    raw_iv_dose: float
    raw_vp_dose: float
    reward: float
    next_state: np.ndarray
    terminal: bool
    sofa: float
    lactate: float
    died: bool


@dataclass
class TransitionBatch:
    """Columnar minibatch view used by the loss and target computations."""

    indices: np.ndarray
    states: np.ndarray
    action_indices: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class OfflineDataset:
    """Columnar transition store; immutable by convention after load."""

    patient_ids: np.ndarray
    timesteps: np.ndarray
    states: np.ndarray
    action_indices: np.ndarray
    raw_iv_doses: np.ndarray
    raw_vp_doses: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    sofas: np.ndarray
    lactates: np.ndarray
    died: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def row(self, i: int) -> TransitionRecord:
        return TransitionRecord(
            patient_id=int(self.patient_ids[i]),
            timestep=int(self.timesteps[i]),
            state=self.states[i].copy(),
            action_index=int(self.action_indices[i]),
            raw_iv_dose=float(self.raw_iv_doses[i]),
            raw_vp_dose=float(self.raw_vp_doses[i]),
            reward=float(self.rewards[i]),
            next_state=self.next_states[i].copy(),
            terminal=bool(self.terminals[i]),
            sofa=float(self.sofas[i]),
            lactate=float(self.lactates[i]),
            died=bool(self.died[i]),
        )

    def subset(self, mask: np.ndarray) -> "OfflineDataset":
        return OfflineDataset(
            patient_ids=self.patient_ids[mask],
            timesteps=self.timesteps[mask],
            states=self.states[mask],
            action_indices=self.action_indices[mask],
            raw_iv_doses=self.raw_iv_doses[mask],
            raw_vp_doses=self.raw_vp_doses[mask],
            rewards=self.rewards[mask],
            next_states=self.next_states[mask],
            terminals=self.terminals[mask],
            sofas=self.sofas[mask],
            lactates=self.lactates[mask],
            died=self.died[mask],
        )

    def as_batch(self) -> TransitionBatch:
        return TransitionBatch(
            indices=np.arange(len(self)),
            states=self.states,
            action_indices=self.action_indices,
            rewards=self.rewards,
            next_states=self.next_states,
            terminals=self.terminals,
        )


def from_records(records) -> OfflineDataset:
    records = list(records)
    n = len(records)
    states = np.zeros((n, N_FEATURES))
    next_states = np.zeros((n, N_FEATURES))
    cols = {
        "patient_ids": np.zeros(n, dtype=np.int64),
        "timesteps": np.zeros(n, dtype=np.int64),
        "action_indices": np.zeros(n, dtype=np.int64),
        "raw_iv_doses": np.zeros(n),
        "raw_vp_doses": np.zeros(n),
        "rewards": np.zeros(n),
        "terminals": np.zeros(n, dtype=bool),
        "sofas": np.zeros(n),
        "lactates": np.zeros(n),
        "died": np.zeros(n, dtype=bool),
    }
    for i, rec in enumerate(records):
        states[i] = rec.state
        next_states[i] = rec.next_state
        cols["patient_ids"][i] = rec.patient_id
        cols["timesteps"][i] = rec.timestep
        cols["action_indices"][i] = rec.action_index
        cols["raw_iv_doses"][i] = rec.raw_iv_dose
        cols["raw_vp_doses"][i] = rec.raw_vp_dose
        cols["rewards"][i] = rec.reward
        cols["terminals"][i] = rec.terminal
        cols["sofas"][i] = rec.sofa
        cols["lactates"][i] = rec.lactate
        cols["died"][i] = rec.died
    return OfflineDataset(states=states, next_states=next_states, **cols)


def _format_float(x: float) -> str:
    return repr(float(x))


def save(dataset: OfflineDataset, path) -> None:
    """Write the exact CSV schema; floats keep full round-trip precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(dataset)):
            row = [
                str(int(dataset.patient_ids[i])),
                str(int(dataset.timesteps[i])),
                *(_format_float(v) for v in dataset.states[i]),
                str(int(dataset.action_indices[i])),
                _format_float(dataset.raw_iv_doses[i]),
                _format_float(dataset.raw_vp_doses[i]),
                _format_float(dataset.rewards[i]),
                *(_format_float(v) for v in dataset.next_states[i]),
                "1" if dataset.terminals[i] else "0",
                _format_float(dataset.sofas[i]),
                _format_float(dataset.lactates[i]),
                "1" if dataset.died[i] else "0",
            ]
            writer.writerow(row)


def _parse_flag(text: str, lineno: int, column: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise SchemaError(f"line {lineno}: column {column} must be 0 or 1, got {text!r}")


def load(path) -> OfflineDataset:
    """Parse a dataset CSV, validating the header and every row."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        if tuple(header) != CSV_HEADER:
            missing = sorted(set(CSV_HEADER) - set(header))
            extra = sorted(set(header) - set(CSV_HEADER))
            if missing or extra:
                raise SchemaError(
                    f"{path}: header mismatch, missing columns {missing}, "
                    f"unexpected columns {extra}"
                )
            raise SchemaError(f"{path}: header columns are out of order")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise SchemaError(
                    f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            rows.append((lineno, row))

    n = len(rows)
    dataset = OfflineDataset(
        patient_ids=np.zeros(n, dtype=np.int64),
        timesteps=np.zeros(n, dtype=np.int64),
        states=np.zeros((n, N_FEATURES)),
        action_indices=np.zeros(n, dtype=np.int64),
        raw_iv_doses=np.zeros(n),
        raw_vp_doses=np.zeros(n),
        rewards=np.zeros(n),
        next_states=np.zeros((n, N_FEATURES)),
        terminals=np.zeros(n, dtype=bool),
        sofas=np.zeros(n),
        lactates=np.zeros(n),
        died=np.zeros(n, dtype=bool),
    )
    s0 = 2
    s1 = s0 + N_FEATURES
    for i, (lineno, row) in enumerate(rows):
        try:
            dataset.patient_ids[i] = int(row[0])
            dataset.timesteps[i] = int(row[1])
            dataset.states[i] = [float(v) for v in row[s0:s1]]
            dataset.action_indices[i] = int(row[s1])
            dataset.raw_iv_doses[i] = float(row[s1 + 1])
            dataset.raw_vp_doses[i] = float(row[s1 + 2])
            dataset.rewards[i] = float(row[s1 + 3])
            dataset.next_states[i] = [float(v) for v in row[s1 + 4 : s1 + 4 + N_FEATURES]]
            dataset.terminals[i] = _parse_flag(row[s1 + 4 + N_FEATURES], lineno, "terminal")
            dataset.sofas[i] = float(row[s1 + 5 + N_FEATURES])
            dataset.lactates[i] = float(row[s1 + 6 + N_FEATURES])
            dataset.died[i] = _parse_flag(row[s1 + 7 + N_FEATURES], lineno, "died")
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if not 0 <= dataset.action_indices[i] < N_ACTIONS:
            raise SchemaError(
                f"line {lineno}: action_index {dataset.action_indices[i]} out of range"
            )
    return dataset


@dataclass(frozen=True)
class SplitSpec:
    """Patient-level split fractions plus the shuffle seed."""

    train_fraction: float = 0.70
    validation_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f <= 0.0 for f in fractions):
            raise DomainError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise DomainError(f"split fractions must sum to 1, got {sum(fractions)}")
        if self.seed < 0:
            raise DomainError("split seed must be non-negative")


def _allocate(n: int, fractions) -> list:
    """Largest-remainder apportionment: counts sum to n exactly."""
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    short = n - sum(counts)
    for idx in sorted(range(len(fractions)), key=lambda i: -remainders[i])[:short]:
        counts[idx] += 1
    return counts


def split(dataset: OfflineDataset, spec: SplitSpec):
    """Partition by patient id into (train, validation, test)."""
    ids = np.unique(dataset.patient_ids)
    if ids.size < 3:
        raise SplitError(f"need at least 3 patients to split, got {ids.size}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    shuffled = ids[rng.permutation(ids.size)]
    n_train, n_val, _ = _allocate(
        ids.size, (spec.train_fraction, spec.validation_fraction, spec.test_fraction)
    )
    train_ids = set(shuffled[:n_train].tolist())
    val_ids = set(shuffled[n_train : n_train + n_val].tolist())
    part_of = np.array(
        [
            0 if pid in train_ids else (1 if pid in val_ids else 2)
            for pid in dataset.patient_ids.tolist()
        ]
    )
    return tuple(dataset.subset(part_of == part) for part in range(3))


@dataclass(frozen=True)
class NormStats:
    """Per-feature z-scoring statistics, fitted on the training split only.

    Features whose raw standard deviation hit the 1e-6 floor are treated as
    constant and normalize to exactly zero.
    """

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.means.shape != (N_FEATURES,) or self.stds.shape != (N_FEATURES,):
            raise DomainError(f"stats must have {N_FEATURES} entries per feature")
        if np.any(self.stds < STD_FLOOR):
            raise DomainError(f"stds must be clamped to at least {STD_FLOOR}")

    @property
    def clamped(self) -> np.ndarray:
        return self.stds <= STD_FLOOR

    def transform(self, states: np.ndarray) -> np.ndarray:
        z = (np.asarray(states, dtype=np.float64) - self.means) / self.stds
        if np.any(self.clamped):
            z[..., self.clamped] = 0.0
        return z


def fit_norm_stats(dataset: OfflineDataset) -> NormStats:
    if len(dataset) == 0:
        raise DomainError("cannot fit normalization on an empty dataset")
    means = dataset.states.mean(axis=0)
    stds = np.maximum(dataset.states.std(axis=0), STD_FLOOR)
    return NormStats(means=means, stds=stds)


def normalize(dataset: OfflineDataset, stats: NormStats) -> OfflineDataset:
    """Z-score state and next_state with the same training-split stats."""
    return replace(
        dataset,
        states=stats.transform(dataset.states),
        next_states=stats.transform(dataset.next_states),
    )


def with_binned_actions(dataset: OfflineDataset, binners: DoseBinners) -> OfflineDataset:
    """Recompute action_index from the raw doses under the fitted binners."""
    iv_bins = _bins_for(dataset.raw_iv_doses, binners.iv)
    vp_bins = _bins_for(dataset.raw_vp_doses, binners.vp)
    return replace(dataset, action_indices=5 * iv_bins + vp_bins)


def _bins_for(doses: np.ndarray, binner) -> np.ndarray:
    if np.any(doses < 0):
        raise DomainError("doses must be non-negative")
    q1, q2, q3 = binner.cutpoints
    bins = 1 + (doses > q1).astype(np.int64) + (doses > q2) + (doses > q3)
    return np.where(doses == 0.0, 0, np.minimum(bins, 4))


def sample_minibatch(
    dataset: OfflineDataset, batch_size: int, step_counter: int, seed: int
) -> TransitionBatch:
    """Uniform sample with replacement, fully determined by (seed, step)."""
    if len(dataset) == 0:
        raise DomainError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, step_counter]))
    idx = rng.integers(0, len(dataset), size=batch_size)
    return TransitionBatch(
        indices=idx,
        states=dataset.states[idx],
        action_indices=dataset.action_indices[idx],
        rewards=dataset.rewards[idx],
        next_states=dataset.next_states[idx],
        terminals=dataset.terminals[idx],
    )
