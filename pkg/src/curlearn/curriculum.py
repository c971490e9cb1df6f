"""Cleanliness-based data partition, the three-phase schedule with
patience-driven transitions, and the ablation training protocols."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

from .core import Dataset


class Phase(enum.Enum):
    CLEAN_ONLY = "clean_only"
    COMBINED = "combined"
    NOISY_ONLY = "noisy_only"
    DONE = "done"


PHASE_ORDER = (Phase.CLEAN_ONLY, Phase.COMBINED, Phase.NOISY_ONLY)


class Protocol(enum.Enum):
    STD_A = "STD_A"  # all data, single phase
    STD_C = "STD_C"  # clean subset only, single phase
    CL = "CL"        # clean -> combined -> noisy


@dataclass(frozen=True)
class Partition:
    clean_ids: tuple[str, ...]
    noisy_ids: tuple[str, ...]
    tau: float
    train_ids: tuple[str, ...]  # full pool in manifest order


def partition(train: Dataset, scores: Mapping[str, float], tau: float) -> Partition:
    """Split training ids at the threshold: clean iff s >= tau."""
    clean, noisy = [], []
    for s in train.samples:
        if s.id not in scores:
            raise ValueError(f"no cleanliness score for sample {s.id!r}")
        (clean if scores[s.id] >= tau else noisy).append(s.id)
    return Partition(tuple(clean), tuple(noisy), tau,
                     tuple(s.id for s in train.samples))


def phase_dataset(part: Partition, phase: Phase) -> list[str]:
    if phase == Phase.CLEAN_ONLY:
        return list(part.clean_ids)
    if phase == Phase.COMBINED:
        return list(part.train_ids)
    if phase == Phase.NOISY_ONLY:
        return list(part.noisy_ids)
    raise ValueError("no dataset for the done phase")


@dataclass(frozen=True)
class PhaseLogEntry:
    phase: Phase
    epoch: int
    val_acc: float
    transitioned: bool


@dataclass
class PhaseState:
    """Patience state machine advanced once per epoch by the training loop.

    Strict improvement of validation accuracy resets the counter; after
    `patience` consecutive non-improving epochs the run moves to the next
    phase and the best accuracy resets, giving each phase a full budget.
    """

    phases: tuple[Phase, ...] = PHASE_ORDER
    patience: int = 5
    index: int = 0
    best_val_acc: float = float("-inf")
    epochs_since_improve: int = 0
    epoch: int = 0
    log: list[PhaseLogEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        positions = [PHASE_ORDER.index(p) for p in self.phases]
        if positions != sorted(set(positions)):
            raise ValueError(f"phases must be an ordered subsequence of {PHASE_ORDER}")

    @property
    def phase(self) -> Phase:
        return Phase.DONE if self.index >= len(self.phases) else self.phases[self.index]

    def advance(self, val_acc: float, force_transition: bool = False) -> bool:
        """Record one epoch's validation accuracy; True if a transition fired."""
        if self.phase == Phase.DONE:
            raise ValueError("cannot advance a finished run")
        current = self.phase
        self.epoch += 1
        if val_acc > self.best_val_acc:
            self.best_val_acc = val_acc
            self.epochs_since_improve = 0
        else:
            self.epochs_since_improve += 1
        transitioned = force_transition or self.epochs_since_improve >= self.patience
        if transitioned:
            self.index += 1
            self.best_val_acc = float("-inf")
            self.epochs_since_improve = 0
        self.log.append(PhaseLogEntry(current, self.epoch, val_acc, transitioned))
        return transitioned


def protocol_schedule(protocol: Protocol, part: Partition) -> list[tuple[Phase, tuple[str, ...]]]:
    """The (phase, id list) sequence a protocol trains through.

    Empty subsets are skipped and consecutive phases over identical id lists
    collapse into the first, so extreme thresholds degrade gracefully.
    """
    if protocol == Protocol.STD_A:
        return [(Phase.COMBINED, part.train_ids)]
    if protocol == Protocol.STD_C:
        if not part.clean_ids:
            raise ValueError("STD_C needs a non-empty clean subset")
        return [(Phase.CLEAN_ONLY, part.clean_ids)]
    schedule: list[tuple[Phase, tuple[str, ...]]] = []
    for phase in PHASE_ORDER:
        ids = tuple(phase_dataset(part, phase))
        if not ids:
            continue
        if schedule and schedule[-1][1] == ids:
            continue
        schedule.append((phase, ids))
    return schedule


def write_phase_log_csv(log: list[PhaseLogEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase,epoch,val_acc,transitioned\n")
        for entry in log:
            fh.write(f"{entry.phase.value},{entry.epoch},{entry.val_acc!r},"
                     f"{'true' if entry.transitioned else 'false'}\n")
