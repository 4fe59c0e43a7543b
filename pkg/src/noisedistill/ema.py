"""Exponential-moving-average teacher.

The teacher parameter set tracks the student via delta <- tau*delta +
(1-tau)*theta, with tau ramping linearly from tau0 to tau_e over tau_n steps
and holding constant afterward.  Teacher tensors are always constructed
outside the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, no_grad

ParameterSet = dict[str, Tensor]


@dataclass(frozen=True)
class EmaSchedule:
    tau0: float = 0.999
    tau_e: float = 0.9999
    tau_n: int = 30000

    def __post_init__(self):
        if not 0.0 <= self.tau0 <= self.tau_e <= 1.0:
            raise ConfigError(f"need 0 <= tau0 <= tau_e <= 1, got ({self.tau0}, {self.tau_e})")
        if self.tau_n < 1:
            raise ConfigError(f"tau_n must be >= 1, got {self.tau_n}")


def tau_at(schedule: EmaSchedule, step: int) -> float:
    """Linear ramp tau0 -> tau_e over tau_n steps, clamped afterward."""
    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    frac = min(step / schedule.tau_n, 1.0)
    return schedule.tau0 + (schedule.tau_e - schedule.tau0) * frac


def _check_matched(teacher: ParameterSet, student: ParameterSet) -> None:
    if teacher.keys() != student.keys():
        missing = teacher.keys() ^ student.keys()
        raise ShapeError(f"teacher/student parameter names differ: {sorted(missing)}")
    for name in teacher:
        if teacher[name].value.shape != student[name].value.shape:
            raise ShapeError(
                f"shape mismatch for {name}: {teacher[name].value.shape} "
                f"vs {student[name].value.shape}"
            )


def init_teacher(student: ParameterSet) -> ParameterSet:
    """Deep copy of the student at step 0, detached from any tape."""
    with no_grad():
        return {name: Tensor(p.value.copy()) for name, p in student.items()}


def ema_update(teacher: ParameterSet, student: ParameterSet, tau: float) -> ParameterSet:
    """Element-wise delta' = tau*delta + (1-tau)*theta for every parameter."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must be in [0, 1], got {tau}")
    _check_matched(teacher, student)
    with no_grad():
        return {
            name: Tensor(tau * teacher[name].value + (1.0 - tau) * student[name].value)
            for name in teacher
        }
