"""Clipped PID control of the KL penalty weight.

The controller normalizes the error by the target, smooths measured KL with
an EMA (tau = 0.9), applies anti-windup on the integral (|I| <= 5), holds
the derivative term at zero for the first 100 calls, and clamps beta to
[1e-3, 1e2] after every multiplicative update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PidState:
    kp: float = 0.30
    ki: float = 0.05
    kd: float = 0.10
    beta: float = 1.0
    integral: float = 0.0
    i_max: float = 5.0
    beta_min: float = 1e-3
    beta_max: float = 1e2
    prev_error: float = 0.0
    kl_ema: float | None = None
    ema_tau: float = 0.9
    steps: int = 0
    warmup_steps: int = 100

    def __post_init__(self):
        if not self.beta_min <= self.beta <= self.beta_max:
            raise ValueError(f"beta {self.beta} outside [{self.beta_min}, {self.beta_max}]")
        if abs(self.integral) > self.i_max + 1e-12:
            raise ValueError(f"integral {self.integral} exceeds cap {self.i_max}")


def pid_step(pid: PidState, kl_measured: float, kl_target: float
             ) -> tuple[PidState, float]:
    """One controller update; returns (new state, new beta).

    Anti-windup is conditional integration: while beta sits at a bound and
    the error keeps pushing it further out, the integral stops
    accumulating (the clamp at |I| <= I_max applies regardless).
    """
    if kl_target <= 0:
        raise ValueError("kl_target must be > 0")
    ema = (kl_measured if pid.kl_ema is None
           else pid.ema_tau * pid.kl_ema + (1.0 - pid.ema_tau) * kl_measured)
    e = (ema - kl_target) / kl_target
    saturated_hi = pid.beta >= pid.beta_max and e > 0
    saturated_lo = pid.beta <= pid.beta_min and e < 0
    if saturated_hi or saturated_lo:
        integral = pid.integral
    else:
        integral = float(min(max(pid.integral + e, -pid.i_max), pid.i_max))
    kd = 0.0 if pid.steps < pid.warmup_steps else pid.kd
    mult = 1.0 + pid.kp * e + pid.ki * integral + kd * (e - pid.prev_error)
    beta = float(min(max(pid.beta * mult, pid.beta_min), pid.beta_max))
    new = replace(pid, beta=beta, integral=integral, prev_error=e,
                  kl_ema=float(ema), steps=pid.steps + 1)
    return new, beta
