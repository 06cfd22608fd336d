"""Confidence calibration: temperature scaling (default) and ECE.

Temperature is fit by golden-section search over log T on a dev-cal split,
minimizing NLL; the search is deterministic given the data.  Platt-style
one-vs-rest and isotonic variants satisfy the same contract and exist for
sensitivity runs; temperature scaling is the default everywhere.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

T_LO, T_HI = 0.05, 20.0
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


class CalibrationError(ValueError):
    pass


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    lp = _log_softmax(logits / temperature)
    return float(-lp[np.arange(len(labels)), labels].mean())


@dataclass
class Calibrator:
    """Scalar-temperature calibrator with a confidence exponent.

    ``confidence`` returns p_tilde^alpha for the given answer, the quantity
    that multiplies vote weights; alpha defaults to 1 and is swept in
    [0.75, 1.25] for sensitivity.
    """

    temperature: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise CalibrationError("temperature must be > 0")

    def probs(self, logits: np.ndarray) -> np.ndarray:
        logits = np.atleast_2d(logits)
        return np.exp(_log_softmax(logits / self.temperature))

    def confidence(self, logits: np.ndarray, answer: int) -> float:
        p = self.probs(logits)[0, answer]
        return float(np.clip(p, 1e-12, 1.0) ** self.alpha)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"version": 1, "temperature": self.temperature, "alpha": self.alpha}))

    @classmethod
    def load(cls, path: str | Path) -> "Calibrator":
        d = json.loads(Path(path).read_text())
        return cls(temperature=d["temperature"], alpha=d["alpha"])


def fit_temperature(logits: np.ndarray, labels: np.ndarray,
                    alpha: float = 1.0, tol: float = 1e-10) -> Calibrator:
    """Golden-section search for the NLL-minimizing temperature.

    Requires at least 2 classes and 10 examples; a single-class label set is
    degenerate and rejected.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise CalibrationError("need logits with >= 2 classes")
    if len(labels) < 10:
        raise CalibrationError("need >= 10 dev-cal examples")
    if np.unique(labels).size < 2:
        raise CalibrationError("dev-cal labels are single-class; cannot calibrate")

    lo, hi = np.log(T_LO), np.log(T_HI)
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc = nll(logits, labels, np.exp(c))
    fd = nll(logits, labels, np.exp(d))
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = nll(logits, labels, np.exp(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = nll(logits, labels, np.exp(d))
    t = float(np.exp((lo + hi) / 2.0))
    return Calibrator(temperature=t, alpha=alpha)


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Expected calibration error with equal-width confidence bins.

    ``probs`` may be an (N, C) probability matrix with integer labels, or a
    1-D confidence vector with 0/1 correctness labels.
    """
    if bins < 1:
        raise CalibrationError("bins must be >= 1")
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim == 2:
        conf = probs.max(axis=1)
        correct = (probs.argmax(axis=1) == labels).astype(float)
    else:
        conf = probs
        correct = labels.astype(float)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(conf, edges[1:-1]), 0, bins - 1)
    total = 0.0
    for b in range(bins):
        m = idx == b
        if not m.any():
            continue
        total += m.mean() * abs(correct[m].mean() - conf[m].mean())
    return float(total)


# --- optional calibrator variants (same contract) ----------------------------

@dataclass
class PlattCalibrator:
    """One-vs-rest logistic rescaling of the max-class logit margin."""

    a: float = 1.0
    b: float = 0.0
    alpha: float = 1.0

    def confidence(self, logits: np.ndarray, answer: int) -> float:
        logits = np.atleast_2d(logits)[0]
        margin = logits[answer] - np.max(np.delete(logits, answer))
        p = 1.0 / (1.0 + np.exp(-(self.a * margin + self.b)))
        return float(np.clip(p, 1e-12, 1.0) ** self.alpha)


def fit_platt(logits: np.ndarray, labels: np.ndarray, alpha: float = 1.0,
              iters: int = 200, lr: float = 0.1) -> PlattCalibrator:
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pred = logits.argmax(axis=1)
    margins = logits.max(axis=1) - np.partition(logits, -2, axis=1)[:, -2]
    y = (pred == labels).astype(float)
    a, b = 1.0, 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(a * margins + b)))
        ga = float(((p - y) * margins).mean())
        gb = float((p - y).mean())
        a -= lr * ga
        b -= lr * gb
    return PlattCalibrator(a=a, b=b, alpha=alpha)


@dataclass
class IsotonicCalibrator:
    """Pool-adjacent-violators fit of confidence -> accuracy."""

    x: np.ndarray = None
    y: np.ndarray = None
    alpha: float = 1.0

    def confidence(self, logits: np.ndarray, answer: int) -> float:
        logits = np.atleast_2d(logits)[0]
        z = logits - logits.max()
        p = float(np.exp(z[answer]) / np.exp(z).sum())
        cal = float(np.interp(p, self.x, self.y))
        return float(np.clip(cal, 1e-12, 1.0) ** self.alpha)


def fit_isotonic(logits: np.ndarray, labels: np.ndarray,
                 alpha: float = 1.0) -> IsotonicCalibrator:
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    conf = p.max(axis=1)
    y = (p.argmax(axis=1) == labels).astype(float)
    order = np.argsort(conf)
    xs, ys = conf[order], y[order]
    # pool adjacent violators
    vals = list(ys.astype(float))
    wts = [1.0] * len(vals)
    pos = list(xs)
    i = 0
    while i < len(vals) - 1:
        if vals[i] > vals[i + 1] + 1e-12:
            merged = (vals[i] * wts[i] + vals[i + 1] * wts[i + 1]) / (wts[i] + wts[i + 1])
            vals[i] = merged
            wts[i] += wts[i + 1]
            del vals[i + 1], wts[i + 1], pos[i + 1]
            i = max(0, i - 1)
        else:
            i += 1
    return IsotonicCalibrator(x=np.asarray(pos), y=np.asarray(vals), alpha=alpha)
