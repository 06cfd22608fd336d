"""Tool-conditioned dynamics head and uncertainty-gated curiosity.

The head maps [v_t || x_t || onehot(a_t)] to the next visual summary and a
validity logit.  Training minimizes 0.5*SmoothL1 + 0.5*(1 - cos) + 1.0*BCE
with a 1.0 gradient-norm cap.  Curiosity uses the prediction error
e = 0.5*L1 + 0.5*(1 - cos), gated by epistemic variance from 4 MC-dropout
samples, clipped to a per-batch 95th percentile, and down-weighted by the
validity head's sigmoid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..policy.sft import TrainingError, clip_gradients
from ..world.verify import verify_step
from .embed import Projector, gelu, gelu_grad, tool_features, visual_summary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DynamicsConfig:
    hidden: int = 64
    dropout: float = 0.1
    mc_samples: int = 4
    alpha: float = 0.5       # L1 vs cosine mix in prediction error
    beta_gate: float = 5.0   # epistemic-variance gate strength
    lr: float = 0.05
    epochs: int = 40
    batch_size: int = 64
    grad_clip: float = 1.0
    seed: int = 0


@dataclass
class DynamicsHead:
    w1: np.ndarray   # (hidden, in_dim)
    b1: np.ndarray
    w2: np.ndarray   # (visual_dim + 1, hidden)
    b2: np.ndarray
    dropout: float = 0.1
    mc_samples: int = 4
    trained: bool = False

    @classmethod
    def create(cls, in_dim: int, visual_dim: int, cfg: DynamicsConfig) -> "DynamicsHead":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xD)))
        s = 1.0 / np.sqrt(in_dim)
        return cls(w1=rng.normal(0, s, size=(cfg.hidden, in_dim)),
                   b1=np.zeros(cfg.hidden),
                   w2=rng.normal(0, 1.0 / np.sqrt(cfg.hidden),
                                 size=(visual_dim + 1, cfg.hidden)),
                   b2=np.zeros(visual_dim + 1),
                   dropout=cfg.dropout, mc_samples=cfg.mc_samples)

    @property
    def visual_dim(self) -> int:
        return self.w2.shape[0] - 1

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None
                ) -> tuple[np.ndarray, float]:
        """(predicted next visual summary, validity logit).  Passing an rng
        applies one inverted-dropout mask to the hidden layer."""
        h = gelu(self.w1 @ x + self.b1)
        if rng is not None and self.dropout > 0:
            mask = rng.random(h.shape) >= self.dropout
            h = h * mask / (1.0 - self.dropout)
        out = self.w2 @ h + self.b2
        return out[:-1], float(out[-1])


def _smooth_l1_vec(r: np.ndarray):
    a = np.abs(r)
    loss = float(np.where(a < 1.0, 0.5 * r * r, a - 0.5).mean())
    return loss, np.clip(r, -1.0, 1.0) / r.size


def _cos_parts(u: np.ndarray, v: np.ndarray):
    nu = max(np.linalg.norm(u), 1e-12)
    nv = max(np.linalg.norm(v), 1e-12)
    c = float(u @ v / (nu * nv))
    dc_du = v / (nu * nv) - c * u / (nu * nu)
    return c, dc_du


def dynamics_loss_and_grad(head: DynamicsHead, X: np.ndarray, V: np.ndarray,
                           R: np.ndarray):
    """Mean loss over a transition batch plus analytic parameter gradients.

    Deterministic (no dropout); used by training, eval and finite-difference
    checks alike.
    """
    n = len(X)
    if n == 0:
        raise TrainingError("empty dynamics batch")
    grads = {"w1": np.zeros_like(head.w1), "b1": np.zeros_like(head.b1),
             "w2": np.zeros_like(head.w2), "b2": np.zeros_like(head.b2)}
    total = 0.0
    for i in range(n):
        x, v, r = X[i], V[i], R[i]
        h_pre = head.w1 @ x + head.b1
        h = gelu(h_pre)
        out = head.w2 @ h + head.b2
        vhat, rlogit = out[:-1], out[-1]

        l1, dl1 = _smooth_l1_vec(vhat - v)
        c, dc = _cos_parts(vhat, v)
        bce = float(max(rlogit, 0) - rlogit * r + np.log1p(np.exp(-abs(rlogit))))
        sig = 1.0 / (1.0 + np.exp(-rlogit))
        total += 0.5 * l1 + 0.5 * (1.0 - c) + bce

        dout = np.empty_like(out)
        dout[:-1] = 0.5 * dl1 - 0.5 * dc
        dout[-1] = sig - r
        grads["w2"] += np.outer(dout, h)
        grads["b2"] += dout
        dh = head.w2.T @ dout
        dh_pre = dh * gelu_grad(h_pre)
        grads["w1"] += np.outer(dh_pre, x)
        grads["b1"] += dh_pre
    for k in grads:
        grads[k] /= n
    return total / n, grads


def train_dynamics(transitions: tuple[np.ndarray, np.ndarray, np.ndarray],
                   cfg: DynamicsConfig) -> DynamicsHead:
    """Fit the head on (inputs, next visual summaries, validity labels)."""
    X, V, R = (np.asarray(a, dtype=float) for a in transitions)
    if len(X) == 0:
        raise TrainingError("dynamics training needs a nonempty batch")
    head = DynamicsHead.create(X.shape[1], V.shape[1], cfg)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        for b0 in range(0, len(X), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            loss, grads = dynamics_loss_and_grad(head, X[idx], V[idx], R[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite dynamics loss at epoch {epoch}",
                                    {"loss": loss})
            clip_gradients(grads, cfg.grad_clip)
            head.w1 -= cfg.lr * grads["w1"]
            head.b1 -= cfg.lr * grads["b1"]
            head.w2 -= cfg.lr * grads["w2"]
            head.b2 -= cfg.lr * grads["b2"]
    head.trained = True
    return head


def prediction_error(vhat: np.ndarray, v: np.ndarray, alpha: float = 0.5) -> float:
    """e = alpha * ||vhat - v||_1 + (1 - alpha) * (1 - cos)."""
    c, _ = _cos_parts(vhat, v)
    return float(alpha * np.abs(vhat - v).sum() + (1.0 - alpha) * (1.0 - c))


def curiosity(head: DynamicsHead, x: np.ndarray, v_next: np.ndarray,
              batch_p95: float, rng: np.random.Generator,
              cfg: DynamicsConfig | None = None, use_dropout: bool = True,
              allow_untrained: bool = False) -> float:
    """Uncertainty-gated curiosity for one step.

    min(e / (1 + beta * sigma^2), batch_p95) * sigmoid(validity logit),
    where sigma^2 is the mean per-dim variance of the MC-dropout
    predictions.  With dropout disabled the samples coincide and the gate
    is exactly 1.
    """
    cfg = cfg or DynamicsConfig()
    if not head.trained and not allow_untrained:
        raise ValueError("dynamics head is untrained; pass allow_untrained=True")
    samples = []
    for _ in range(head.mc_samples):
        vhat, _ = head.forward(x, rng=rng if use_dropout else None)
        samples.append(vhat)
    stack = np.stack(samples)
    vhat_mean = stack.mean(axis=0)
    sigma2 = float(stack.var(axis=0).mean())
    _, rlogit = head.forward(x)
    e = prediction_error(vhat_mean, v_next, cfg.alpha)
    gated = e / (1.0 + cfg.beta_gate * sigma2)
    sig = 1.0 / (1.0 + np.exp(-rlogit))
    return float(min(gated, batch_p95) * sig)


def curiosity_batch(head: DynamicsHead, X: np.ndarray, Vnext: np.ndarray,
                    rng: np.random.Generator, cfg: DynamicsConfig | None = None,
                    use_dropout: bool = True,
                    allow_untrained: bool = False) -> np.ndarray:
    """Gated curiosity for a batch, clipping at the batch's own 95th
    percentile of gated (pre-clip) values."""
    cfg = cfg or DynamicsConfig()
    if not head.trained and not allow_untrained:
        raise ValueError("dynamics head is untrained; pass allow_untrained=True")
    gated, sigs = [], []
    for i in range(len(X)):
        samples = [head.forward(X[i], rng=rng if use_dropout else None)[0]
                   for _ in range(head.mc_samples)]
        stack = np.stack(samples)
        sigma2 = float(stack.var(axis=0).mean())
        e = prediction_error(stack.mean(axis=0), Vnext[i], cfg.alpha)
        gated.append(e / (1.0 + cfg.beta_gate * sigma2))
        _, rlogit = head.forward(X[i])
        sigs.append(1.0 / (1.0 + np.exp(-rlogit)))
    gated = np.asarray(gated)
    if gated.size == 0:
        return gated
    p95 = float(np.percentile(gated, 95))
    return np.minimum(gated, p95) * np.asarray(sigs)


def dynamics_transitions(trajs, clips_by_seed: dict, proj: Projector, spec
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (X, V_next, validity) training tuples from rollouts.

    One transition per consecutive tool-step pair; the input conditions on
    the action taken at t, the target is the visual summary observed at
    t + 1, and validity is the external verifier's verdict on step t.
    """
    A = spec.alphabet.size
    X, V, R = [], [], []
    for traj in trajs:
        clip = clips_by_seed[traj.clip_seed]
        vs = [visual_summary(clip, s.obs.footprint) for s in traj.steps]
        for t in range(len(traj.steps) - 1):
            step = traj.steps[t]
            xt = proj.project_tool(tool_features(step.obs, clip.config))
            onehot = np.zeros(A)
            onehot[step.action_index] = 1.0
            X.append(np.concatenate([vs[t], xt, onehot]))
            V.append(vs[t + 1])
            R.append(1.0 if verify_step(step.obs, clip)[0] else 0.0)
    if not X:
        return (np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    return np.stack(X), np.stack(V), np.asarray(R)
