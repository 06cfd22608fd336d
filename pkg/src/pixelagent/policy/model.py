"""Featurized softmax toolchain policy: sampling, scoring, KL, EMA anchor."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..world.clip import Clip
from ..world.config import NoiseConfig
from ..world.teacher import Query, _evidence_key, is_decisive
from ..world.tools import (ANSWER, Observation, ToolCall, ViewState,
                           apply_zoom, execute_tool)
from .features import (EvidenceState, FeatureSpec, answer_features,
                       featurize_state)

CHECKPOINT_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass
class PolicyParams:
    """Softmax policy over the discrete tool alphabet plus an answer head."""

    action_w: np.ndarray   # (n_actions, state_dim)
    answer_w: np.ndarray   # (n_answers, answer_dim)
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not (np.isfinite(self.action_w).all() and np.isfinite(self.answer_w).all()):
            raise ValueError("policy weights must be finite")

    @classmethod
    def zeros(cls, spec: FeatureSpec, n_answers: int | None = None,
              temperature: float = 1.0) -> "PolicyParams":
        n_answers = n_answers or spec.cfg.answer_classes
        return cls(action_w=np.zeros((spec.alphabet.size, spec.state_dim)),
                   answer_w=np.zeros((n_answers, spec.answer_dim)),
                   temperature=temperature)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.action_w.copy(), self.answer_w.copy(),
                            self.temperature)

    def action_dist(self, phi: np.ndarray) -> np.ndarray:
        return softmax(self.action_w @ phi / self.temperature)

    def answer_dist(self, psi: np.ndarray) -> np.ndarray:
        return softmax(self.answer_w @ psi / self.temperature)

    def answer_logits(self, psi: np.ndarray) -> np.ndarray:
        return self.answer_w @ psi / self.temperature

    def save(self, path: str | Path) -> None:
        np.savez(path, version=CHECKPOINT_VERSION, action_w=self.action_w,
                 answer_w=self.answer_w, temperature=self.temperature)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        with np.load(path) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"checkpoint version {data['version']} unsupported")
            return cls(action_w=data["action_w"], answer_w=data["answer_w"],
                       temperature=float(data["temperature"]))


@dataclass
class TrajStep:
    features: np.ndarray
    action_index: int
    call: ToolCall
    obs: Observation
    probs: np.ndarray
    logp: float
    entropy: float
    decisive: bool

    @property
    def valid_action(self) -> bool:
        return self.obs.success


@dataclass
class Trajectory:
    """A sampled rollout: tool steps terminated by exactly one ANSWER.

    The terminal ANSWER contributes two log-prob factors: choosing ANSWER in
    the action alphabet and choosing the class under the answer head.  Total
    log-prob is the sum of step log-probs plus both terminal factors.
    """

    steps: list[TrajStep]
    terminal_features: np.ndarray
    terminal_probs: np.ndarray
    answer_action_logp: float
    answer: int
    answer_features: np.ndarray
    answer_probs: np.ndarray
    answer_class_logp: float
    query: Query
    clip_seed: int
    greedy: bool = False

    @property
    def answer_logp(self) -> float:
        return self.answer_action_logp + self.answer_class_logp

    @property
    def total_logp(self) -> float:
        return float(sum(s.logp for s in self.steps) + self.answer_logp)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def n_invalid(self) -> int:
        return sum(1 for s in self.steps if not s.obs.success)

    @property
    def decisive_count(self) -> int:
        return sum(1 for s in self.steps if s.decisive)

    @property
    def decisive_entropy(self) -> float:
        """Mean step entropy over decisive steps (all steps as fallback)."""
        dec = [s.entropy for s in self.steps if s.decisive]
        if dec:
            return float(np.mean(dec))
        if self.steps:
            return float(np.mean([s.entropy for s in self.steps]))
        return 0.0

    @property
    def action_names(self) -> list[str]:
        return [s.call.op for s in self.steps]

    def state_matrix(self) -> np.ndarray:
        """All visited action-head states, terminal included."""
        rows = [s.features for s in self.steps] + [self.terminal_features]
        return np.stack(rows)


@dataclass(frozen=True)
class RolloutCaps:
    max_steps: int = 8
    noise: NoiseConfig = field(default_factory=NoiseConfig)


def sample_trajectory(policy: PolicyParams, clip: Clip, query: Query,
                      caps: RolloutCaps, rng: np.random.Generator,
                      spec: FeatureSpec, greedy: bool = False) -> Trajectory:
    """Autoregressively sample one rollout.

    Invalid calls execute as failed observations and stay in the trajectory;
    ANSWER is forced at the step cap so termination is guaranteed.  With
    ``greedy`` the argmax action is taken at every step; the rng then only
    drives tool noise.
    """
    if caps.max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    view = ViewState.full(clip)
    evidence = EvidenceState()
    history: list[tuple[ToolCall, Observation]] = []
    steps: list[TrajStep] = []
    answer_idx = spec.alphabet.answer_index

    for t in range(caps.max_steps):
        phi = featurize_state(clip, view, history, query, spec,
                              evidence=evidence, step_index=t,
                              max_steps=caps.max_steps)
        probs = policy.action_dist(phi)
        if t == caps.max_steps - 1:
            a = answer_idx  # forced termination at the cap
        elif greedy:
            a = int(np.argmax(probs))
        else:
            a = int(rng.choice(len(probs), p=probs))

        if a == answer_idx:
            psi = answer_features(spec, evidence, query)
            ans_probs = policy.answer_dist(psi)
            y = int(np.argmax(ans_probs)) if greedy else int(rng.choice(len(ans_probs), p=ans_probs))
            return Trajectory(
                steps=steps,
                terminal_features=phi,
                terminal_probs=probs,
                answer_action_logp=float(np.log(max(probs[a], 1e-300))),
                answer=y,
                answer_features=psi,
                answer_probs=ans_probs,
                answer_class_logp=float(np.log(max(ans_probs[y], 1e-300))),
                query=query, clip_seed=clip.seed, greedy=greedy)

        op, arg = spec.alphabet.decode(a)
        call = ToolCall(op, arg, t)
        ev_before = _evidence_key(history)
        view_before = view
        obs = execute_tool(clip, view, call, caps.noise, rng)
        view = apply_zoom(view, obs)
        history.append((call, obs))
        evidence.update(obs, clip)
        steps.append(TrajStep(
            features=phi, action_index=a, call=call, obs=obs, probs=probs,
            logp=float(np.log(max(probs[a], 1e-300))), entropy=entropy(probs),
            decisive=is_decisive(obs, view_before, view, ev_before,
                                 _evidence_key(history))))

    raise AssertionError("unreachable: ANSWER is forced at the cap")


def score_trajectory(policy: PolicyParams, traj: Trajectory
                     ) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Teacher-forced log-prob, per-step action distributions and entropies
    under the given params.

    Exact: scoring a trajectory under the policy that sampled it reproduces
    its stored log-prob.
    """
    answer_idx = policy.action_w.shape[0] - 1
    total = 0.0
    dists: list[np.ndarray] = []
    ents: list[float] = []
    for step in traj.steps:
        p = policy.action_dist(step.features)
        dists.append(p)
        ents.append(entropy(p))
        total += float(np.log(max(p[step.action_index], 1e-300)))
    p_term = policy.action_dist(traj.terminal_features)
    dists.append(p_term)
    ents.append(entropy(p_term))
    total += float(np.log(max(p_term[answer_idx], 1e-300)))
    p_ans = policy.answer_dist(traj.answer_features)
    total += float(np.log(max(p_ans[traj.answer], 1e-300)))
    return total, dists, np.asarray(ents)


def _kl_rows(wp: np.ndarray, wq: np.ndarray, states: np.ndarray,
             temp_p: float, temp_q: float) -> np.ndarray:
    zp = states @ wp.T / temp_p
    zq = states @ wq.T / temp_q
    lp = zp - _logsumexp_rows(zp)
    lq = zq - _logsumexp_rows(zq)
    return (np.exp(lp) * (lp - lq)).sum(axis=1)


def step_kl(p: PolicyParams, q: PolicyParams, states: np.ndarray) -> float:
    """Mean KL(softmax_p || softmax_q) over the action alphabet for a batch
    of state vectors.  Nonnegative; zero iff the distributions agree on the
    batch."""
    states = np.atleast_2d(np.asarray(states))
    if states.shape[0] == 0:
        raise ValueError("state batch must be nonempty")
    return float(np.mean(_kl_rows(p.action_w, q.action_w, states,
                                  p.temperature, q.temperature)))


def token_kl(p: PolicyParams, q: PolicyParams, action_states: np.ndarray,
             answer_states: np.ndarray | None = None) -> float:
    """Token-level KL: every action state and every answer state counts as
    one token; the mean runs over all of them.  The answer head is part of
    the policy, so drift control must see it too."""
    action_states = np.atleast_2d(np.asarray(action_states))
    kls = _kl_rows(p.action_w, q.action_w, action_states,
                   p.temperature, q.temperature)
    total, count = float(kls.sum()), len(kls)
    if answer_states is not None and len(answer_states):
        answer_states = np.atleast_2d(np.asarray(answer_states))
        kls_y = _kl_rows(p.answer_w, q.answer_w, answer_states,
                         p.temperature, q.temperature)
        total += float(kls_y.sum())
        count += len(kls_y)
    if count == 0:
        raise ValueError("token batch must be nonempty")
    return total / count


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))


@dataclass
class EmaPolicy:
    """Slow shadow copy of policy params used as the drift anchor."""

    shadow: PolicyParams
    rho: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("decay rho must lie in [0, 1]")

    @classmethod
    def from_policy(cls, policy: PolicyParams, rho: float = 0.99) -> "EmaPolicy":
        return cls(shadow=policy.copy(), rho=rho)

    def update(self, live: PolicyParams) -> "EmaPolicy":
        if self.shadow.action_w.shape != live.action_w.shape or \
           self.shadow.answer_w.shape != live.answer_w.shape:
            raise ValueError("EMA/live parameter shapes do not match")
        r = self.rho
        self.shadow.action_w = r * self.shadow.action_w + (1 - r) * live.action_w
        self.shadow.answer_w = r * self.shadow.answer_w + (1 - r) * live.answer_w
        self.shadow.temperature = r * self.shadow.temperature + (1 - r) * live.temperature
        return self
