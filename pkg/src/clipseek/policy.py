"""Actor-critic network and the training-objective math.

Network: fully-connected layer with tanh, an LSTM carried across the steps
of an episode, then a softmax policy head over the 7 actions and a scalar
value head. Loss terms: summed squared value error (weighted by
``value_coef``), policy-gradient loss with advantages from generalized
advantage estimation, and an entropy bonus weighted by ``entropy_coef``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .env import ActionKind, Window
from .ndcore import ParamSet, Tensor

NUM_ACTIONS = len(ActionKind)


@dataclass
class TrainHyper:
    beta: float = 0.01           # per-step reward penalty factor
    entropy_coef: float = 0.5    # weight of the entropy bonus
    value_coef: float = 0.5      # weight of the value loss
    lr: float = 0.0005
    # 0 = constant lr; > 0 = linear decay from lr to lr_final over training
    lr_final: float = 0.0
    discount: float = 0.99
    gae_lambda: float = 0.95
    workers: int = 8
    t_max: int = 30
    grad_clip_norm: float = 40.0
    # 0 = one update per episode; n > 0 = bootstrapped update every n steps
    update_horizon: int = 0

    def validate(self) -> None:
        if not 0 < self.discount <= 1 or not 0 < self.gae_lambda <= 1:
            raise ValueError("discount and gae_lambda must be in (0, 1]")
        for name in ("beta", "entropy_coef", "value_coef", "lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.workers < 1 or self.t_max < 1:
            raise ValueError("workers and t_max must be >= 1")


@dataclass
class PolicyOutput:
    action_probs: Tensor          # length-7 softmax over ActionKind order
    value: Tensor                 # scalar state-value estimate
    lstm_state: tuple[Tensor, Tensor]


@dataclass
class Trajectory:
    """Per-step records of one episode, as tape nodes plus plain numbers."""

    actions: list[ActionKind] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[Tensor] = field(default_factory=list)
    log_probs: list[Tensor] = field(default_factory=list)
    entropies: list[Tensor] = field(default_factory=list)
    prediction: Window | None = None
    forced: bool = False
    observed_units: set[int] = field(default_factory=set)
    n_frames: int = 0
    final_iou: float = 0.0  # clamped

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def init_policy_params(params: ParamSet, rng: np.random.Generator, *,
                       feature_dim: int, fc_dim: int, lstm_dim: int,
                       init_gain: float = 1.0) -> None:
    # ``init_gain`` scales the recurrent trunk's weight matrices at init.
    # Gains above 1 start the tanh units away from their linear region, which
    # makes magnitude-sensitive (even-symmetric) features of the observation
    # reachable much faster under plain SGD.
    params.add("policy.fc.W", init_gain * nd.init_matrix(rng, fc_dim, feature_dim))
    params.add("policy.fc.b", np.zeros(fc_dim))
    for gate in ("i", "f", "o", "g"):
        params.add(f"policy.lstm.W_{gate}",
                   init_gain * nd.init_matrix(rng, lstm_dim, fc_dim))
        params.add(f"policy.lstm.U_{gate}",
                   init_gain * nd.init_matrix(rng, lstm_dim, lstm_dim))
        params.add(f"policy.lstm.b_{gate}", np.zeros(lstm_dim))
    params.add("policy.pi.W", nd.init_matrix(rng, NUM_ACTIONS, lstm_dim))
    params.add("policy.pi.b", np.zeros(NUM_ACTIONS))
    params.add("policy.v.W", nd.init_matrix(rng, 1, lstm_dim))
    params.add("policy.v.b", np.zeros(1))


def initial_lstm_state(params: ParamSet) -> tuple[Tensor, Tensor]:
    dim = params["policy.lstm.b_i"].shape[0]
    return nd.constant(np.zeros(dim)), nd.constant(np.zeros(dim))


def policy_forward(s_t: Tensor, lstm_state: tuple[Tensor, Tensor],
                   params: ParamSet) -> PolicyOutput:
    expected = params["policy.fc.W"].shape[1]
    if s_t.shape != (expected,):
        raise nd.ShapeError(
            f"policy_forward: state shape {s_t.shape}, expected ({expected},)")
    x = nd.tanh(nd.linear(params["policy.fc.W"], s_t, params["policy.fc.b"]))
    lstm = {f"{kind}_{gate}": params[f"policy.lstm.{kind}_{gate}"]
            for kind in ("W", "U", "b") for gate in ("i", "f", "o", "g")}
    h, c = nd.lstm_cell(x, lstm_state[0], lstm_state[1], lstm)
    logits = nd.linear(params["policy.pi.W"], h, params["policy.pi.b"])
    probs = nd.softmax(logits)
    value = nd.tsum(nd.linear(params["policy.v.W"], h, params["policy.v.b"]))
    return PolicyOutput(probs, value, (h, c))


def sample_action(probs: Tensor, rng: np.random.Generator | None = None,
                  greedy: bool = False) -> ActionKind:
    p = probs.values
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"invalid action distribution: {p}")
    if greedy:
        return ActionKind(int(np.argmax(p)))
    if rng is None:
        raise ValueError("sampling requires a random generator")
    return ActionKind(int(rng.choice(NUM_ACTIONS, p=p / p.sum())))


def action_log_prob(probs: Tensor, action: ActionKind) -> Tensor:
    onehot = np.zeros(NUM_ACTIONS)
    onehot[int(action)] = 1.0
    return nd.tsum(nd.mul(nd.log(probs), nd.constant(onehot)))


def entropy(probs: Tensor) -> Tensor:
    return nd.negate(nd.tsum(nd.mul(probs, nd.log(probs))))


# ---------------------------------------------------------------------------
# objective math (advantages and returns are plain numbers, not tape nodes)
# ---------------------------------------------------------------------------

def discounted_returns(rewards: list[float], discount: float,
                       bootstrap: float = 0.0) -> list[float]:
    """R_t = r_t + discount * R_{t+1}; past the last step the tail is
    ``bootstrap`` (zero at a true terminal, a value estimate mid-episode)."""
    if not rewards:
        raise ValueError("discounted_returns: empty reward list")
    out = [0.0] * len(rewards)
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def gae(rewards: list[float], values: list[float], discount: float,
        lam: float, bootstrap: float = 0.0) -> list[float]:
    """Exponentially weighted TD-residual sums; the bootstrap value stands in
    for V of the state after the last step (zero at a true terminal)."""
    if len(rewards) != len(values):
        raise ValueError(f"gae: {len(rewards)} rewards vs {len(values)} values")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        next_v = values[t + 1] if t + 1 < len(values) else bootstrap
        delta = rewards[t] + discount * next_v - values[t]
        acc = delta + discount * lam * acc
        out[t] = acc
    return out


def value_loss(returns: list[float], values: list[Tensor],
               value_coef: float) -> Tensor:
    """value_coef * sum_t (R_t - v_t)^2."""
    terms = None
    for r, v in zip(returns, values):
        err = nd.add(nd.constant(np.asarray(r)), nd.negate(v))
        sq = nd.mul(err, err)
        terms = sq if terms is None else nd.add(terms, sq)
    if terms is None:
        return nd.constant(0.0)
    return nd.scale(terms, value_coef)


def policy_loss(log_probs: list[Tensor], advantages: list[float],
                entropies: list[Tensor], entropy_coef: float) -> Tensor:
    """-sum_t log_prob_t * A_t - entropy_coef * sum_t H_t.

    Advantages enter as constants: no gradient flows through them.
    """
    if not (len(log_probs) == len(advantages) == len(entropies)):
        raise ValueError("policy_loss: length mismatch")
    total = nd.constant(0.0)
    for lp, adv, ent in zip(log_probs, advantages, entropies):
        total = nd.add(total, nd.scale(lp, -adv))
        total = nd.add(total, nd.scale(ent, -entropy_coef))
    return total


def total_loss(pol: Tensor, val: Tensor) -> Tensor:
    """Sum of the two objective terms (the value term already carries its weight)."""
    return nd.add(pol, val)


def trajectory_loss(traj: Trajectory, hyper: TrainHyper,
                    bootstrap: float = 0.0) -> Tensor:
    returns = discounted_returns(traj.rewards, hyper.discount, bootstrap)
    values = [v.item() for v in traj.values]
    advantages = gae(traj.rewards, values, hyper.discount, hyper.gae_lambda,
                     bootstrap)
    pol = policy_loss(traj.log_probs, advantages, traj.entropies,
                      hyper.entropy_coef)
    val = value_loss(returns, traj.values, hyper.value_coef)
    return total_loss(pol, val)
