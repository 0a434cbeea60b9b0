"""Parallel episode runners updating a shared parameter set (A3C-style).

Each worker snapshots the global parameters at episode start, runs one full
episode on its own environment instance, computes the episode loss on its
snapshot, and applies norm-clipped gradients to the global set atomically.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fusion, ndcore as nd, policy as pol
from .config import Config
from .data import (Annotation, FeatureVideo, Vocab, generate_synthetic,
                   load_dataset, mean_clip_length, split_fractional)
from .env import Episode, clamped_iou
from .ndcore import ParamSet
from .policy import TrainHyper, Trajectory

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    feature_dim: int
    vocab_size: int
    variant: str = fusion.GATED
    embed_dim: int = 64
    gru_hidden: int = 256
    fc_dim: int = 256
    lstm_dim: int = 256
    init_gain: float = 1.0


def build_params(mc: ModelConfig, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    params = ParamSet()
    fusion.init_fusion_params(params, rng, vocab_size=mc.vocab_size,
                              embed_dim=mc.embed_dim, gru_hidden=mc.gru_hidden,
                              feature_dim=mc.feature_dim, variant=mc.variant)
    pol.init_policy_params(params, rng, feature_dim=mc.feature_dim,
                           fc_dim=mc.fc_dim, lstm_dim=mc.lstm_dim,
                           init_gain=mc.init_gain)
    return params


def run_episode(video: FeatureVideo, annotation: Annotation,
                token_ids: list[int], params: ParamSet, width: int,
                hyper: TrainHyper, variant: str,
                rng: np.random.Generator | None = None,
                greedy: bool = False,
                terminal_bonus: float = 0.0) -> tuple[Trajectory, Episode]:
    """One full episode: pool, fuse, forward, act, until the episode ends."""
    episode = Episode(video, annotation, width, beta=hyper.beta,
                      t_max=hyper.t_max, terminal_bonus=terminal_bonus)
    x_l = fusion.encode_query(token_ids, params)
    lstm_state = pol.initial_lstm_state(params)
    traj = Trajectory(n_frames=video.n_frames)
    done = False
    while not done:
        x_m = fusion.pool_window_features(video, episode.state.window)
        s_t = fusion.fuse(variant, x_m, x_l, params)
        out = pol.policy_forward(s_t, lstm_state, params)
        lstm_state = out.lstm_state
        action = pol.sample_action(out.action_probs, rng, greedy=greedy)
        _, reward, done = episode.step(action)
        traj.actions.append(action)
        traj.rewards.append(reward)
        traj.values.append(out.value)
        traj.log_probs.append(pol.action_log_prob(out.action_probs, action))
        traj.entropies.append(pol.entropy(out.action_probs))
    traj.prediction = episode.prediction
    traj.forced = episode.state.forced
    traj.observed_units = set(episode.state.observed_units)
    traj.final_iou = clamped_iou(
        (episode.prediction.start, episode.prediction.end), episode.state.gt)
    return traj, episode


def clip_by_global_norm(grads: dict[str, np.ndarray],
                        max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


def effective_lr(hyper: TrainHyper, progress: float) -> float:
    """Linearly anneal from lr to lr_final over training when lr_final > 0."""
    if hyper.lr_final <= 0:
        return hyper.lr
    progress = min(max(progress, 0.0), 1.0)
    return hyper.lr + (hyper.lr_final - hyper.lr) * progress


def worker_update(traj: Trajectory, snapshot: ParamSet,
                  global_params: ParamSet, hyper: TrainHyper,
                  bootstrap: float = 0.0,
                  lr: float | None = None) -> dict[str, float] | None:
    """Backpropagate one trajectory on the snapshot and push clipped
    gradients to the global parameters. Returns loss components, or None
    when the loss was non-finite and the update was dropped."""
    loss = pol.trajectory_loss(traj, hyper, bootstrap=bootstrap)
    if not np.isfinite(loss.item()):
        log.warning("non-finite loss %r on trajectory of length %d; "
                    "update dropped", loss.item(), len(traj))
        return None
    nd.backward(loss)
    grads = {name: t.grad for name, t in snapshot.items() if t.grad is not None}
    grads = clip_by_global_norm(grads, hyper.grad_clip_norm)
    global_params.apply_gradients(grads, hyper.lr if lr is None else lr)
    snapshot.zero_grads()
    return {"loss": loss.item()}


def run_episode_chunked(video: FeatureVideo, annotation: Annotation,
                        token_ids: list[int], global_params: ParamSet,
                        width: int, hyper: TrainHyper, variant: str,
                        rng: np.random.Generator | None = None,
                        terminal_bonus: float = 0.0,
                        lr: float | None = None) -> Trajectory:
    """One episode with an update every ``hyper.update_horizon`` steps.

    Each chunk replays against a fresh snapshot of the shared parameters and
    closes with a bootstrapped return (the value estimate of the state the
    chunk left off in), so updates land while the episode is still running.
    """
    horizon = hyper.update_horizon
    episode = Episode(video, annotation, width, beta=hyper.beta,
                      t_max=hyper.t_max, terminal_bonus=terminal_bonus)
    traj = Trajectory(n_frames=video.n_frames)
    carry_h = carry_c = None
    done = False
    while not done:
        snapshot = global_params.snapshot()
        x_l = fusion.encode_query(token_ids, snapshot)
        if carry_h is None:
            lstm_state = pol.initial_lstm_state(snapshot)
        else:
            # the recurrent state crosses chunk (and therefore tape)
            # boundaries as data only
            lstm_state = (nd.constant(carry_h), nd.constant(carry_c))
        chunk = Trajectory(n_frames=video.n_frames)
        while not done and len(chunk) < horizon:
            x_m = fusion.pool_window_features(video, episode.state.window)
            s_t = fusion.fuse(variant, x_m, x_l, snapshot)
            out = pol.policy_forward(s_t, lstm_state, snapshot)
            lstm_state = out.lstm_state
            action = pol.sample_action(out.action_probs, rng)
            _, reward, done = episode.step(action)
            chunk.actions.append(action)
            chunk.rewards.append(reward)
            chunk.values.append(out.value)
            chunk.log_probs.append(pol.action_log_prob(out.action_probs, action))
            chunk.entropies.append(pol.entropy(out.action_probs))
        bootstrap = 0.0
        if not done:
            x_m = fusion.pool_window_features(video, episode.state.window)
            s_t = fusion.fuse(variant, x_m, x_l, snapshot)
            bootstrap = pol.policy_forward(s_t, lstm_state, snapshot).value.item()
        worker_update(chunk, snapshot, global_params, hyper,
                      bootstrap=bootstrap, lr=lr)
        carry_h = lstm_state[0].values.copy()
        carry_c = lstm_state[1].values.copy()
        traj.actions += chunk.actions
        traj.rewards += chunk.rewards
        traj.values += chunk.values
        traj.log_probs += chunk.log_probs
        traj.entropies += chunk.entropies
    traj.prediction = episode.prediction
    traj.forced = episode.state.forced
    traj.observed_units = set(episode.state.observed_units)
    traj.final_iou = clamped_iou(
        (episode.prediction.start, episode.prediction.end), episode.state.gt)
    return traj


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    params: ParamSet
    vocab: Vocab
    window_width: int


def _load_or_generate(cfg: Config, data_root) -> tuple[dict[str, FeatureVideo],
                                                       list[Annotation]]:
    if data_root is not None:
        return load_dataset(data_root)
    return generate_synthetic(cfg.synthetic_spec())


def train(cfg: Config, out_dir, data_root=None,
          dataset: tuple[dict[str, FeatureVideo], list[Annotation]] | None = None,
          quiet: bool = False) -> TrainResult:
    """Full training entry point; writes checkpoints, vocab, log, and the
    resolved config under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hyper = cfg.hyper()
    seed = int(cfg["seed"])
    variant = str(cfg["variant"])
    if variant not in fusion.VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")

    videos, annotations = dataset or _load_or_generate(cfg, data_root)
    train_split, val_split, _ = split_fractional(annotations,
                                                 cfg.split_fractions(),
                                                 int(cfg["split.seed"]))
    if not train_split:
        raise ValueError("training split is empty")
    vocab = Vocab.from_annotations(train_split)
    width = mean_clip_length(train_split)
    feature_dim = next(iter(videos.values())).dim
    mc = ModelConfig(feature_dim=feature_dim, vocab_size=len(vocab),
                     variant=variant, embed_dim=int(cfg["model.embed_dim"]),
                     gru_hidden=int(cfg["model.gru_hidden"]),
                     fc_dim=int(cfg["model.fc_dim"]),
                     lstm_dim=int(cfg["model.lstm_dim"]),
                     init_gain=float(cfg["model.init_gain"]))
    global_params = build_params(mc, seed)

    total_episodes = int(cfg["train.total_episodes"])
    checkpoint_every = int(cfg["train.checkpoint_every"])
    terminal_bonus = float(cfg["train.terminal_bonus"])
    select_best = bool(cfg["train.select_best"]) and bool(val_split)
    frames_budget = float(cfg["train.select_frames_budget"])
    by_id = videos

    # Validation-based model selection: asynchronous policy-gradient runs are
    # not run-to-run deterministic, and the greedy policy can drift late in
    # training, so optionally score periodic snapshots on the validation
    # split and return the best one instead of whatever the last update left.
    best_lock = threading.Lock()
    best: dict = {"score": -1.0, "frames": float("inf"), "params": None}

    def consider(candidate: ParamSet) -> None:
        from .evaluation import evaluate
        report = evaluate(candidate, videos, val_split, vocab,
                          width, hyper, variant, alphas=[0.5])
        score = report.accuracy[0.5]
        if frames_budget > 0:
            # soft efficiency budget: accuracy buys nothing once the agent
            # scans far past the configured share of the video
            score -= 0.01 * max(0.0, report.mean_pct_frames - frames_budget)
        with best_lock:
            if (score, -report.mean_pct_frames) > (best["score"],
                                                   -best["frames"]):
                best.update(score=score, frames=report.mean_pct_frames,
                            params=candidate)

    counter_lock = threading.Lock()
    turn_cond = threading.Condition(counter_lock)
    log_lock = threading.Lock()
    next_episode = 0
    log_path = out_dir / "train_log.jsonl"
    log_file = open(log_path, "w")
    # Deterministic mode serializes workers round-robin: episode i always runs
    # on worker i % workers against the parameters left by episode i - 1, so a
    # given seed reproduces bit-identical checkpoints. Throughput matches the
    # async default closely because the interpreter already serializes most of
    # the numerical work.
    deterministic = bool(cfg["train.deterministic"])
    # Optional curriculum weighting: bias > 0 oversamples annotations whose
    # moment ends early in the video. The policy then learns a prior that late
    # moments are rare, which makes abandoning a long fruitless scan
    # worthwhile instead of always sweeping to the end of the timeline.
    early_bias = float(cfg["train.early_bias"])
    sample_weights = None
    if early_bias > 0:
        raw = np.array([np.exp(-early_bias * ann.gt_end
                               / by_id[ann.video_id].n_frames)
                        for ann in train_split])
        sample_weights = raw / raw.sum()

    def worker(worker_id: int) -> None:
        nonlocal next_episode
        rng = np.random.default_rng([seed, worker_id])
        order: list[int] = []

        def claim_episode() -> int | None:
            nonlocal next_episode
            if deterministic:
                with turn_cond:
                    while (next_episode < total_episodes
                           and next_episode % hyper.workers != worker_id):
                        turn_cond.wait()
                    if next_episode >= total_episodes:
                        turn_cond.notify_all()
                        return None
                    return next_episode
            with counter_lock:
                if next_episode >= total_episodes:
                    return None
                idx = next_episode
                next_episode += 1
                return idx

        def release_episode() -> None:
            nonlocal next_episode
            if deterministic:
                with turn_cond:
                    next_episode += 1
                    turn_cond.notify_all()

        while True:
            episode_idx = claim_episode()
            if episode_idx is None:
                break
            if sample_weights is not None:
                ann = train_split[rng.choice(len(train_split),
                                             p=sample_weights)]
            else:
                if not order:
                    order = list(rng.permutation(len(train_split)))
                ann = train_split[order.pop()]
            lr_now = effective_lr(hyper, episode_idx / max(1, total_episodes - 1))
            if hyper.update_horizon > 0:
                traj = run_episode_chunked(by_id[ann.video_id], ann,
                                           vocab.encode(ann.tokens),
                                           global_params, width, hyper,
                                           variant, rng=rng,
                                           terminal_bonus=terminal_bonus,
                                           lr=lr_now)
                losses = None
            else:
                snapshot = global_params.snapshot()
                traj, _ = run_episode(by_id[ann.video_id], ann,
                                      vocab.encode(ann.tokens), snapshot,
                                      width, hyper, variant, rng=rng,
                                      terminal_bonus=terminal_bonus)
                losses = worker_update(traj, snapshot, global_params, hyper,
                                       lr=lr_now)
            record = {
                "episode": episode_idx,
                "worker": worker_id,
                "iou": round(traj.final_iou, 6),
                "steps": len(traj),
                "reward": round(traj.total_reward, 6),
                "loss": None if losses is None else round(losses["loss"], 6),
                "version": global_params.version,
            }
            with log_lock:
                log_file.write(json.dumps(record) + "\n")
            if checkpoint_every and (episode_idx + 1) % checkpoint_every == 0:
                candidate = global_params.snapshot()
                with log_lock:
                    nd.save_checkpoint(candidate,
                                       out_dir / f"checkpoint_{episode_idx + 1}.bin")
                if select_best:
                    consider(candidate)
            release_episode()

    threads = [threading.Thread(target=worker, args=(w,))
               for w in range(hyper.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    log_file.close()

    if select_best:
        consider(global_params.snapshot())
        if best["params"] is not None:
            global_params = best["params"]
    checkpoint_path = out_dir / "checkpoint.bin"
    nd.save_checkpoint(global_params, checkpoint_path)
    vocab.save(out_dir / "vocab.txt")
    cfg.write(out_dir / "config.resolved")
    if not quiet:
        log.info("trained %d episodes -> %s", total_episodes, checkpoint_path)
    return TrainResult(checkpoint_path, log_path, global_params, vocab, width)
