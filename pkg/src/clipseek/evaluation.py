"""Accuracy and efficiency evaluation of a trained localizer.

Reports single-prediction accuracy at several overlap thresholds, the mean
fraction of video frames the agent actually observed, mean action counts
(the stop action included), per-episode wall time, and the best overlap any
fixed-width window placement could have achieved (the ceiling).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Annotation, FeatureVideo, Vocab
from .env import clamped_iou
from .ndcore import ParamSet
from .policy import TrainHyper, Trajectory
from .trainer import run_episode


def oracle_ceiling(gt_len: int, width: int, n_frames: int) -> float:
    """Best clamped overlap over all integer placements of the window.

    The optimum nests the shorter interval inside the longer one, which is
    always achievable within the video bounds, so the closed form is just
    the length ratio (with the window truncated to the video).
    """
    if width < 1 or gt_len < 1:
        raise ValueError("window and clip lengths must be >= 1")
    w = min(width, n_frames)
    return min(w, gt_len) / max(w, gt_len)


def brute_force_ceiling(gt: tuple[int, int], width: int, n_frames: int) -> float:
    """Placement sweep oracle for cross-checking ``oracle_ceiling``."""
    w = min(width, n_frames)
    best = 0.0
    for start in range(0, n_frames - w + 1):
        best = max(best, clamped_iou((start, start + w), gt))
    return best


def chance_baseline(annotations: list[Annotation],
                    videos: dict[str, FeatureVideo], width: int,
                    alpha: float, seed: int = 0,
                    samples: int = 10_000) -> float:
    """Accuracy of uniformly random fixed-window placements, by Monte Carlo."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(samples):
        ann = annotations[int(rng.integers(len(annotations)))]
        n = videos[ann.video_id].n_frames
        w = min(width, n)
        start = int(rng.integers(0, n - w + 1))
        iou = clamped_iou((start, start + w), (ann.gt_start, ann.gt_end))
        hits += iou >= alpha
    return hits / samples


def efficiency_metrics(trajectories: list[Trajectory],
                       unit_len: int = 1) -> tuple[float, float]:
    """(mean % of frames observed, mean action count incl. the stop action)."""
    pct = []
    actions = []
    for traj in trajectories:
        observed_frames = min(traj.n_frames, len(traj.observed_units) * unit_len)
        pct.append(100.0 * observed_frames / traj.n_frames)
        actions.append(len(traj))
    return float(np.mean(pct)), float(np.mean(actions))


@dataclass
class EvalRecord:
    video_id: str
    query: str
    prediction: tuple[int, int]
    gt: tuple[int, int]
    iou: float
    ceiling: float
    steps: int
    pct_frames: float
    wall_time_s: float
    forced: bool


@dataclass
class EvalReport:
    accuracy: dict[float, float]
    mean_pct_frames: float
    mean_actions: float
    mean_wall_time_s: float
    mean_ceiling: float
    records: list[EvalRecord] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["localization evaluation",
                 f"  annotations evaluated: {len(self.records)}"]
        for alpha in sorted(self.accuracy):
            lines.append(f"  accuracy @ {alpha:.2f}: {self.accuracy[alpha]:.4f}")
        lines += [
            f"  mean %% frames observed: {self.mean_pct_frames:.2f}",
            f"  mean actions (stop incl.): {self.mean_actions:.2f}",
            f"  mean wall time per query: {self.mean_wall_time_s * 1e3:.2f} ms",
            f"  mean placement ceiling: {self.mean_ceiling:.4f}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(self.to_text())
        with open(out_dir / "records.jsonl", "w") as f:
            for r in self.records:
                f.write(json.dumps(r.__dict__) + "\n")


def evaluate(params: ParamSet, videos: dict[str, FeatureVideo],
             annotations: list[Annotation], vocab: Vocab, width: int,
             hyper: TrainHyper, variant: str,
             alphas: list[float] = (0.3, 0.5, 0.7),
             greedy: bool = True, seed: int = 0) -> EvalReport:
    """Run one episode per annotation and aggregate accuracy and efficiency."""
    if not annotations:
        raise ValueError("evaluate: empty annotation list")
    missing = {a.video_id for a in annotations} - set(videos)
    if missing:
        raise ValueError(f"evaluate: annotations reference unknown videos "
                         f"{sorted(missing)}")
    rng = np.random.default_rng(seed)
    records: list[EvalRecord] = []
    trajectories: list[Trajectory] = []
    for ann in annotations:
        video = videos[ann.video_id]
        t0 = time.perf_counter()
        traj, episode = run_episode(video, ann, vocab.encode(ann.tokens),
                                    params, width, hyper, variant,
                                    rng=rng, greedy=greedy)
        wall = time.perf_counter() - t0
        pred = traj.prediction
        observed = min(video.n_frames,
                       len(traj.observed_units) * video.unit_len_frames)
        records.append(EvalRecord(
            video_id=ann.video_id, query=ann.query_text,
            prediction=(pred.start, pred.end), gt=(ann.gt_start, ann.gt_end),
            iou=traj.final_iou,
            ceiling=oracle_ceiling(ann.gt_len, width, video.n_frames),
            steps=len(traj),
            pct_frames=100.0 * observed / video.n_frames,
            wall_time_s=wall, forced=traj.forced))
        trajectories.append(traj)
    accuracy = {alpha: float(np.mean([r.iou >= alpha for r in records]))
                for alpha in alphas}
    return EvalReport(
        accuracy=accuracy,
        mean_pct_frames=float(np.mean([r.pct_frames for r in records])),
        mean_actions=float(np.mean([r.steps for r in records])),
        mean_wall_time_s=float(np.mean([r.wall_time_s for r in records])),
        mean_ceiling=float(np.mean([r.ceiling for r in records])),
        records=records)


def localize(params: ParamSet, video: FeatureVideo, query_tokens: list[str],
             vocab: Vocab, width: int, hyper: TrainHyper,
             variant: str) -> tuple[tuple[int, int], "Episode"]:
    """Greedy localization of one query; returns the window and the episode
    (whose trace can be written in the documented text format)."""
    ann = Annotation(video.id, " ".join(query_tokens), query_tokens,
                     0, video.n_frames)
    traj, episode = run_episode(video, ann, vocab.encode(query_tokens),
                                params, width, hyper, variant, greedy=True)
    pred = traj.prediction
    return (pred.start, pred.end), episode
