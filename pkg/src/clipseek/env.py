"""Temporal search environment: a fixed-width window steered over a video.

The agent moves the window with six shift actions (two jump sizes derived
from the video length, plus one-second steps in either direction) or stops
with STOP. Rewards are the change in signed interval overlap minus a small
per-step cost.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TextIO

from .data import Annotation, FeatureVideo

TRACE_HEADER = "step\taction\tstart\tend\tiou\treward"


@dataclass(frozen=True)
class Window:
    start: int  # inclusive, frames
    end: int    # exclusive, frames

    @property
    def width(self) -> int:
        return self.end - self.start


class ActionKind(enum.IntEnum):
    """The seven actions. Index order is fixed: policy logits use it."""

    BACK_JUMP = 0   # backward by the large jump (N/5)
    BACK_HOP = 1    # backward by the small jump (N/10)
    BACK_SEC = 2    # backward by one second of frames
    FWD_SEC = 3
    FWD_HOP = 4
    FWD_JUMP = 5
    STOP = 6        # end the search, return the current window


@dataclass(frozen=True)
class ActionOffsets:
    hop: int   # max(1, floor(N/10))
    jump: int  # max(1, floor(N/5))
    sec: int   # max(1, round(fps))


def action_offsets(n_frames: int, fps: float) -> ActionOffsets:
    if n_frames < 1:
        raise ValueError(f"video length must be >= 1, got {n_frames}")
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return ActionOffsets(
        hop=max(1, n_frames // 10),
        jump=max(1, n_frames // 5),
        sec=max(1, round(fps)),
    )


_SIGNED_OFFSETS = {
    ActionKind.BACK_JUMP: lambda o: -o.jump,
    ActionKind.BACK_HOP: lambda o: -o.hop,
    ActionKind.BACK_SEC: lambda o: -o.sec,
    ActionKind.FWD_SEC: lambda o: o.sec,
    ActionKind.FWD_HOP: lambda o: o.hop,
    ActionKind.FWD_JUMP: lambda o: o.jump,
}


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Signed interval overlap ratio: negative when disjoint, 1 when equal."""
    a0, a1 = a
    b0, b1 = b
    if a1 <= a0 or b1 <= b0:
        raise ValueError(f"intervals must have positive length: {a}, {b}")
    return (min(a1, b1) - max(a0, b0)) / (max(a1, b1) - min(a0, b0))


def clamped_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Evaluation-side overlap score in [0, 1]."""
    return max(0.0, temporal_iou(a, b))


def shaped_reward(iou_prev: float, iou_cur: float, t: int, beta: float) -> float:
    """Potential difference of signed overlap, minus beta * step count."""
    return (iou_cur - iou_prev) - beta * t


@dataclass
class EnvState:
    window: Window
    t: int
    observed_units: set[int]
    done: bool
    gt: tuple[int, int]
    forced: bool = False  # done was imposed by the step cap, not STOP


@dataclass
class TraceStep:
    step: int
    action: ActionKind
    window: Window
    iou: float
    reward: float


def units_in_window(window: Window, unit_len: int, num_units: int) -> list[int]:
    """Indices of feature units whose frame span intersects the window."""
    first = window.start // unit_len
    last = min(num_units - 1, (window.end - 1) // unit_len)
    return list(range(first, last + 1))


class Episode:
    """Single-owner episode over one (video, annotation) pair."""

    def __init__(self, video: FeatureVideo, annotation: Annotation,
                 window_width: int, beta: float = 0.01, t_max: int = 30,
                 terminal_bonus: float = 0.0):
        if video.n_frames < 1:
            raise ValueError(f"video {video.id!r} is empty")
        if window_width < 1:
            raise ValueError(f"window width must be >= 1, got {window_width}")
        self.video = video
        self.annotation = annotation
        self.width = min(window_width, video.n_frames)
        self.beta = beta
        self.t_max = t_max
        self.terminal_bonus = terminal_bonus
        self.truncated = self.width < window_width
        self.offsets = action_offsets(video.n_frames, video.fps)
        window = Window(0, self.width)
        self.state = EnvState(
            window=window,
            t=0,
            observed_units=set(units_in_window(window, video.unit_len_frames,
                                               video.num_units)),
            done=False,
            gt=(annotation.gt_start, annotation.gt_end),
        )
        self.trace: list[TraceStep] = []

    def current_iou(self) -> float:
        return temporal_iou((self.state.window.start, self.state.window.end),
                            self.state.gt)

    def step(self, action: ActionKind) -> tuple[EnvState, float, bool]:
        state = self.state
        if state.done:
            raise RuntimeError("step() on a finished episode")
        n = self.video.n_frames
        iou_prev = self.current_iou()
        window = state.window
        if action != ActionKind.STOP:
            delta = _SIGNED_OFFSETS[action](self.offsets)
            start, end = window.start + delta, window.end + delta
            if start >= 0 and end <= n:
                window = Window(start, end)
            # otherwise the move would leave the video: window stays put
        state.window = window
        state.t += 1
        state.observed_units.update(
            units_in_window(window, self.video.unit_len_frames,
                            self.video.num_units))
        iou_cur = self.current_iou()
        reward = shaped_reward(iou_prev, iou_cur, state.t, self.beta)
        if action == ActionKind.STOP:
            state.done = True
            if self.terminal_bonus:
                reward += self.terminal_bonus * max(0.0, iou_cur)
        elif state.t >= self.t_max:
            state.done = True
            state.forced = True
        self.trace.append(TraceStep(state.t, action, window, iou_cur, reward))
        return state, reward, state.done

    @property
    def prediction(self) -> Window:
        return self.state.window

    def write_trace(self, f: TextIO) -> None:
        f.write(TRACE_HEADER + "\n")
        for s in self.trace:
            f.write(f"{s.step}\t{s.action.name}\t{s.window.start}\t"
                    f"{s.window.end}\t{s.iou:.6f}\t{s.reward:.6f}\n")


def parse_trace(f: TextIO) -> list[TraceStep]:
    header = f.readline().strip()
    if header != TRACE_HEADER:
        raise ValueError(f"bad trace header: {header!r}")
    steps = []
    for line in f:
        if not line.strip():
            continue
        step, action, start, end, iou, reward = line.rstrip("\n").split("\t")
        steps.append(TraceStep(int(step), ActionKind[action],
                               Window(int(start), int(end)),
                               float(iou), float(reward)))
    return steps
