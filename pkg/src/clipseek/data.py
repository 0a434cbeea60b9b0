"""Dataset ingestion, splits, and the synthetic planted-clip generator.

File formats (both carry a magic header; see README for byte layouts):
  * annotations: text, one record per line "video_id start_s end_s<TAB>query"
  * features: binary, per-unit float32 vectors with timing metadata
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ANNOT_MAGIC = "# clipseek-annotations v1"
FEATURE_MAGIC = b"CSEEK-FEAT-1\n"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class FeatureVideo:
    """Per-unit feature timeline standing in for video frames."""

    id: str
    n_frames: int
    fps: float
    unit_len_frames: int
    features: np.ndarray  # (num_units, dim) float32

    def __post_init__(self):
        expected = math.ceil(self.n_frames / self.unit_len_frames)
        if self.features.shape[0] != expected:
            raise ValueError(
                f"video {self.id!r}: {self.features.shape[0]} units, "
                f"expected ceil({self.n_frames}/{self.unit_len_frames})={expected}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"video {self.id!r}: non-finite feature values")

    @property
    def num_units(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Annotation:
    video_id: str
    query_text: str
    tokens: list[str]
    gt_start: int  # frames, inclusive
    gt_end: int    # frames, exclusive

    @property
    def gt_len(self) -> int:
        return self.gt_end - self.gt_start


class Vocab:
    """Token -> id map with a reserved unknown id 0; ids are sorted-order stable."""

    def __init__(self, tokens: list[str]):
        uniq = sorted(set(tokens))
        self._ids = {tok: i + 1 for i, tok in enumerate(uniq)}
        self.tokens = [UNK_TOKEN] + uniq

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._ids.get(t, 0) for t in tokens]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens[1:]) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text().split())

    @classmethod
    def from_annotations(cls, annotations: list[Annotation]) -> "Vocab":
        toks: list[str] = []
        for a in annotations:
            toks.extend(a.tokens)
        return cls(toks)


# ---------------------------------------------------------------------------
# annotation io
# ---------------------------------------------------------------------------

def load_annotations(path, videos: dict[str, FeatureVideo]) -> list[Annotation]:
    """Parse the annotation text format; times in seconds become frames."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != ANNOT_MAGIC:
        raise ValueError(f"{path}: missing annotation magic header")
    out: list[Annotation] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            head, query = line.split("\t", 1)
            video_id, start_s, end_s = head.split()
            start_s, end_s = float(start_s), float(end_s)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed annotation line") from None
        if video_id not in videos:
            raise ValueError(f"{path}:{lineno}: unknown video {video_id!r}")
        video = videos[video_id]
        gt_start = int(round(start_s * video.fps))
        gt_end = int(round(end_s * video.fps))
        if not (0 <= gt_start < gt_end <= video.n_frames):
            raise ValueError(
                f"{path}:{lineno}: interval [{gt_start}, {gt_end}) outside "
                f"video of {video.n_frames} frames")
        out.append(Annotation(video_id, query, tokenize(query), gt_start, gt_end))
    return out


def save_annotations(path, annotations: list[Annotation],
                     videos: dict[str, FeatureVideo]) -> None:
    with open(path, "w") as f:
        f.write(ANNOT_MAGIC + "\n")
        for a in annotations:
            fps = videos[a.video_id].fps
            f.write(f"{a.video_id} {a.gt_start / fps:.6f} {a.gt_end / fps:.6f}"
                    f"\t{a.query_text}\n")


# ---------------------------------------------------------------------------
# feature io
# ---------------------------------------------------------------------------

def save_feature_video(path, video: FeatureVideo) -> None:
    """magic, u16 id length + id bytes, u32 N, f64 fps, u32 unit_len,
    u32 U, u32 D, then U*D float32 LE row-major."""
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        raw = video.id.encode("utf-8")
        f.write(struct.pack("<H", len(raw)))
        f.write(raw)
        f.write(struct.pack("<IdIII", video.n_frames, video.fps,
                            video.unit_len_frames, video.num_units, video.dim))
        f.write(np.ascontiguousarray(video.features, dtype="<f4").tobytes())


def load_feature_video(path) -> FeatureVideo:
    with open(path, "rb") as f:
        magic = f.read(len(FEATURE_MAGIC))
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file (bad magic)")
        (id_len,) = struct.unpack("<H", f.read(2))
        vid = f.read(id_len).decode("utf-8")
        n, fps, unit_len, u, d = struct.unpack("<IdIII", f.read(24))
        data = f.read(4 * u * d)
        if len(data) != 4 * u * d:
            raise ValueError(f"{path}: truncated feature payload")
        feats = np.frombuffer(data, dtype="<f4").reshape(u, d)
        return FeatureVideo(vid, n, fps, unit_len, np.array(feats))


def load_dataset(root) -> tuple[dict[str, FeatureVideo], list[Annotation]]:
    """Read a dataset directory: features/*.feat plus annotations.txt."""
    root = Path(root)
    videos = {}
    for p in sorted((root / "features").glob("*.feat")):
        v = load_feature_video(p)
        videos[v.id] = v
    if not videos:
        raise ValueError(f"{root}: no feature files under features/")
    annotations = load_annotations(root / "annotations.txt", videos)
    return videos, annotations


def save_dataset(root, videos: dict[str, FeatureVideo],
                 annotations: list[Annotation]) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for vid, v in sorted(videos.items()):
        save_feature_video(root / "features" / f"{vid}.feat", v)
    save_annotations(root / "annotations.txt", annotations, videos)


# ---------------------------------------------------------------------------
# statistics and splits
# ---------------------------------------------------------------------------

def mean_clip_length(annotations: list[Annotation]) -> int:
    """Rounded mean ground-truth clip length in frames (the window width)."""
    if not annotations:
        raise ValueError("mean_clip_length: empty annotation list")
    mean = sum(a.gt_len for a in annotations) / len(annotations)
    return max(1, int(round(mean)))


def split_fractional(annotations: list[Annotation],
                     fractions: tuple[float, float, float],
                     seed: int) -> tuple[list[Annotation], list[Annotation],
                                         list[Annotation]]:
    """Video-granularity split: all annotations of a video share a split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    video_ids = sorted({a.video_id for a in annotations})
    nonzero = sum(1 for f in fractions if f > 0)
    if len(video_ids) < nonzero:
        raise ValueError(f"{len(video_ids)} videos cannot fill {nonzero} splits")
    rng = np.random.default_rng(seed)
    rng.shuffle(video_ids)
    n = len(video_ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    groups = (set(video_ids[:n_train]),
              set(video_ids[n_train:n_train + n_val]),
              set(video_ids[n_train + n_val:]))
    return tuple([a for a in annotations if a.video_id in g] for g in groups)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_videos: int = 200
    n_frames: int = 200
    fps: float = 24.0
    dim: int = 16
    vocab_size: int = 32
    clip_len_mean: int = 40
    clip_len_jitter: int = 10
    query_len: int = 3
    signal_strength: float = 1.0
    noise_scale: float = 0.5
    seed: int = 7

    def validate(self) -> None:
        if self.clip_len_mean >= self.n_frames:
            raise ValueError("mean clip length must be < video length")
        if self.signal_strength < 0 or self.noise_scale < 0:
            raise ValueError("signal and noise scales must be >= 0")


def query_direction(tokens: list[str], dim: int) -> np.ndarray:
    """Deterministic unit vector in feature space for a token sequence."""
    digest = hashlib.sha256(" ".join(tokens).encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(spec: SyntheticSpec) -> tuple[dict[str, FeatureVideo],
                                                     list[Annotation]]:
    """Gaussian background per frame unit, with one interval per video whose
    features are shifted by signal_strength along a query-determined direction."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = [f"tok{i:03d}" for i in range(spec.vocab_size)]
    videos: dict[str, FeatureVideo] = {}
    annotations: list[Annotation] = []
    for i in range(spec.num_videos):
        vid = f"syn{i:04d}"
        feats = rng.normal(0.0, spec.noise_scale,
                           size=(spec.n_frames, spec.dim))
        jitter = rng.integers(-spec.clip_len_jitter, spec.clip_len_jitter + 1)
        clip_len = int(np.clip(spec.clip_len_mean + jitter, 1, spec.n_frames))
        gt_start = int(rng.integers(0, spec.n_frames - clip_len + 1))
        gt_end = gt_start + clip_len
        tokens = [vocab[int(k)] for k in
                  rng.integers(0, spec.vocab_size, size=spec.query_len)]
        feats[gt_start:gt_end] += (spec.signal_strength
                                   * query_direction(tokens, spec.dim))
        videos[vid] = FeatureVideo(vid, spec.n_frames, spec.fps, 1,
                                   feats.astype(np.float32))
        annotations.append(Annotation(vid, " ".join(tokens), tokens,
                                      gt_start, gt_end))
    return videos, annotations
