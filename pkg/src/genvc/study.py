"""2AFC study construction, durable response logging, rater filtering, and
the released per-video CSV.

A study compares two methods over a fixed video list, with a handful of
golden comparisons (a visibly better vs. visibly worse pair) planted at
random positions.  Raters failing the golden questions are dropped before
aggregation; golden answers never contribute to the win counts.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evalharness import load_recons

GOLDEN_HIGH = "golden_high"   # the planted correct answer (mild degradation)
GOLDEN_LOW = "golden_low"
GOLDEN_PROVENANCE = "synthetic-blur-quantize-v1"

STUDY_CSV_COLUMNS = (
    "video", "wins_left", "wins_right", "bpp_left", "bpp_right",
    "avg_flips", "avg_answer_time_ms", "avg_num_pauses",
)


class DuplicateResponseError(ValueError):
    pass


class UnknownComparisonError(KeyError):
    pass


@dataclass
class StudyConfig:
    method_left: str = "Ours"
    method_right: str = "Baseline"
    videos: tuple[str, ...] = tuple(f"{i:02d}" for i in range(1, 31))
    n_golden: int = 5
    clip_frames: int = 60
    seed: int = 0


@dataclass
class Comparison:
    id: str
    video: str
    kind: str                      # "method" or "golden"
    source_a: str                  # method (or golden grade) shown as candidate A
    source_b: str
    correct_choice: str | None     # golden only: the higher-quality slot
    media: dict[str, str]          # slot -> path (a / b / original)
    bpp: dict[str, float]          # method -> per-video bpp (method kind only)

    @property
    def slot_of(self) -> dict[str, str]:
        return {self.source_a: "A", self.source_b: "B"}


@dataclass
class StudyManifest:
    config: StudyConfig
    comparisons: list[Comparison]

    def by_id(self, comparison_id: str) -> Comparison:
        for c in self.comparisons:
            if c.id == comparison_id:
                return c
        raise UnknownComparisonError(comparison_id)

    def blinded(self) -> list[dict]:
        """What a rater's client may see: ids and media slots only."""
        return [
            {"id": c.id, "media": {slot: f"/media/{c.id}/{slot}" for slot in ("a", "b", "original")}}
            for c in self.comparisons
        ]

    def rater_order(self, rater_id: str) -> list[str]:
        rng = np.random.default_rng(
            [self.config.seed, zlib.crc32(rater_id.encode()) & 0xFFFFFFFF])
        ids = [c.id for c in self.comparisons]
        rng.shuffle(ids)
        return ids


def build_study(
    config: StudyConfig,
    recon_root: str | Path,
    originals_root: str | Path,
    golden_root: str | Path,
    bpp_by_method: dict[str, dict[str, float]] | None = None,
) -> StudyManifest:
    """Assemble the comparison list from exported reconstruction folders.

    `recon_root` holds `<method>/<video>/frame_%04d.png` trees for both
    methods; `golden_root` holds `golden_high/<video>` and `golden_low/<video>`
    trees; golden comparisons are planted at seeded random positions with
    seeded A/B assignments, like the method comparisons.
    """
    recon_root = Path(recon_root)
    originals_root = Path(originals_root)
    golden_root = Path(golden_root)
    bpp_by_method = bpp_by_method or {}
    rng = np.random.default_rng(config.seed)

    for method in (config.method_left, config.method_right):
        for video in config.videos:
            if not (recon_root / method / video).is_dir():
                raise FileNotFoundError(f"missing reconstructions: {method}/{video}")

    comparisons = []
    for video in config.videos:
        a_is_left = bool(rng.integers(0, 2))
        source_a = config.method_left if a_is_left else config.method_right
        source_b = config.method_right if a_is_left else config.method_left
        comparisons.append(Comparison(
            id=f"cmp_{video}",
            video=video,
            kind="method",
            source_a=source_a,
            source_b=source_b,
            correct_choice=None,
            media={
                "a": str(recon_root / source_a / video),
                "b": str(recon_root / source_b / video),
                "original": str(originals_root / video),
            },
            bpp={m: bpp_by_method.get(m, {}).get(video) for m in (source_a, source_b)
                 if bpp_by_method.get(m, {}).get(video) is not None},
        ))

    golden_videos = [Path(p).name for p in sorted((golden_root / GOLDEN_HIGH).iterdir())]
    if len(golden_videos) < config.n_golden:
        raise FileNotFoundError(
            f"golden pool has {len(golden_videos)} clips, need {config.n_golden}")
    picks = rng.choice(len(golden_videos), size=config.n_golden, replace=False)
    for k, idx in enumerate(picks):
        video = golden_videos[int(idx)]
        high_is_a = bool(rng.integers(0, 2))
        comparisons.append(Comparison(
            id=f"gold_{k}",
            video=video,
            kind="golden",
            source_a=GOLDEN_HIGH if high_is_a else GOLDEN_LOW,
            source_b=GOLDEN_LOW if high_is_a else GOLDEN_HIGH,
            correct_choice="A" if high_is_a else "B",
            media={
                "a": str(golden_root / (GOLDEN_HIGH if high_is_a else GOLDEN_LOW) / video),
                "b": str(golden_root / (GOLDEN_LOW if high_is_a else GOLDEN_HIGH) / video),
                "original": str(originals_root / video),
            },
            bpp={},
        ))

    positions = rng.permutation(len(comparisons))
    ordered = [c for _, c in sorted(zip(positions, comparisons), key=lambda t: t[0])]
    return StudyManifest(config, ordered)


def save_manifest(manifest: StudyManifest, path: str | Path) -> None:
    payload = {
        "config": asdict(manifest.config),
        "comparisons": [asdict(c) for c in manifest.comparisons],
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_manifest(path: str | Path) -> StudyManifest:
    payload = json.loads(Path(path).read_text())
    config = StudyConfig(**{**payload["config"],
                            "videos": tuple(payload["config"]["videos"])})
    return StudyManifest(config, [Comparison(**c) for c in payload["comparisons"]])


# ---------------------------------------------------------------------------
# response records and the durable log
# ---------------------------------------------------------------------------

@dataclass
class ResponseRecord:
    rater_id: str
    comparison_id: str
    choice: str                   # "A" or "B"
    flips: int = 0
    pauses: int = 0
    answer_time_ms: float = 0.0
    is_golden: bool = False
    golden_correct: bool | None = None

    def __post_init__(self) -> None:
        if self.choice not in ("A", "B"):
            raise ValueError("choice must be 'A' or 'B' (forced choice)")
        if self.flips < 0 or self.pauses < 0 or self.answer_time_ms < 0:
            raise ValueError("telemetry counters must be nonnegative")


class ResponseLog:
    """Append-only line log; one JSON record plus a CRC32 suffix per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            for record in self.read():
                self._seen.add((record.rater_id, record.comparison_id))

    def append(self, record: ResponseRecord) -> None:
        key = (record.rater_id, record.comparison_id)
        if key in self._seen:
            raise DuplicateResponseError(
                f"rater {record.rater_id!r} already answered {record.comparison_id!r}")
        payload = json.dumps(asdict(record), sort_keys=True)
        crc = zlib.crc32(payload.encode()) & 0xFFFFFFFF
        with open(self.path, "a") as f:
            f.write(f"{payload}|{crc:08x}\n")
        self._seen.add(key)

    def read(self) -> list[ResponseRecord]:
        records = []
        for lineno, line in enumerate(self.path.read_text().splitlines(), start=1):
            payload, _, crc_hex = line.rpartition("|")
            if not payload or zlib.crc32(payload.encode()) & 0xFFFFFFFF != int(crc_hex, 16):
                raise ValueError(f"corrupt response log line {lineno}")
            records.append(ResponseRecord(**json.loads(payload)))
        return records


def record_response(manifest: StudyManifest, log: ResponseLog,
                    record: ResponseRecord) -> ResponseRecord:
    """Validate a response against the manifest, grade golden answers, persist."""
    comparison = manifest.by_id(record.comparison_id)
    record.is_golden = comparison.kind == "golden"
    record.golden_correct = (
        record.choice == comparison.correct_choice if record.is_golden else None)
    log.append(record)
    return record


# ---------------------------------------------------------------------------
# filtering and aggregation
# ---------------------------------------------------------------------------

@dataclass
class StudyCSVRow:
    video: str
    wins_left: int
    wins_right: int
    bpp_left: float | None
    bpp_right: float | None
    avg_flips: float
    avg_answer_time_ms: float
    avg_num_pauses: float


def filter_and_aggregate(
    log: ResponseLog, manifest: StudyManifest,
    min_golden_correct: int = 4,
) -> tuple[list[str], list[StudyCSVRow]]:
    """Qualified raters (enough golden answers correct) and per-video rows.

    Aggregation is order-independent over the log and counts only qualified
    raters' method comparisons; golden responses never reach the wins.
    """
    records = log.read()
    golden_score: dict[str, int] = {}
    for r in records:
        if r.is_golden:
            golden_score[r.rater_id] = golden_score.get(r.rater_id, 0) + bool(r.golden_correct)
        else:
            golden_score.setdefault(r.rater_id, 0)
    qualified = sorted(r for r, score in golden_score.items() if score >= min_golden_correct)
    qualified_set = set(qualified)

    left = manifest.config.method_left
    rows = []
    for comparison in manifest.comparisons:
        if comparison.kind != "method":
            continue
        hits = [r for r in records
                if r.comparison_id == comparison.id and r.rater_id in qualified_set]
        left_slot = comparison.slot_of[left]
        wins_left = sum(r.choice == left_slot for r in hits)
        rows.append(StudyCSVRow(
            video=comparison.video,
            wins_left=wins_left,
            wins_right=len(hits) - wins_left,
            bpp_left=comparison.bpp.get(left),
            bpp_right=comparison.bpp.get(manifest.config.method_right),
            avg_flips=float(np.mean([r.flips for r in hits])) if hits else 0.0,
            avg_answer_time_ms=float(np.mean([r.answer_time_ms for r in hits])) if hits else 0.0,
            avg_num_pauses=float(np.mean([r.pauses for r in hits])) if hits else 0.0,
        ))
    rows.sort(key=lambda row: row.video)
    return qualified, rows


def write_study_csv(rows: list[StudyCSVRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(STUDY_CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row.video, row.wins_left, row.wins_right,
                _fmt(row.bpp_left), _fmt(row.bpp_right),
                row.avg_flips, row.avg_answer_time_ms, row.avg_num_pauses,
            ])


def _fmt(value: float | None) -> str | float:
    return "" if value is None else value


# ---------------------------------------------------------------------------
# golden clip synthesis (no external codec available at desk scale)
# ---------------------------------------------------------------------------

def make_golden_pair(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A visibly distinct high/low quality pair from one original clip.

    Stands in for an external codec at two quality factors: the low-quality
    side is heavily blurred and coarsely quantized, the high-quality side is
    only lightly quantized.
    """
    from scipy.ndimage import gaussian_filter

    high = np.round(frames * 63.0) / 63.0
    low = gaussian_filter(frames, (0, 2.5, 2.5, 0))
    low = np.round(low * 7.0) / 7.0
    return high.astype(np.float64), low.astype(np.float64)
