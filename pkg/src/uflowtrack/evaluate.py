"""Reset-based evaluation protocol and metrics.

A run initializes the tracker on frame 0 and evaluates per-frame overlap
against ground truth.  Zero overlap is a failure: the next reinit_delay - 1
frames are skipped and the tracker is re-initialized from ground truth
reinit_delay frames after the failure.  Accuracy averages the overlaps of
evaluated frames, excluding the burn_in frames that follow a
re-initialization (the sequence-initial init has no burn-in).  The expected
average overlap summarizes accuracy and robustness together: per run
length L, the mean over run segments of the first L post-init overlaps,
zero-padded past a failure, averaged over an interval of lengths.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import RotBox, iou_axis_aligned, polygon_overlap
from .scoring import ScoreConfig

OVERLAP_KINDS = ("rotated", "axis_aligned")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    reinit_delay: int = 5
    burn_in: int = 10
    eao_interval: tuple[int, int] = (10, 50)
    overlap_kind: str = "rotated"

    def __post_init__(self):
        if self.reinit_delay < 1:
            raise EvalError("reinit_delay must be >= 1")
        if self.burn_in < 0:
            raise EvalError("burn_in must be >= 0")
        lo, hi = self.eao_interval
        if not (1 <= lo <= hi):
            raise EvalError(f"bad eao_interval {self.eao_interval}")
        if self.overlap_kind not in OVERLAP_KINDS:
            raise EvalError(f"overlap_kind must be one of {OVERLAP_KINDS}")


@dataclass(frozen=True)
class FrameRecord:
    status: str  # init | ok | fail | skip
    overlap: float | None = None
    box: RotBox | None = None
    excluded: bool = False  # burn-in frame, not counted toward accuracy


@dataclass
class SequenceResult:
    frames: list[FrameRecord] = field(default_factory=list)
    name: str = ""

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def failure_count(self) -> int:
        return sum(1 for f in self.frames if f.status == "fail")

    @property
    def included_overlaps(self) -> list[float]:
        return [f.overlap for f in self.frames if f.status == "ok" and not f.excluded]

    @property
    def accuracy(self) -> float:
        vals = self.included_overlaps
        return sum(vals) / len(vals) if vals else 0.0

    @property
    def failures_per_100(self) -> float:
        return 100.0 * self.failure_count / self.length if self.length else 0.0

    def segments(self) -> list[tuple[list[float], bool]]:
        """Post-init overlap runs: (overlaps, ended_in_failure)."""
        out: list[tuple[list[float], bool]] = []
        current: list[float] | None = None
        for f in self.frames:
            if f.status == "init":
                if current is not None:
                    out.append((current, False))
                current = []
            elif f.status == "ok" and current is not None:
                current.append(f.overlap)
            elif f.status == "fail" and current is not None:
                out.append((current, True))
                current = None
        if current is not None:
            out.append((current, False))
        return out


def overlap_of(pred: RotBox, gt: RotBox, kind: str) -> float:
    if kind == "axis_aligned":
        return iou_axis_aligned(pred.enclosing_aabox(), gt.enclosing_aabox())
    return polygon_overlap(pred, gt)


def run_protocol(sequence, tracker_factory: Callable[[], object], protocol: ProtocolConfig) -> SequenceResult:
    """Run one tracker over one sequence under the reset protocol.

    `sequence` must provide num_frames, gt_rotbox(t), init_inputs(t) and
    frame_inputs(t, prev_box); the tracker must provide init(box, mask) and
    step(proposals, mask_source, flow).
    """
    n = len(sequence)
    if n < 2:
        raise EvalError("sequence must have at least 2 frames")

    result = SequenceResult(name=getattr(sequence, "name", ""))
    tracker = tracker_factory()
    gt_box, init_mask = sequence.init_inputs(0)
    tracker.init(gt_box, init_mask)
    result.frames.append(FrameRecord(status="init"))

    reinit_at: int | None = None
    exclude_until = 0  # burn-in horizon after a re-init
    t = 1
    while t < n:
        if reinit_at is not None:
            if t < reinit_at:
                result.frames.append(FrameRecord(status="skip"))
                t += 1
                continue
            gt_box, init_mask = sequence.init_inputs(t)
            tracker = tracker_factory()
            tracker.init(gt_box, init_mask)
            result.frames.append(FrameRecord(status="init"))
            exclude_until = t + protocol.burn_in
            reinit_at = None
            t += 1
            continue

        proposals, mask_source, flow = sequence.frame_inputs(t, tracker.state.prev_box)
        out_box, _, _ = tracker.step(proposals, mask_source, flow)
        ov = overlap_of(out_box, sequence.gt_rotbox(t), protocol.overlap_kind)
        if ov == 0.0:
            result.frames.append(FrameRecord(status="fail", box=out_box))
            reinit_at = t + protocol.reinit_delay
        else:
            result.frames.append(
                FrameRecord(status="ok", overlap=ov, box=out_box, excluded=t <= exclude_until)
            )
        t += 1
    return result


def run_sequences(
    sequences: Sequence,
    tracker_factory: Callable[[], object],
    protocol: ProtocolConfig,
    jobs: int = 1,
) -> list[SequenceResult]:
    """Run the protocol over many sequences, optionally in a thread pool."""
    if jobs <= 1:
        return [run_protocol(s, tracker_factory, protocol) for s in sequences]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(run_protocol, s, tracker_factory, protocol) for s in sequences]
        return [f.result() for f in futs]


# ---------------------------------------------------------------------------
# Expected average overlap
# ---------------------------------------------------------------------------


def eao(results: Sequence[SequenceResult], cfg: ProtocolConfig) -> float:
    """Expected average overlap over the configured run-length interval.

    Segment-based form: failed segments are zero-padded to any length;
    segments that reach the sequence end without failing only count toward
    lengths they actually cover.  Lengths with no qualifying segment are
    skipped.  (The official challenge toolkit applies additional smoothing
    that is deliberately omitted here.)
    """
    if len(results) == 0:
        raise EvalError("no sequence results")
    lo, hi = cfg.eao_interval
    segments = []
    for res in results:
        segments.extend(res.segments())

    per_length: list[float] = []
    for length in range(lo, hi + 1):
        acc = 0.0
        count = 0
        for overlaps, failed in segments:
            m = len(overlaps)
            if failed:
                prefix = _prefix_sums(overlaps)
                acc += prefix[min(length, m)] / length
                count += 1
            elif m >= length:
                prefix = _prefix_sums(overlaps)
                acc += prefix[length] / length
                count += 1
        if count:
            per_length.append(acc / count)
    if not per_length:
        return 0.0
    total = 0.0
    for v in per_length:
        total += v
    return total / len(per_length)


def _prefix_sums(values: list[float]) -> list[float]:
    out = [0.0]
    acc = 0.0
    for v in values:
        acc += v
        out.append(acc)
    return out


def eao_bruteforce(results: Sequence[SequenceResult], cfg: ProtocolConfig) -> float:
    """Literal re-computation of the expected average overlap.

    Rebuilds, for every run length, every segment's truncated/zero-padded
    overlap list and averages it directly.  Kept as the independent check
    for `eao`.
    """
    if len(results) == 0:
        raise EvalError("no sequence results")
    lo, hi = cfg.eao_interval

    segments: list[tuple[list[float], bool]] = []
    for res in results:
        current: list[float] | None = None
        for f in res.frames:
            if f.status == "init":
                if current is not None:
                    segments.append((current, False))
                current = []
            elif f.status == "ok" and current is not None:
                current.append(f.overlap)
            elif f.status == "fail" and current is not None:
                segments.append((current, True))
                current = None
        if current is not None:
            segments.append((current, False))

    per_length: list[float] = []
    for length in range(lo, hi + 1):
        values: list[float] = []
        for overlaps, failed in segments:
            if failed:
                padded = list(overlaps) + [0.0] * max(0, length - len(overlaps))
                run = padded[:length]
            elif len(overlaps) >= length:
                run = overlaps[:length]
            else:
                continue
            acc = 0.0
            for v in run:
                acc += v
            values.append(acc / length)
        if values:
            acc = 0.0
            for v in values:
                acc += v
            per_length.append(acc / len(values))
    if not per_length:
        return 0.0
    total = 0.0
    for v in per_length:
        total += v
    return total / len(per_length)


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------

DEFAULT_SEARCH_RANGES: dict[str, tuple[float, float]] = {
    "k_c": (0.40, 0.43),
    "k_p": (0.0, 1.0),
    "k_f": (0.0, 1.0),
}


@dataclass(frozen=True)
class Trial:
    index: int
    config: ScoreConfig
    score: float


@dataclass
class SearchResult:
    best: ScoreConfig
    best_score: float
    leaderboard: list[Trial]


def random_search(
    objective: Callable[[ScoreConfig], float],
    ranges: dict[str, tuple[float, float]] | None = None,
    trials: int = 20,
    seed: int = 0,
    base: ScoreConfig | None = None,
) -> SearchResult:
    """Uniform random search over score hyperparameters.

    Deterministic given the seed; the leaderboard is sorted by score
    descending with ties resolved toward the earliest trial.
    """
    if trials < 1:
        raise EvalError("trials must be >= 1")
    ranges = dict(DEFAULT_SEARCH_RANGES if ranges is None else ranges)
    base = base or ScoreConfig()
    for name, (lo, hi) in ranges.items():
        if name not in ("k_c", "k_p", "k_f"):
            raise EvalError(f"unknown search parameter {name!r}")
        if hi < lo:
            raise EvalError(f"empty range for {name}: [{lo}, {hi}]")

    rng = np.random.default_rng(seed)
    results: list[Trial] = []
    for i in range(trials):
        params = {}
        for name in ("k_c", "k_p", "k_f"):
            if name in ranges:
                lo, hi = ranges[name]
                params[name] = float(rng.uniform(lo, hi))
            else:
                params[name] = getattr(base, name)
        cfg = ScoreConfig(
            k_c=params["k_c"],
            k_p=params["k_p"],
            k_f=params["k_f"],
            t_seg=base.t_seg,
            window_scale=base.window_scale,
        )
        results.append(Trial(index=i, config=cfg, score=float(objective(cfg))))

    ordered = sorted(results, key=lambda tr: (-tr.score, tr.index))
    return SearchResult(best=ordered[0].config, best_score=ordered[0].score, leaderboard=ordered)


# ---------------------------------------------------------------------------
# Ablation report
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = (
    "full",
    "no_flow",
    "no_uncertainty",
    "segmask_alb",
    "segmask_mbr",
    "flow_reject",
    "baseline",
)

REPORT_HEADER = "variant,eao,robustness,accuracy,failures,frames"


@dataclass
class AblationRow:
    variant: str
    eao: float
    robustness: float  # mean failures per sequence
    accuracy: float
    failures: int
    frames: int


@dataclass
class AblationReport:
    rows: list[AblationRow]
    eao_interval: tuple[int, int]
    overlap_kind: str

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.variant},{r.eao:.6f},{r.robustness:.6f},{r.accuracy:.6f},{r.failures},{r.frames}"
            )
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        lines = [
            f"{'variant':<16}{'eao':>9}{'robustness':>12}{'accuracy':>10}{'failures':>10}{'frames':>8}",
        ]
        for r in self.rows:
            lines.append(
                f"{r.variant:<16}{r.eao:>9.4f}{r.robustness:>12.3f}{r.accuracy:>10.4f}"
                f"{r.failures:>10d}{r.frames:>8d}"
            )
        lines.append(
            f"(eao interval {self.eao_interval[0]}..{self.eao_interval[1]}, overlap: {self.overlap_kind})"
        )
        return "\n".join(lines)


def summarize(results: Sequence[SequenceResult], cfg: ProtocolConfig) -> tuple[float, float, float, int, int]:
    """(eao, mean failures per sequence, pooled accuracy, failures, frames)."""
    overlaps: list[float] = []
    failures = 0
    frames = 0
    for res in results:
        overlaps.extend(res.included_overlaps)
        failures += res.failure_count
        frames += res.length
    accuracy = sum(overlaps) / len(overlaps) if overlaps else 0.0
    mean_failures = failures / len(results) if results else 0.0
    return eao(results, cfg), mean_failures, accuracy, failures, frames


def ablation_report(
    sequences: Sequence,
    tracker_factory: Callable[[str], object],
    protocol: ProtocolConfig,
    variants: Sequence[str] = ABLATION_VARIANTS,
    jobs: int = 1,
) -> AblationReport:
    """Run every variant over every sequence and tabulate the metrics.

    tracker_factory takes a variant name and returns a fresh tracker.
    """
    rows = []
    for variant in variants:
        results = run_sequences(sequences, lambda v=variant: tracker_factory(v), protocol, jobs=jobs)
        e, mean_failures, accuracy, failures, frames = summarize(results, protocol)
        rows.append(
            AblationRow(
                variant=variant,
                eao=e,
                robustness=mean_failures,
                accuracy=accuracy,
                failures=failures,
                frames=frames,
            )
        )
    return AblationReport(rows=rows, eao_interval=protocol.eao_interval, overlap_kind=protocol.overlap_kind)
