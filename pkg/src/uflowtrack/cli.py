"""Command-line entry point: scene synthesis, tracking, evaluation, sweeps.

Commands
    uft synth --spec scene.json --out DIR        write a dataset directory
    uft track --dataset DIR --out results.txt    run the reset protocol
    uft eval  --dataset DIR [--results F | --ablation]   metrics report
    uft sweep --dataset DIR --trials N           random hyperparameter search

Configuration is flat key=value text (# comments); every key has a default,
so an empty file is valid.  Environment variables override the file with a
UFT_ prefix (e.g. UFT_SEED=7), and command-line flags override both.
Exit codes: 0 ok, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .evaluate import (
    ABLATION_VARIANTS,
    DEFAULT_SEARCH_RANGES,
    EvalError,
    FrameRecord,
    ProtocolConfig,
    SequenceResult,
    ablation_report,
    eao,
    random_search,
    run_protocol,
    summarize,
)
from .flowmask import FlowError, KernelConfig
from .geometry import GeometryError, RotBox
from .grids import GridError
from .scoring import ScoreConfig, ScoringError
from .synth import NoiseModel, ObjectSpec, SceneError, SceneSpec, load_scene, save_scene
from .tracker import TrackError, Tracker, VariantConfig


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


_DATA_ERRORS = (
    DataError,
    SceneError,
    GridError,
    GeometryError,
    FlowError,
    ScoringError,
    TrackError,
    EvalError,
    OSError,
    json.JSONDecodeError,
)

CONFIG_DEFAULTS: dict[str, str] = {
    "k_c": "0.42",
    "k_p": "0.10",
    "k_f": "0.60",
    "t_seg": "0.30",
    "window_scale": "2.0",
    "variant": "full",
    "fixed_scale_b": "1.0",
    "reject_threshold": "0.25",
    "truncation_k": "12.0",
    "renormalize_at_border": "true",
    "reinit_delay": "5",
    "burn_in": "10",
    "eao_low": "10",
    "eao_high": "50",
    "overlap_kind": "rotated",
    "n_proposals": "16",
    "jitter_px": "2.5",
    "seed": "0",
    "jobs": "1",
}

ENV_PREFIX = "UFT_"


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat key=value lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_DEFAULTS:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise DataError(f"config key {key}: expected a boolean, got {value!r}")


class RunConfig:
    """Resolved run configuration (defaults < file < environment < flags)."""

    def __init__(self, values: dict[str, str]):
        self.values = values
        try:
            self.score = ScoreConfig(
                k_c=float(values["k_c"]),
                k_p=float(values["k_p"]),
                k_f=float(values["k_f"]),
                t_seg=float(values["t_seg"]),
                window_scale=float(values["window_scale"]),
            )
            self.variant = VariantConfig(
                mode=values["variant"],
                fixed_scale_b=float(values["fixed_scale_b"]),
                reject_threshold=float(values["reject_threshold"]),
            )
            self.kernel = KernelConfig(
                truncation_k=float(values["truncation_k"]),
                renormalize_at_border=_parse_bool(values["renormalize_at_border"], "renormalize_at_border"),
            )
            self.protocol = ProtocolConfig(
                reinit_delay=int(values["reinit_delay"]),
                burn_in=int(values["burn_in"]),
                eao_interval=(int(values["eao_low"]), int(values["eao_high"])),
                overlap_kind=values["overlap_kind"],
            )
        except ValueError as exc:
            raise DataError(f"bad configuration: {exc}") from exc
        self.n_proposals = int(values["n_proposals"])
        self.jitter_px = float(values["jitter_px"])
        self.seed = int(values["seed"])
        self.jobs = int(values["jobs"])

    def make_tracker(self, variant: str | None = None) -> Tracker:
        vc = self.variant
        if variant is not None:
            vc = VariantConfig(
                mode=variant,
                fixed_scale_b=self.variant.fixed_scale_b,
                reject_threshold=self.variant.reject_threshold,
            )
        return Tracker(self.score, vc, self.kernel)


def resolve_config(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    values = dict(CONFIG_DEFAULTS)
    if config_path:
        with open(config_path) as f:
            values.update(parse_config_text(f.read()))
    for key in CONFIG_DEFAULTS:
        env_val = os.environ.get(ENV_PREFIX + key.upper())
        if env_val is not None:
            values[key] = env_val
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(values)


# ---------------------------------------------------------------------------
# Scene spec files
# ---------------------------------------------------------------------------


def _require(d: dict, key: str, context: str):
    if key not in d:
        raise DataError(f"scene spec: missing key {key!r} in {context}")
    return d[key]


def parse_scene_spec(data: dict, default_seed: int = 0) -> tuple[SceneSpec, NoiseModel]:
    if not isinstance(data, dict):
        raise DataError("scene spec: top level must be an object")
    width = int(_require(data, "width", "top level"))
    height = int(_require(data, "height", "top level"))
    num_frames = int(_require(data, "num_frames", "top level"))
    seed = int(data.get("seed", default_seed))

    objects = []
    raw_objects = _require(data, "objects", "top level")
    if not isinstance(raw_objects, list) or not raw_objects:
        raise DataError("scene spec: key 'objects' must be a non-empty list")
    for i, raw in enumerate(raw_objects):
        ctx = f"objects[{i}]"
        shape = _require(raw, "shape", ctx)
        size = tuple(float(v) for v in _require(raw, "size", ctx))
        if "centers" in raw:
            centers = tuple((float(c[0]), float(c[1])) for c in raw["centers"])
            if len(centers) != num_frames:
                raise DataError(f"scene spec: {ctx} key 'centers' must list {num_frames} entries")
        elif "start" in raw:
            sx, sy = (float(v) for v in raw["start"])
            vx, vy = (float(v) for v in raw.get("velocity", (0.0, 0.0)))
            centers = tuple((sx + vx * t, sy + vy * t) for t in range(num_frames))
        else:
            raise DataError(f"scene spec: {ctx} needs key 'centers' or 'start'")
        sizes = None
        if "sizes" in raw:
            sizes = tuple((float(s[0]), float(s[1])) for s in raw["sizes"])
        objects.append(
            ObjectSpec(
                shape=shape,
                size=(size[0], size[1]),
                centers=centers,
                sizes=sizes,
                is_target=bool(raw.get("is_target", False)),
            )
        )

    camera = None
    if "camera_shift" in data and data["camera_shift"] is not None:
        camera = tuple((float(s[0]), float(s[1])) for s in data["camera_shift"])
        if len(camera) != num_frames:
            raise DataError("scene spec: key 'camera_shift' must list one shift per frame")

    noise = NoiseModel()
    if "noise" in data and data["noise"] is not None:
        known = set(NoiseModel().to_dict())
        for key in data["noise"]:
            if key not in known:
                raise DataError(f"scene spec: unknown noise key {key!r}")
        noise = NoiseModel(**{k: float(v) for k, v in data["noise"].items()})

    try:
        spec = SceneSpec(
            width=width,
            height=height,
            num_frames=num_frames,
            objects=tuple(objects),
            camera_shift=camera,
            seed=seed,
        )
    except SceneError as exc:
        raise DataError(f"scene spec: {exc}") from exc
    return spec, noise


# ---------------------------------------------------------------------------
# Results files
# ---------------------------------------------------------------------------

_STATUS_TO_VOT = {"init": "1", "fail": "2", "skip": "0"}
_VOT_TO_STATUS = {v: k for k, v in _STATUS_TO_VOT.items()}


def format_result_line(index: int, rec: FrameRecord, vot_compat: bool) -> str:
    if rec.status == "ok":
        coords = ",".join(f"{v:.6f}" for v in rec.box.flat())
        if vot_compat:
            return f"{index},{coords}"
        return f"{index},ok,{coords}"
    if vot_compat:
        return f"{index},{_STATUS_TO_VOT[rec.status]}"
    return f"{index},{rec.status}"


def parse_results_text(text: str) -> list[FrameRecord]:
    """Parse a results file; also accepts bare 8-coordinate lines."""
    records: list[FrameRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) == 8:
                records.append(FrameRecord(status="ok", box=RotBox.from_flat([float(v) for v in parts])))
            elif len(parts) == 9:
                records.append(
                    FrameRecord(status="ok", box=RotBox.from_flat([float(v) for v in parts[1:]]))
                )
            elif len(parts) == 10 and parts[1] == "ok":
                records.append(
                    FrameRecord(status="ok", box=RotBox.from_flat([float(v) for v in parts[2:]]))
                )
            elif len(parts) == 2:
                token = parts[1]
                status = token if token in ("init", "fail", "skip") else _VOT_TO_STATUS.get(token)
                if status is None:
                    raise DataError(f"results line {lineno}: unknown status {token!r}")
                records.append(FrameRecord(status=status))
            else:
                raise DataError(f"results line {lineno}: unrecognized format")
        except (ValueError, GeometryError) as exc:
            raise DataError(f"results line {lineno}: {exc}") from exc
    return records


def _result_from_records(records, sequence, protocol: ProtocolConfig) -> SequenceResult:
    """Reconstruct per-frame overlaps and burn-in exclusions from records."""
    from .evaluate import overlap_of

    if len(records) != len(sequence):
        raise DataError(
            f"results length {len(records)} does not match dataset length {len(sequence)}"
        )
    out = SequenceResult(name=getattr(sequence, "name", ""))
    exclude_until = -1
    seen_init = False
    for t, rec in enumerate(records):
        if rec.status == "init":
            if seen_init:
                exclude_until = t + protocol.burn_in
            seen_init = True
            out.frames.append(FrameRecord(status="init"))
        elif rec.status == "ok":
            ov = overlap_of(rec.box, sequence.gt_rotbox(t), protocol.overlap_kind)
            out.frames.append(
                FrameRecord(status="ok", overlap=ov, box=rec.box, excluded=t <= exclude_until)
            )
        else:
            out.frames.append(FrameRecord(status=rec.status))
    return out


# ---------------------------------------------------------------------------
# Dataset discovery
# ---------------------------------------------------------------------------


def discover_sequences(dataset_dir: str, cfg: RunConfig):
    """A dataset directory is one scene (meta.json) or a folder of scenes."""
    if os.path.exists(os.path.join(dataset_dir, "meta.json")):
        return [load_scene(dataset_dir, cfg.n_proposals, cfg.jitter_px)]
    subdirs = sorted(
        d for d in os.listdir(dataset_dir)
        if os.path.exists(os.path.join(dataset_dir, d, "meta.json"))
    )
    if not subdirs:
        raise DataError(f"no datasets found under {dataset_dir}")
    return [load_scene(os.path.join(dataset_dir, d), cfg.n_proposals, cfg.jitter_px) for d in subdirs]


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    with open(args.spec) as f:
        data = json.load(f)
    spec, noise = parse_scene_spec(data, default_seed=cfg.seed)
    save_scene(args.out, spec, noise)
    n = spec.num_frames
    print(f"wrote {n} frames to {args.out} (seed {spec.seed})")
    return 0


def cmd_track(args, cfg: RunConfig) -> int:
    sequences = discover_sequences(args.dataset, cfg)
    if len(sequences) != 1:
        raise DataError("track expects a single-sequence dataset directory")
    seq = sequences[0]
    result = run_protocol(seq, lambda: cfg.make_tracker(), cfg.protocol)
    lines = [format_result_line(i, rec, args.vot_compat) for i, rec in enumerate(result.frames)]
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(
        f"tracked {result.length} frames: {result.failure_count} failures, "
        f"accuracy {result.accuracy:.4f} -> {args.out}"
    )
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    sequences = discover_sequences(args.dataset, cfg)

    if args.ablation:
        report = ablation_report(
            sequences,
            lambda variant: cfg.make_tracker(variant),
            cfg.protocol,
            variants=ABLATION_VARIANTS,
            jobs=cfg.jobs,
        )
        print(report.format_table())
        if args.out:
            _atomic_write(args.out, report.to_csv())
            print(f"report -> {args.out}")
        return 0

    if args.results:
        if len(sequences) != 1:
            raise DataError("--results evaluation expects a single-sequence dataset")
        with open(args.results) as f:
            records = parse_results_text(f.read())
        if not records:
            raise DataError(f"results file {args.results} is empty")
        results = [_result_from_records(records, sequences[0], cfg.protocol)]
    else:
        from .evaluate import run_sequences

        results = run_sequences(sequences, lambda: cfg.make_tracker(), cfg.protocol, jobs=cfg.jobs)

    e, mean_failures, accuracy, failures, frames = summarize(results, cfg.protocol)
    print(f"sequences:  {len(results)}")
    print(f"frames:     {frames}")
    print(f"accuracy:   {accuracy:.6f}")
    print(f"robustness: {mean_failures:.6f} failures/seq")
    print(f"failures:   {failures}")
    print(f"eao:        {e:.6f}  (interval {cfg.protocol.eao_interval}, overlap: {cfg.protocol.overlap_kind})")
    if args.out:
        csv = (
            "accuracy,robustness,failures,eao,frames\n"
            f"{accuracy:.6f},{mean_failures:.6f},{failures},{e:.6f},{frames}\n"
        )
        _atomic_write(args.out, csv)
        print(f"metrics -> {args.out}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    sequences = discover_sequences(args.dataset, cfg)
    ranges = dict(DEFAULT_SEARCH_RANGES)
    for name in ("k_c", "k_p", "k_f"):
        override = getattr(args, f"range_{name}")
        if override:
            lo, hi = (float(v) for v in override.split(":"))
            ranges[name] = (lo, hi)
    print(
        "search ranges: "
        + ", ".join(f"{k} in [{lo:g}, {hi:g}]" for k, (lo, hi) in ranges.items())
    )

    from .evaluate import run_sequences

    def objective(score_cfg: ScoreConfig) -> float:
        tracker = lambda: Tracker(score_cfg, cfg.variant, cfg.kernel)  # noqa: E731
        results = run_sequences(sequences, tracker, cfg.protocol, jobs=cfg.jobs)
        return eao(results, cfg.protocol)

    search = random_search(objective, ranges, trials=args.trials, seed=cfg.seed)
    best = search.best
    print(f"best: k_c={best.k_c:.4f} k_p={best.k_p:.4f} k_f={best.k_f:.4f} eao={search.best_score:.6f}")
    if args.out:
        lines = ["trial,k_c,k_p,k_f,eao"]
        for tr in search.leaderboard:
            c = tr.config
            lines.append(f"{tr.index},{c.k_c:.6f},{c.k_p:.6f},{c.k_f:.6f},{tr.score:.6f}")
        _atomic_write(args.out, "\n".join(lines) + "\n")
        print(f"leaderboard -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uft", description="uncertainty-flow tracking harness")
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--variant", choices=ABLATION_VARIANTS, default=None)
        p.add_argument("--jobs", type=int, default=None)

    p_synth = sub.add_parser("synth", help="render a scene spec into a dataset directory")
    add_common(p_synth)
    p_synth.add_argument("--spec", required=True, help="scene spec JSON file")
    p_synth.add_argument("--out", required=True, help="output dataset directory")

    p_track = sub.add_parser("track", help="run the tracker over a dataset")
    add_common(p_track)
    p_track.add_argument("--dataset", required=True)
    p_track.add_argument("--out", required=True, help="results file")
    p_track.add_argument("--vot-compat", action="store_true", help="numeric status tokens")

    p_eval = sub.add_parser("eval", help="compute metrics for a dataset")
    add_common(p_eval)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--results", help="previously written results file")
    p_eval.add_argument("--ablation", action="store_true", help="run every variant")
    p_eval.add_argument("--out", help="write machine-readable metrics here")

    p_sweep = sub.add_parser("sweep", help="random hyperparameter search")
    add_common(p_sweep)
    p_sweep.add_argument("--dataset", required=True)
    p_sweep.add_argument("--trials", type=int, default=20)
    p_sweep.add_argument("--out", help="leaderboard CSV")
    p_sweep.add_argument("--range-k_c", dest="range_k_c", help="lo:hi override")
    p_sweep.add_argument("--range-k_p", dest="range_k_p", help="lo:hi override")
    p_sweep.add_argument("--range-k_f", dest="range_k_f", help="lo:hi override")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "track": cmd_track,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (synth, track, eval, sweep)")
        overrides = {
            "seed": None if args.seed is None else str(args.seed),
            "variant": args.variant,
            "jobs": None if args.jobs is None else str(args.jobs),
        }
        cfg = resolve_config(args.config, overrides)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
