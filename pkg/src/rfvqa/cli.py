"""Command-line pipeline driver.

Subcommands: classes, gen, build, infer, score, sweep. A single YAML
config file drives everything; CLI flags (--seed, --output-dir) override
config keys, which override the built-in defaults. Each command echoes
the resolved config into the output directory and writes a run summary.

Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
4 transport failure.
"""

import argparse
import copy
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__, evaluation, modem, vqa
from .modem import SynthesisParams
from .render import RenderConfig
from .seeding import derive_seed
from .transform import SegmentationConfig, StftConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_TRANSPORT = 4


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact does not exist yet."""


DEFAULT_CONFIG = {
    "output_dir": "rfvqa-run",
    "master_seed": 0,
    "synthesis": {
        "num_samples": 512 + 511 * 256,
        "sample_rate": 1.0,
        "samples_per_symbol": 8,
        "carrier_offset": 0.0,
        "excess_bandwidth": 0.35,
    },
    "segmentation": {
        "eps": 0.0,
        "p_min": 20,
        "p_max": 25,
    },
    "stft": {
        "fft_size": 512,
        "hop": 256,
    },
    "render": {
        "iq_width": 512,
        "iq_height": None,  # None = match the STFT fft_size
    },
    "dataset": {
        "modes": ["joint"],
        "n_way": 10,
        "shots": 0,
        "records_per_mode": 1000,
        "train_records_per_mode": 0,
        "assets_per_class": 2,
        "snr_grid": "noiseless",
        "oov_excluded": [],
    },
    "inference": {
        "endpoint": "",
        "model": "",
        "token_env": "RFVQA_API_TOKEN",
        "concurrency": 4,
        "timeout_s": 120.0,
        "max_attempts": 3,
        "backoff_base_s": 1.0,
        "temperature": 0.0,
        "max_tokens": None,
    },
}

# sections whose values determine the generated artifacts (the pipeline
# hash deliberately excludes the inference endpoint settings)
_PIPELINE_SECTIONS = ("master_seed", "synthesis", "segmentation", "stft",
                      "render", "dataset")


def _merge_section(defaults, overrides, path):
    if not isinstance(overrides, dict):
        raise ConfigError(f"config section {path or '<root>'} must be a mapping")
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path + key}")
        if isinstance(defaults[key], dict):
            merged[key] = _merge_section(defaults[key], value, path + key + ".")
        else:
            merged[key] = value
    return merged


def load_config(path=None, seed=None, output_dir=None) -> dict:
    """Resolve defaults <- config file <- CLI overrides; reject unknown keys."""
    overrides = {}
    if path is not None:
        if not Path(path).is_file():
            raise MissingArtifactError(f"config file not found: {path}")
        with open(path) as fh:
            overrides = yaml.safe_load(fh) or {}
    cfg = _merge_section(DEFAULT_CONFIG, overrides, "")
    if seed is not None:
        cfg["master_seed"] = seed
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    return cfg


def config_hash(cfg: dict) -> str:
    payload = {k: cfg[k] for k in _PIPELINE_SECTIONS}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _snr_grid(cfg) -> tuple:
    grid = cfg["dataset"]["snr_grid"]
    if grid in ("noiseless", None):
        return None
    if isinstance(grid, (int, float)):
        return (float(grid),)
    if isinstance(grid, (list, tuple)) and grid:
        return tuple(float(v) for v in grid)
    raise ConfigError("dataset.snr_grid must be 'noiseless' or a list of dB values")


def _oov_excluded(cfg) -> frozenset:
    raw = cfg["dataset"]["oov_excluded"]
    if isinstance(raw, int):
        if not 0 <= raw <= 56:
            raise ConfigError("dataset.oov_excluded count must lie in [0, 56]")
        rng_seed = derive_seed(cfg["master_seed"], "oov-selection")
        import numpy as np
        names = np.random.default_rng(rng_seed).permutation(modem.class_names())
        return frozenset(names[:raw].tolist())
    if isinstance(raw, (list, tuple)):
        return frozenset(str(c) for c in raw)
    raise ConfigError("dataset.oov_excluded must be a class list or an integer count")


def _build_objects(cfg):
    try:
        synthesis = SynthesisParams(
            num_samples=int(cfg["synthesis"]["num_samples"]),
            sample_rate=float(cfg["synthesis"]["sample_rate"]),
            samples_per_symbol=int(cfg["synthesis"]["samples_per_symbol"]),
            carrier_offset=float(cfg["synthesis"]["carrier_offset"]),
            excess_bandwidth=float(cfg["synthesis"]["excess_bandwidth"]),
            seed=0,
        )
        segmentation = SegmentationConfig(
            hysteresis_eps=float(cfg["segmentation"]["eps"]),
            p_min=int(cfg["segmentation"]["p_min"]),
            p_max=int(cfg["segmentation"]["p_max"]),
        )
        stft_config = StftConfig(
            fft_size=int(cfg["stft"]["fft_size"]),
            hop=int(cfg["stft"]["hop"]),
        )
        iq_height = cfg["render"]["iq_height"]
        render_config = RenderConfig(
            iq_width=int(cfg["render"]["iq_width"]),
            iq_height=int(iq_height) if iq_height else stft_config.fft_size,
        )
        dataset_spec = vqa.DatasetSpec(
            modes=tuple(cfg["dataset"]["modes"]),
            n_way=int(cfg["dataset"]["n_way"]),
            shots=int(cfg["dataset"]["shots"]),
            records_per_mode=int(cfg["dataset"]["records_per_mode"]),
            snr_grid=_snr_grid(cfg),
            assets_per_class=int(cfg["dataset"]["assets_per_class"]),
            oov_excluded=_oov_excluded(cfg),
            master_seed=int(cfg["master_seed"]),
        )
    except (ValueError, vqa.DatasetError) as exc:
        raise ConfigError(str(exc)) from exc
    if synthesis.num_samples < stft_config.fft_size + (stft_config.fft_size - 1) * stft_config.hop:
        # fewer frames than fft_size: legal, but warn-worthy? keep permissive
        pass
    return synthesis, segmentation, stft_config, render_config, dataset_spec


def _write_summary(out_dir: Path, command: str, counts: dict,
                   wall_time_s: float, cfg_hash: str) -> None:
    summary = {
        "command": command,
        "counts": counts,
        "wall_time_s": round(wall_time_s, 3),
        "config_hash": cfg_hash,
        "version": __version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"summary_{command}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config_resolved.yaml", "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def cmd_classes(args) -> int:
    for cls in modem.list_classes():
        order = "" if cls.order is None else cls.order
        print(f"{cls.canonical_name},{cls.family},{order}")
    return EXIT_OK


def _verify_manifest(out_dir: Path, manifest: vqa.SplitManifest) -> bool:
    for rec in manifest.records:
        path = out_dir / rec.path
        if not path.is_file():
            return False
        if vqa._sha256_file(path) != rec.sha256:
            return False
    return True


def cmd_gen(cfg: dict, args) -> int:
    started = time.monotonic()
    out_dir = Path(cfg["output_dir"])
    synthesis, segmentation, stft_config, render_config, dataset_spec = _build_objects(cfg)
    cfg_hash = config_hash(cfg)
    _echo_config(cfg, out_dir)

    manifest_path = out_dir / "manifest.csv"
    state_path = out_dir / "gen_state.json"
    if manifest_path.is_file() and state_path.is_file():
        state = json.loads(state_path.read_text())
        if state.get("config_hash") == cfg_hash:
            manifest = vqa.SplitManifest.read_csv(manifest_path)
            if _verify_manifest(out_dir, manifest):
                print(f"gen: up to date ({len(manifest.records)} assets verified)")
                _write_summary(out_dir, "gen",
                               {"assets": len(manifest.records), "regenerated": 0},
                               time.monotonic() - started, cfg_hash)
                return EXIT_OK

    manifest = vqa.generate_assets(dataset_spec, out_dir, synthesis, segmentation,
                                   stft_config, render_config)
    manifest.write_csv(manifest_path)
    state_path.write_text(json.dumps({"config_hash": cfg_hash}, indent=2))
    print(f"gen: wrote {len(manifest.records)} assets under {out_dir}")
    _write_summary(out_dir, "gen",
                   {"assets": len(manifest.records), "regenerated": len(manifest.records)},
                   time.monotonic() - started, cfg_hash)
    return EXIT_OK


def cmd_build(cfg: dict, args) -> int:
    started = time.monotonic()
    out_dir = Path(cfg["output_dir"])
    synthesis, segmentation, stft_config, render_config, dataset_spec = _build_objects(cfg)
    cfg_hash = config_hash(cfg)
    manifest_path = out_dir / "manifest.csv"
    if not manifest_path.is_file():
        raise MissingArtifactError(f"missing manifest (run `rfvqa gen` first): {manifest_path}")
    manifest = vqa.SplitManifest.read_csv(manifest_path)

    records = vqa.build_episodes(manifest, dataset_spec, split="eval")
    vqa.write_jsonl(records, out_dir / "episodes.jsonl")
    counts = {"eval_episodes": len(records), "train_episodes": 0}

    train_count = int(cfg["dataset"]["train_records_per_mode"])
    if train_count > 0:
        train_records = vqa.build_episodes(manifest, dataset_spec, split="train",
                                           records_per_mode=train_count)
        vqa.write_jsonl(train_records, out_dir / "episodes_train.jsonl")
        counts["train_episodes"] = len(train_records)

    meta = {
        "config_hash": cfg_hash,
        "n_way": dataset_spec.n_way,
        "shots": dataset_spec.shots,
        "modes": list(dataset_spec.modes),
        "snr_grid": list(dataset_spec.snr_grid) if dataset_spec.snr_grid else "noiseless",
        "oov_excluded": sorted(dataset_spec.oov_excluded),
        "oov_count": len(dataset_spec.oov_excluded),
    }
    with open(out_dir / "dataset_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"build: wrote {counts['eval_episodes']} eval episodes"
          + (f" and {counts['train_episodes']} train episodes" if train_count else ""))
    _write_summary(out_dir, "build", counts, time.monotonic() - started, cfg_hash)
    return EXIT_OK


def cmd_infer(cfg: dict, args) -> int:
    started = time.monotonic()
    out_dir = Path(cfg["output_dir"])
    episodes_path = out_dir / "episodes.jsonl"
    if not episodes_path.is_file():
        raise MissingArtifactError(f"missing episodes (run `rfvqa build` first): {episodes_path}")
    inf = cfg["inference"]
    if not inf["endpoint"] or not inf["model"]:
        raise ConfigError("inference.endpoint and inference.model must be set")
    inference_config = evaluation.InferenceConfig(
        endpoint=inf["endpoint"], model=inf["model"], token_env=inf["token_env"],
        concurrency=int(inf["concurrency"]), timeout_s=float(inf["timeout_s"]),
        max_attempts=int(inf["max_attempts"]),
        backoff_base_s=float(inf["backoff_base_s"]),
        temperature=float(inf["temperature"]),
        max_tokens=inf["max_tokens"] if inf["max_tokens"] is None else int(inf["max_tokens"]),
    )
    records = vqa.read_jsonl(episodes_path)
    counts = evaluation.run_inference(records, out_dir, out_dir / "responses.jsonl",
                                      inference_config, resume=not args.fresh)
    print(f"infer: {counts}")
    _write_summary(out_dir, "infer", counts, time.monotonic() - started, config_hash(cfg))
    return EXIT_OK


def cmd_score(cfg: dict, args) -> int:
    started = time.monotonic()
    out_dir = Path(cfg["output_dir"])
    episodes_path = out_dir / "episodes.jsonl"
    responses_path = Path(args.responses) if args.responses else out_dir / "responses.jsonl"
    for path, hint in ((episodes_path, "build"), (responses_path, "infer")):
        if not path.is_file():
            raise MissingArtifactError(f"missing artifact (run `rfvqa {hint}` first): {path}")
    records = vqa.read_jsonl(episodes_path)
    responses = []
    with open(responses_path) as fh:
        for line in fh:
            if line.strip():
                responses.append(json.loads(line))
    meta = {"config_hash": config_hash(cfg)}
    meta_path = out_dir / "dataset_meta.json"
    if meta_path.is_file():
        meta.update(json.loads(meta_path.read_text()))
    report = evaluation.score(records, responses, meta=meta)
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    report.save(reports_dir / "report.json")
    (reports_dir / "report.txt").write_text(evaluation.report_text(report))
    (reports_dir / "report.csv").write_text(evaluation.report_csv(report))
    print(evaluation.report_text(report))
    _write_summary(out_dir, "score",
                   {"records": report.overall[1], "correct": report.overall[0],
                    "invalid": report.invalid_count, "failed": report.failed_count},
                   time.monotonic() - started, config_hash(cfg))
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    started = time.monotonic()
    out_dir = Path(cfg["output_dir"])
    report_paths = [Path(p) for p in (args.reports or [out_dir / "reports" / "report.json"])]
    for path in report_paths:
        if not path.is_file():
            raise MissingArtifactError(f"missing report (run `rfvqa score` first): {path}")
    reports = [evaluation.EvalReport.load(p) for p in report_paths]

    if args.facet == "oov":
        keyed = [(r.meta.get("oov_count", 0), r) for r in reports]
        table = evaluation.sweep_report(keyed, "oov_count")
    else:
        rows = []
        for report in reports:
            rows.extend(evaluation.expand_report_facet(report, args.facet))
        rows.sort(key=lambda r: (r[1], str(r[0])))
        table = evaluation.SweepTable(facet=args.facet, rows=rows)

    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / f"sweep_{args.facet}.csv").write_text(table.to_csv())
    (reports_dir / f"sweep_{args.facet}.txt").write_text(table.to_text())
    print(table.to_text())
    _write_summary(out_dir, "sweep", {"rows": len(table.rows)},
                   time.monotonic() - started, config_hash(cfg))
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfvqa",
        description="RF modulation VQA benchmark pipeline")
    parser.add_argument("--version", action="version", version=f"rfvqa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("classes", help="list the 57-class taxonomy (name,family,order)")

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--output-dir", help="override output_dir")

    common(sub.add_parser("gen", help="generate image assets and the manifest"))
    common(sub.add_parser("build", help="build VQA episodes from the manifest"))
    p_infer = sub.add_parser("infer", help="run endpoint inference over episodes")
    common(p_infer)
    p_infer.add_argument("--fresh", action="store_true",
                         help="ignore existing responses instead of resuming")
    p_score = sub.add_parser("score", help="score responses and write reports")
    common(p_score)
    p_score.add_argument("--responses", help="responses JSONL (default: <output_dir>/responses.jsonl)")
    p_sweep = sub.add_parser("sweep", help="emit a facet sweep table from reports")
    common(p_sweep)
    p_sweep.add_argument("--facet", choices=("snr", "n_way", "oov"), required=True)
    p_sweep.add_argument("--reports", nargs="*", help="report JSON files (default: current run's)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "classes":
            return cmd_classes(args)
        cfg = load_config(args.config, args.seed, args.output_dir)
        handler = {"gen": cmd_gen, "build": cmd_build, "infer": cmd_infer,
                   "score": cmd_score, "sweep": cmd_sweep}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"error: category=config {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: category=missing-artifact {exc}", file=sys.stderr)
        return EXIT_MISSING
    except evaluation.AuthError as exc:
        print(f"error: category=transport {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except vqa.DatasetError as exc:
        print(f"error: category=config {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
