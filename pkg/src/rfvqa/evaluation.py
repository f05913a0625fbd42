"""Inference harness, response parsing, scoring, sweeps, and the
nearest-centroid discriminability baseline.

The inference driver speaks the multimodal chat-completions wire protocol
(JSON body with text parts and inline base64 image parts, bearer-token
auth), runs a bounded-concurrency request pool with retry/backoff, and
appends one response line per record so interrupted runs can resume.
"""

import base64
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from . import modem, transform, vqa
from .modem import SynthesisParams
from .seeding import derive_seed
from .transform import StftConfig

__all__ = [
    "InferenceConfig",
    "AuthError",
    "ScoringError",
    "run_inference",
    "build_request_payload",
    "parse_prediction",
    "EvalReport",
    "score",
    "report_text",
    "report_csv",
    "SweepTable",
    "sweep_report",
    "expand_report_facet",
    "BaselineResult",
    "nearest_centroid_baseline",
]


class AuthError(RuntimeError):
    """Endpoint rejected the credentials; the whole run aborts."""


class ScoringError(ValueError):
    """Responses do not line up one-to-one with the dataset records."""


@dataclass(frozen=True)
class InferenceConfig:
    """Endpoint, auth, concurrency, and retry policy for one inference run."""

    endpoint: str
    model: str
    token_env: str = "RFVQA_API_TOKEN"
    concurrency: int = 4
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_base_s: float = 1.0
    temperature: float = 0.0
    max_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def _encode_image(path: Path) -> str:
    data = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:image/png;base64,{data}"


def build_request_payload(record: "vqa.VqaRecord", images_root,
                          cfg: InferenceConfig) -> dict:
    """Chat-completions body for one record, with images inlined as base64."""
    root = Path(images_root)
    messages = []
    for msg in record.messages:
        parts = []
        for part in msg["content"]:
            if part["type"] == "text":
                parts.append({"type": "text", "text": part["text"]})
            elif part["type"] == "image":
                image_path = root / part["path"]
                if not image_path.is_file():
                    raise FileNotFoundError(f"missing image asset: {image_path}")
                parts.append({"type": "image_url",
                              "image_url": {"url": _encode_image(image_path)}})
            else:
                raise ValueError(f"unknown content part type: {part['type']!r}")
        messages.append({"role": msg["role"], "content": parts})
    payload = {"model": cfg.model, "messages": messages, "temperature": cfg.temperature}
    if cfg.max_tokens is not None:
        payload["max_tokens"] = cfg.max_tokens
    return payload


def _load_answered_ids(out_path: Path) -> set:
    answered = set()
    if out_path.is_file():
        with open(out_path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    answered.add(json.loads(line)["id"])
                except (json.JSONDecodeError, KeyError):
                    continue  # partial line from an interrupted run
    return answered


def _one_request(record, images_root, cfg, session, headers, abort_event) -> dict:
    start = time.monotonic()
    last_error = "unknown"
    payload = build_request_payload(record, images_root, cfg)
    for attempt in range(1, cfg.max_attempts + 1):
        if abort_event.is_set():
            last_error = "aborted"
            break
        try:
            resp = session.post(cfg.endpoint, json=payload, headers=headers,
                                timeout=cfg.timeout_s)
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint returned HTTP {resp.status_code}")
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise ValueError("response content is not a string")
            return {"id": record.id, "status": "ok", "text": text,
                    "latency_s": round(time.monotonic() - start, 4),
                    "attempts": attempt}
        except AuthError:
            raise
        except (requests.RequestException, ValueError, KeyError, IndexError) as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            if attempt < cfg.max_attempts:
                time.sleep(cfg.backoff_base_s * (2 ** (attempt - 1)))
    return {"id": record.id, "status": "failed", "text": "",
            "latency_s": round(time.monotonic() - start, 4),
            "attempts": cfg.max_attempts, "error": last_error}


def run_inference(records: Sequence["vqa.VqaRecord"], images_root, out_path,
                  cfg: InferenceConfig, resume: bool = True) -> Dict[str, int]:
    """Answer every record once, appending JSONL responses as they finish.

    With ``resume=True``, ids already present in the output file are
    skipped. Transport failures are retried with exponential backoff and
    then recorded as status "failed"; auth failures abort the run.
    Returns counts: {"requested", "ok", "failed", "skipped"}.
    """
    out_path = Path(out_path)
    answered = _load_answered_ids(out_path) if resume else set()
    todo = [r for r in records if r.id not in answered]
    counts = {"requested": len(todo), "ok": 0, "failed": 0,
              "skipped": len(records) - len(todo)}
    if not todo:
        return counts

    token = os.environ.get(cfg.token_env, "")
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    write_lock = threading.Lock()
    abort_event = threading.Event()
    session = requests.Session()

    out_path.parent.mkdir(parents=True, exist_ok=True)
    auth_errors: List[AuthError] = []
    with open(out_path, "a" if resume else "w") as fh:
        def worker(record):
            if abort_event.is_set():
                return "aborted"
            try:
                result = _one_request(record, images_root, cfg, session, headers,
                                      abort_event)
            except AuthError as exc:
                abort_event.set()
                auth_errors.append(exc)
                return "aborted"
            with write_lock:
                fh.write(json.dumps(result) + "\n")
                fh.flush()
            return result["status"]

        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            for status in pool.map(worker, todo):
                counts[status] = counts.get(status, 0) + 1
    if auth_errors:
        raise auth_errors[0]
    return counts


_STRIP_CHARS = " \t\r\n\"'`“”‘’.,:;!?()[]{}"


def parse_prediction(raw_text: str, candidates: Sequence[str],
                     rationale_mode: bool = False) -> Optional[str]:
    """Map a model reply to a candidate class name, or None when invalid.

    Classification mode: lowercase, trim, strip surrounding quotes and
    punctuation, then exact match. Rationale mode: the candidate whose
    name occurs last in the text wins (longer names break position ties).
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    lowered = {c.lower(): c for c in candidates}
    if rationale_mode:
        text = raw_text.lower()
        best, best_key = None, (-1, -1)
        for lc, original in lowered.items():
            pos = text.rfind(lc)
            if pos >= 0 and (pos, len(lc)) > best_key:
                best, best_key = original, (pos, len(lc))
        return best
    cleaned = raw_text.strip().lower().strip(_STRIP_CHARS)
    return lowered.get(cleaned)


def _acc(pair: Tuple[int, int]) -> float:
    correct, total = pair
    return correct / total if total else 0.0


@dataclass
class EvalReport:
    """Per-record verdicts aggregated over the metric facets.

    Counts are (correct, total) pairs so tests can check the arithmetic
    exactly; accuracies are derived. Invalid (unparseable) and failed
    (transport) responses both score as incorrect but are reported apart.
    """

    overall: Tuple[int, int] = (0, 0)
    per_class: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    per_family: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    per_snr: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    per_n_way: Dict[int, Tuple[int, int]] = field(default_factory=dict)
    per_mode: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    invalid_count: int = 0
    failed_count: int = 0
    confusion: Dict[Tuple[str, str], int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def overall_accuracy(self) -> float:
        return _acc(self.overall)

    @property
    def invalid_rate(self) -> float:
        return self.invalid_count / self.overall[1] if self.overall[1] else 0.0

    @property
    def failed_rate(self) -> float:
        return self.failed_count / self.overall[1] if self.overall[1] else 0.0

    @property
    def modes(self) -> List[str]:
        return sorted(self.per_mode)

    def to_dict(self) -> dict:
        return {
            "overall": list(self.overall),
            "per_class": {k: list(v) for k, v in self.per_class.items()},
            "per_family": {k: list(v) for k, v in self.per_family.items()},
            "per_snr": {k: list(v) for k, v in self.per_snr.items()},
            "per_n_way": {str(k): list(v) for k, v in self.per_n_way.items()},
            "per_mode": {k: list(v) for k, v in self.per_mode.items()},
            "invalid_count": self.invalid_count,
            "failed_count": self.failed_count,
            "confusion": {f"{g}|{p}": n for (g, p), n in self.confusion.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        def pairs(d):
            return {k: tuple(v) for k, v in d.items()}
        return cls(
            overall=tuple(data["overall"]),
            per_class=pairs(data["per_class"]),
            per_family=pairs(data["per_family"]),
            per_snr=pairs(data["per_snr"]),
            per_n_way={int(k): tuple(v) for k, v in data["per_n_way"].items()},
            per_mode=pairs(data["per_mode"]),
            invalid_count=data["invalid_count"],
            failed_count=data["failed_count"],
            confusion={tuple(k.split("|", 1)): n for k, n in data["confusion"].items()},
            meta=data.get("meta", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _bump(table: dict, key, correct: bool) -> None:
    c, t = table.get(key, (0, 0))
    table[key] = (c + int(correct), t + 1)


def score(records: Sequence["vqa.VqaRecord"], responses: Sequence[dict],
          meta: Optional[dict] = None) -> EvalReport:
    """Score responses against the dataset and aggregate all metric facets.

    Every dataset record must have exactly one response; duplicates and
    unknown ids raise. The result is independent of response order.
    """
    by_id: Dict[str, dict] = {}
    known = {r.id for r in records}
    for resp in responses:
        rid = resp.get("id")
        if rid not in known:
            raise ScoringError(f"response for unknown record id: {rid!r}")
        if rid in by_id:
            raise ScoringError(f"duplicate response id: {rid!r}")
        by_id[rid] = resp
    missing = [r.id for r in records if r.id not in by_id]
    if missing:
        raise ScoringError(
            f"{len(missing)} records have no response (first: {missing[0]!r})")

    family_of = {c.canonical_name: c.family for c in modem.list_classes()}
    report = EvalReport(meta=dict(meta or {}))
    overall = [0, 0]
    for record in records:
        resp = by_id[record.id]
        failed = resp.get("status") != "ok"
        if failed:
            prediction = None
            report.failed_count += 1
        else:
            prediction = parse_prediction(resp.get("text", ""), record.candidates,
                                          record.rationale_mode)
            if prediction is None:
                report.invalid_count += 1
        correct = prediction == record.gold
        overall[0] += int(correct)
        overall[1] += 1
        gold_family = family_of[record.gold]
        pred_family = family_of[prediction] if prediction else "invalid"
        _bump(report.per_class, record.gold, correct)
        _bump(report.per_family, gold_family, correct)
        _bump(report.per_snr, "noiseless" if record.snr_db is None else f"{record.snr_db:g}",
              correct)
        _bump(report.per_n_way, record.n_way, correct)
        _bump(report.per_mode, record.mode, correct)
        key = (gold_family, pred_family)
        report.confusion[key] = report.confusion.get(key, 0) + 1
    report.overall = tuple(overall)
    return report


def _format_table(rows: List[Sequence], headers: Sequence[str]) -> str:
    str_rows = [[str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in str_rows)) if str_rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in str_rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def report_text(report: EvalReport) -> str:
    """Aligned-text rendering of the headline numbers and per-family table."""
    lines = [
        f"records:        {report.overall[1]}",
        f"overall:        {100.0 * report.overall_accuracy:.2f}% "
        f"({report.overall[0]}/{report.overall[1]})",
        f"invalid rate:   {100.0 * report.invalid_rate:.2f}%",
        f"failed rate:    {100.0 * report.failed_rate:.2f}%",
        "",
    ]
    fam_rows = [(fam, f"{100.0 * _acc(pair):.2f}", pair[0], pair[1])
                for fam, pair in sorted(report.per_family.items())]
    lines.append(_format_table(fam_rows, ["family", "accuracy_%", "correct", "total"]))
    if len(report.per_snr) > 1:
        lines.append("")
        snr_rows = [(snr, f"{100.0 * _acc(pair):.2f}", pair[0], pair[1])
                    for snr, pair in sorted(report.per_snr.items(),
                                            key=lambda kv: _snr_sort_key(kv[0]))]
        lines.append(_format_table(snr_rows, ["snr_db", "accuracy_%", "correct", "total"]))
    return "\n".join(lines) + "\n"


def _snr_sort_key(snr: str):
    return (1, 0.0) if snr == "noiseless" else (0, float(snr))


def report_csv(report: EvalReport) -> str:
    """Long-form CSV: facet, value, accuracy, correct, total."""
    rows = ["facet,value,accuracy,correct,total"]
    rows.append(f"overall,,{_acc(report.overall):.6f},{report.overall[0]},{report.overall[1]}")
    for name, table in (("class", report.per_class), ("family", report.per_family),
                        ("snr_db", report.per_snr), ("n_way", report.per_n_way),
                        ("mode", report.per_mode)):
        for key in sorted(table, key=str):
            c, t = table[key]
            rows.append(f"{name},{key},{_acc((c, t)):.6f},{c},{t}")
    rows.append(f"invalid,,{report.invalid_rate:.6f},{report.invalid_count},{report.overall[1]}")
    rows.append(f"failed,,{report.failed_rate:.6f},{report.failed_count},{report.overall[1]}")
    return "\n".join(rows) + "\n"


@dataclass
class SweepTable:
    """Long-form (facet value, image mode, accuracy) rows for plotting."""

    facet: str
    rows: List[Tuple[object, str, float, int, int]]  # value, mode, acc, correct, total

    def to_csv(self) -> str:
        lines = [f"{self.facet},mode,accuracy,correct,total"]
        for value, mode, acc, c, t in self.rows:
            lines.append(f"{value},{mode},{acc:.6f},{c},{t}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        rows = [(v, m, f"{100.0 * a:.2f}", c, t) for v, m, a, c, t in self.rows]
        return _format_table(rows, [self.facet, "mode", "accuracy_%", "correct", "total"]) + "\n"


def _single_mode(report: EvalReport) -> str:
    modes = report.modes
    if len(modes) != 1:
        raise ScoringError(f"sweep inputs must be single-mode reports, got {modes}")
    return modes[0]


def expand_report_facet(report: EvalReport, facet: str) -> List[Tuple[object, str, float, int, int]]:
    """Rows from one single-mode report's internal per-facet aggregation."""
    mode = _single_mode(report)
    if facet == "snr":
        table = {(_snr_sort_key(k), k): v for k, v in report.per_snr.items()}
        keys = [k for _, k in sorted(table)]
        return [(k, mode, _acc(report.per_snr[k]), *report.per_snr[k]) for k in keys]
    if facet == "n_way":
        return [(k, mode, _acc(report.per_n_way[k]), *report.per_n_way[k])
                for k in sorted(report.per_n_way)]
    raise ValueError(f"facet {facet!r} has no per-report aggregation")


def sweep_report(reports: Sequence[Tuple[object, EvalReport]], facet: str) -> SweepTable:
    """Assemble a sweep table from (facet value, single-mode report) pairs."""
    rows = []
    for value, report in reports:
        mode = _single_mode(report)
        rows.append((value, mode, report.overall_accuracy, *report.overall))
    rows.sort(key=lambda r: (r[1], str(r[0])))
    return SweepTable(facet=facet, rows=rows)


@dataclass
class BaselineResult:
    overall: Tuple[int, int]
    per_family: Dict[str, Tuple[int, int]]
    per_class: Dict[str, Tuple[int, int]]

    @property
    def overall_accuracy(self) -> float:
        return _acc(self.overall)


def nearest_centroid_baseline(train_records: Sequence["vqa.AssetRecord"],
                              eval_records: Sequence["vqa.AssetRecord"],
                              master_seed: int,
                              synthesis: SynthesisParams = SynthesisParams(),
                              stft_config: StftConfig = StftConfig()) -> BaselineResult:
    """Nearest-centroid classification on normalized dB spectrogram matrices.

    A desk-scale discriminability oracle: per-class centroids come from the
    train pool; eval items are assigned to the centroid at minimum
    Euclidean distance. Operates on matrices recomputed from the manifest
    seed chain, not on PNGs.
    """
    def matrices(rows):
        out = {}
        for row in rows:
            key = (row.class_name, row.snr_db, row.seed)
            if key in out:
                continue
            sig = vqa.asset_signal(row.class_name, row.snr_db, row.seed,
                                   master_seed, synthesis)
            out[key] = vqa.asset_spectrogram(sig, stft_config).ravel()
        return out

    train = matrices(train_records)
    evals = matrices(eval_records)
    train_classes = sorted({k[0] for k in train})
    eval_classes = {k[0] for k in evals}
    missing = eval_classes - set(train_classes)
    if missing:
        raise ScoringError(f"eval classes absent from train pool: {sorted(missing)}")

    centroids = np.stack([
        np.mean([v for k, v in train.items() if k[0] == cls], axis=0)
        for cls in train_classes])

    family_of = {c.canonical_name: c.family for c in modem.list_classes()}
    overall = [0, 0]
    per_family: Dict[str, Tuple[int, int]] = {}
    per_class: Dict[str, Tuple[int, int]] = {}
    for (cls, _snr, _seed), vec in evals.items():
        distances = np.linalg.norm(centroids - vec, axis=1)
        predicted = train_classes[int(np.argmin(distances))]
        correct = predicted == cls
        overall[0] += int(correct)
        overall[1] += 1
        _bump(per_family, family_of[cls], correct)
        _bump(per_class, cls, correct)
    return BaselineResult(overall=tuple(overall), per_family=per_family,
                          per_class=per_class)
