"""VQA dataset assembly: asset generation, episode building, prompts, JSONL.

Episodes are zero-shot or few-shot n-way classification records. Gold
labels cycle through the label space in shuffled rounds (per-class gold
counts never differ by more than 1), distractors are drawn uniformly
without replacement, and few-shot example images always come from the
split opposite the query to rule out leakage.

Everything derives from the dataset master seed via
:func:`rfvqa.seeding.derive_seed`; identical specs reproduce identical
manifests, images, and episode files byte for byte.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import modem, render, transform
from .modem import IqSignal, SynthesisParams
from .render import RenderConfig, RenderedImage
from .seeding import derive_seed
from .transform import SegmentationConfig, StftConfig

__all__ = [
    "SPLITS",
    "SYSTEM_PROMPT",
    "MODE_NOTES",
    "DatasetSpec",
    "AssetRecord",
    "SplitManifest",
    "VqaRecord",
    "DatasetError",
    "MissingExamplesError",
    "JsonlError",
    "generate_assets",
    "asset_signal",
    "asset_spectrogram",
    "build_episodes",
    "render_prompt",
    "build_explanation_variant",
    "write_jsonl",
    "read_jsonl",
]

SPLITS = ("train", "eval")

SYSTEM_PROMPT = (
    "You are a helpful assistant with expertise in recognizing patterns "
    "and identifying RF modulations from visual inputs."
)

MODE_NOTES = {
    "joint": (
        "this image has two horizontal panels. LEFT: magnitude spectrogram (dB), "
        "RIGHT: a short IQ time-series panel showing real part (blue) and "
        "imaginary part (red) of the signal plotted over time. The time-series "
        "corresponds to a segment down converted from the RF waveform."
    ),
    "spec": (
        "this image includes only the spectrogram magnitude (in dB), "
        "without phase information or time-domain waveform."
    ),
    "iq": (
        "this image includes a short IQ time-series panel showing real part (blue) "
        "and imaginary part (red) of the signal plotted over time, "
        "without spectrogram views."
    ),
}

FEWSHOT_PREAMBLE = (
    "You will see examples for several classes, followed by a query image. "
    "Use frequency patterns (spectrogram) and temporal dynamics (IQ waveforms) "
    "as appropriate."
)

_EXAMPLE_LABELS = {
    "spec": "Spectrogram",
    "iq": "Time-series panel",
    "joint": "Spectrogram and time-series panels",
}


class DatasetError(ValueError):
    """Dataset spec or manifest cannot support the requested build."""


class MissingExamplesError(DatasetError):
    """Few-shot build lacks example images for some candidate class."""


class JsonlError(ValueError):
    """Malformed JSONL dataset line (message names the line and field)."""


@dataclass(frozen=True)
class DatasetSpec:
    """Declarative description of one dataset build."""

    modes: Tuple[str, ...] = ("joint",)
    n_way: int = 10
    shots: int = 0
    records_per_mode: int = 1000
    snr_grid: Optional[Tuple[float, ...]] = None  # None = noiseless
    assets_per_class: int = 2  # per (class, mode, snr) in each split
    oov_excluded: frozenset = frozenset()
    master_seed: int = 0

    def __post_init__(self) -> None:
        known = set(modem.class_names())
        modes = tuple(self.modes)
        if not modes or any(m not in render.MODES for m in modes):
            raise DatasetError(f"modes must be a nonempty subset of {render.MODES}")
        if len(set(modes)) != len(modes):
            raise DatasetError("modes must be distinct")
        if not 2 <= self.n_way <= len(known):
            raise DatasetError(f"n_way must lie in [2, {len(known)}]")
        if self.shots < 0:
            raise DatasetError("shots must be >= 0")
        if self.records_per_mode < 1:
            raise DatasetError("records_per_mode must be positive")
        if self.assets_per_class < 1:
            raise DatasetError("assets_per_class must be positive")
        oov = frozenset(self.oov_excluded)
        if not oov <= known:
            raise DatasetError(f"unknown oov_excluded classes: {sorted(oov - known)}")
        if len(oov) > len(known) - 1:
            raise DatasetError("oov_excluded cannot cover the whole label space")
        object.__setattr__(self, "oov_excluded", oov)
        object.__setattr__(self, "modes", modes)
        if self.snr_grid is not None:
            grid = tuple(float(s) for s in self.snr_grid)
            if not grid or not all(np.isfinite(grid)):
                raise DatasetError("snr_grid must be finite dB values (or None)")
            object.__setattr__(self, "snr_grid", grid)


@dataclass(frozen=True)
class AssetRecord:
    """One generated image asset."""

    class_name: str
    family: str
    mode: str
    snr_db: Optional[float]
    seed: int  # per-class seed index; parity decides the split
    split: str
    path: str  # POSIX-style, relative to the dataset root
    sha256: str = ""

    @property
    def key(self) -> Tuple[str, int]:
        return (self.class_name, self.seed)


_MANIFEST_COLUMNS = ("class", "family", "mode", "snr_db", "seed", "split", "path", "sha256")


@dataclass
class SplitManifest:
    """All generated assets, partitioned into train/eval pools by seed parity."""

    records: List[AssetRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._pools: Dict[tuple, List[AssetRecord]] = {}
        for rec in self.records:
            self._pools.setdefault(
                (rec.class_name, rec.mode, rec.snr_db, rec.split), []).append(rec)

    def pool(self, class_name: str, mode: str, snr_db: Optional[float],
             split: str) -> List[AssetRecord]:
        return self._pools.get((class_name, mode, snr_db, split), [])

    def classes_in(self, split: str) -> set:
        return {r.class_name for r in self.records if r.split == split}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_MANIFEST_COLUMNS)
            for r in self.records:
                snr = "" if r.snr_db is None else f"{r.snr_db:g}"
                writer.writerow([r.class_name, r.family, r.mode, snr,
                                 r.seed, r.split, r.path, r.sha256])

    @classmethod
    def read_csv(cls, path) -> "SplitManifest":
        records = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(_MANIFEST_COLUMNS):
                raise DatasetError(f"unexpected manifest header in {path}: {header}")
            for row in reader:
                cls_name, family, mode, snr, seed, split, rel, sha = row
                records.append(AssetRecord(
                    class_name=cls_name, family=family, mode=mode,
                    snr_db=None if snr == "" else float(snr),
                    seed=int(seed), split=split, path=rel, sha256=sha))
        return cls(records=records)


def _snr_key(snr_db: Optional[float]) -> str:
    return "noiseless" if snr_db is None else f"{snr_db:g}"


def _snr_suffix(snr_db: Optional[float]) -> str:
    return "noiseless" if snr_db is None else f"snr{snr_db:g}dB"


def asset_signal(class_name: str, snr_db: Optional[float], seed_index: int,
                 master_seed: int,
                 synthesis: SynthesisParams = SynthesisParams()) -> IqSignal:
    """Reproduce the IQ signal behind one asset from the dataset seed chain."""
    synth_seed = derive_seed(master_seed, "synth", class_name, _snr_key(snr_db), seed_index)
    sig = modem.synthesize(class_name, replace(synthesis, seed=synth_seed))
    if snr_db is not None:
        noise_seed = derive_seed(master_seed, "noise", class_name, _snr_key(snr_db), seed_index)
        sig = modem.add_awgn(sig, snr_db, noise_seed)
    return sig


def asset_spectrogram(signal: IqSignal,
                      stft_config: StftConfig = StftConfig()) -> np.ndarray:
    """Normalized [0, 1] dB matrix for an asset's spectrogram panel."""
    return transform.normalize_db(transform.stft(signal.samples, stft_config))


def _segment_for(signal: IqSignal, segmentation: SegmentationConfig,
                 master_seed: int, class_name: str, snr_db, seed_index: int):
    cfg = segmentation
    if signal.snr_db is not None:
        # hysteresis scales with the noisy amplitude
        cfg = replace(cfg, hysteresis_eps=transform.noise_adaptive_eps(signal.samples.real))
    seg_seed = derive_seed(master_seed, "segment", class_name, _snr_key(snr_db), seed_index)
    return transform.extract_segment(signal, cfg, seg_seed)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def generate_assets(spec: DatasetSpec, root,
                    synthesis: SynthesisParams = SynthesisParams(),
                    segmentation: SegmentationConfig = SegmentationConfig(),
                    stft_config: StftConfig = StftConfig(),
                    render_config: Optional[RenderConfig] = None) -> SplitManifest:
    """Run modem -> transform -> render for every asset and write PNGs.

    Assets are generated per (class, snr, seed index): even seed indices go
    to the train pool, odd to eval. OOV-excluded classes are skipped for
    the train split only. Fully deterministic in ``spec.master_seed``.
    """
    root = Path(root)
    if render_config is None:
        # joint panels must match the spectrogram height exactly
        render_config = RenderConfig(iq_width=512, iq_height=stft_config.fft_size)
    min_len = stft_config.fft_size
    if synthesis.num_samples < min_len:
        raise DatasetError(
            f"num_samples={synthesis.num_samples} shorter than one STFT frame ({min_len})")

    snr_values: Sequence[Optional[float]] = (
        (None,) if spec.snr_grid is None else spec.snr_grid)
    records: List[AssetRecord] = []

    for cls in modem.list_classes():
        for snr_db in snr_values:
            for seed_index in range(2 * spec.assets_per_class):
                split = SPLITS[seed_index % 2]
                if split == "train" and cls.canonical_name in spec.oov_excluded:
                    continue
                try:
                    records.extend(_generate_one(
                        spec, cls, snr_db, seed_index, split, root,
                        synthesis, segmentation, stft_config, render_config))
                except (modem.SynthesisError, transform.InsufficientCrossings,
                        ValueError) as exc:
                    raise DatasetError(
                        f"asset generation failed for class={cls.canonical_name} "
                        f"snr={_snr_key(snr_db)} seed={seed_index}: {exc}") from exc
    return SplitManifest(records=records)


def _generate_one(spec, cls, snr_db, seed_index, split, root,
                  synthesis, segmentation, stft_config, render_config):
    signal = asset_signal(cls.canonical_name, snr_db, seed_index,
                          spec.master_seed, synthesis)
    provenance = {
        "class": cls.canonical_name,
        "snr_db": snr_db,
        "seed": seed_index,
    }

    spec_img = None
    if "spec" in spec.modes or "joint" in spec.modes:
        norm = asset_spectrogram(signal, stft_config)
        spec_img = render.render_spectrogram(norm, render_config, provenance)
    iq_img = None
    if "iq" in spec.modes or "joint" in spec.modes:
        segment = _segment_for(signal, segmentation, spec.master_seed,
                               cls.canonical_name, snr_db, seed_index)
        iq_img = render.render_iq_panel(segment, render_config, provenance)

    out_records = []
    for mode in spec.modes:
        if mode == "spec":
            img = spec_img
        elif mode == "iq":
            img = iq_img
        else:
            img = render.render_joint(spec_img, iq_img)
        rel = Path("assets") / split / cls.canonical_name / (
            f"{mode}_{seed_index:06d}_{_snr_suffix(snr_db)}.png")
        dest = root / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        render.write_png(img, dest)
        out_records.append(AssetRecord(
            class_name=cls.canonical_name, family=cls.family, mode=mode,
            snr_db=snr_db, seed=seed_index, split=split,
            path=rel.as_posix(), sha256=_sha256_file(dest)))
    return out_records


@dataclass
class VqaRecord:
    """One VQA episode: query image, candidates, gold, optional shots, messages."""

    id: str
    mode: str
    split: str
    n_way: int
    shots: int
    snr_db: Optional[float]
    seed: int
    candidates: List[str]
    gold: str
    query_image: str
    shot_images: Dict[str, List[str]] = field(default_factory=dict)
    rationale_mode: bool = False
    messages: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            "split": self.split,
            "n_way": self.n_way,
            "shots": self.shots,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "candidates": list(self.candidates),
            "gold": self.gold,
            "query_image": self.query_image,
            "shot_images": {k: list(v) for k, v in self.shot_images.items()},
            "rationale_mode": self.rationale_mode,
            "messages": self.messages,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VqaRecord":
        return cls(**{f: data[f] for f in (
            "id", "mode", "split", "n_way", "shots", "snr_db", "seed",
            "candidates", "gold", "query_image", "shot_images",
            "rationale_mode", "messages")})


def _gold_cycle(eligible: Sequence[str], count: int, rng) -> List[str]:
    golds: List[str] = []
    while len(golds) < count:
        golds.extend(rng.permutation(list(eligible)).tolist())
    return golds[:count]


def build_episodes(manifest: SplitManifest, spec: DatasetSpec, split: str = "eval",
                   records_per_mode: Optional[int] = None) -> List[VqaRecord]:
    """Build the episode set for one split.

    Golds cycle through the eligible label space in shuffled rounds; the
    n-1 distractors are uniform without replacement; few-shot example
    images come from the opposite split at the query's SNR. Train-split
    episodes never use OOV-excluded classes as gold, candidate, or
    example; eval-split episodes keep the full label space.
    """
    if split not in SPLITS:
        raise DatasetError(f"split must be one of {SPLITS}")
    count = spec.records_per_mode if records_per_mode is None else records_per_mode
    all_names = modem.class_names()
    if split == "train":
        label_space = [c for c in all_names if c not in spec.oov_excluded]
    else:
        label_space = list(all_names)
    if spec.n_way > len(label_space):
        raise DatasetError(
            f"n_way={spec.n_way} exceeds the {len(label_space)}-class label space for split {split!r}")
    other_split = "eval" if split == "train" else "train"
    snr_values: Sequence[Optional[float]] = (
        (None,) if spec.snr_grid is None else spec.snr_grid)

    records: List[VqaRecord] = []
    for mode in spec.modes:
        gold_rng = np.random.default_rng(
            derive_seed(spec.master_seed, "gold-cycle", mode, split))
        golds = _gold_cycle(label_space, count, gold_rng)
        for idx in range(count):
            ep_seed = derive_seed(spec.master_seed, "episode", mode, split, idx)
            rng = np.random.default_rng(ep_seed)
            gold = golds[idx]
            others = [c for c in label_space if c != gold]
            distractors = rng.choice(others, size=spec.n_way - 1, replace=False).tolist()
            order = rng.permutation(spec.n_way)
            pool_list = distractors + [gold]
            candidates = [pool_list[i] for i in order]
            snr_db = snr_values[int(rng.integers(len(snr_values)))]

            query_pool = manifest.pool(gold, mode, snr_db, split)
            if not query_pool:
                raise DatasetError(
                    f"manifest has no {split} assets for class={gold} mode={mode} "
                    f"snr={_snr_key(snr_db)}")
            query = query_pool[int(rng.integers(len(query_pool)))]

            shot_images: Dict[str, List[str]] = {}
            if spec.shots > 0:
                for cand in candidates:
                    pool = manifest.pool(cand, mode, snr_db, other_split)
                    if len(pool) < spec.shots:
                        raise MissingExamplesError(
                            f"need {spec.shots} {other_split} example images for "
                            f"class={cand} mode={mode} snr={_snr_key(snr_db)}, "
                            f"found {len(pool)}")
                    picks = rng.choice(len(pool), size=spec.shots, replace=False)
                    shot_images[cand] = [pool[int(k)].path for k in picks]

            record = VqaRecord(
                id=f"{mode}-{split}-{idx:06d}",
                mode=mode, split=split, n_way=spec.n_way, shots=spec.shots,
                snr_db=snr_db, seed=ep_seed, candidates=candidates, gold=gold,
                query_image=query.path, shot_images=shot_images)
            record.messages = render_prompt(record)
            records.append(record)
    return records


def _text(content: str) -> dict:
    return {"type": "text", "text": content}


def _image(path: str) -> dict:
    return {"type": "image", "path": path}


def _candidate_list(candidates: Sequence[str]) -> str:
    return "[" + ", ".join(f"'{c}'" for c in candidates) + "]"


def render_prompt(record: VqaRecord, rationale: bool = False) -> List[dict]:
    """Chat messages for one episode (system + user with interleaved images)."""
    cand_str = _candidate_list(record.candidates)
    content: List[dict] = []
    if record.shots > 0:
        content.append(_text(FEWSHOT_PREAMBLE))
        label = _EXAMPLE_LABELS[record.mode]
        for cand in record.candidates:
            for path in record.shot_images.get(cand, []):
                content.append(_text(f"{label} for '{cand}':"))
                content.append(_image(path))
    if rationale:
        instruction = (
            f"Select the correct modulation class in {cand_str} for "
            "following RF signal with your rationale:"
        )
    else:
        instruction = (
            "Your task is to analyze an RF visualization and determine the most "
            f"likely modulation class from a given list. Note: {MODE_NOTES[record.mode]} "
            f"Here are the classes: {cand_str}. "
            "Your response must contain the exact name of the class only. "
            "Here is the IMAGE:"
        )
    content.append(_text(instruction))
    content.append(_image(record.query_image))
    return [
        {"role": "system", "content": [_text(SYSTEM_PROMPT)]},
        {"role": "user", "content": content},
    ]


def build_explanation_variant(record: VqaRecord) -> VqaRecord:
    """Same episode, but the reply must include a free-text rationale.

    The scorer switches to containment matching when ``rationale_mode``
    is set.
    """
    variant = replace(record, rationale_mode=True,
                      candidates=list(record.candidates),
                      shot_images={k: list(v) for k, v in record.shot_images.items()})
    variant.messages = render_prompt(variant, rationale=True)
    return variant


_REQUIRED_FIELDS = (
    "id", "mode", "split", "n_way", "shots", "snr_db", "seed",
    "candidates", "gold", "query_image", "shot_images", "rationale_mode",
    "messages",
)


def write_jsonl(records: Sequence[VqaRecord], path) -> None:
    """One JSON object per line, field order fixed for reproducible bytes."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def read_jsonl(path) -> List[VqaRecord]:
    """Parse a dataset file; errors name the offending line and field."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"line {lineno}: invalid JSON: {exc}") from None
            for fname in _REQUIRED_FIELDS:
                if fname not in data:
                    raise JsonlError(f"line {lineno}: missing field '{fname}'")
            records.append(VqaRecord.from_dict(data))
    return records
