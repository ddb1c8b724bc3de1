"""Config-driven orchestration: ingest -> (detect) -> setups -> scoring -> reports.

Configs are INI files; every option can be overridden on the command line via
``--set section.key=value``. Given a deterministic backend, rerunning an
identical config reproduces the output bundle byte for byte (timestamps live
only in the manifest).
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .backends import (
    BackendDescriptor,
    EmbeddingBackend,
    MockBackend,
    MockStructure,
    ServiceBackend,
    StoreBackend,
)
from .datasets import (
    PER_CLASS_ATTRIBUTES,
    AttributeDataset,
    load_awa2,
    load_cub,
    load_dataset,
    save_dataset,
)
from .detection import DetectionConfig, detect, save_detection
from .prompts import AWA2_COMMA_LIST, CONTENT_BASED, CUB_STYLE, PromptGrammar, SlotTable
from .scoring import run_setup, write_recall_csv, write_reports_csv
from .setups import (
    S4,
    S5,
    SETUPS,
    SEEDED_RANDOM,
    SetupSpec,
    build_gallery,
    build_skip_ledger,
    export_galleries,
)


class ConfigError(ValueError):
    """Raised for invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    dataset_kind: str = "canonical"
    dataset_root: str = ""
    min_certainty: int = 3

    backend_kind: str = "mock"
    model: str = "mock"
    dim: int = 256
    backend_seed: int = 0
    class_weight: float = 1.0
    attribute_weight: float = 0.0
    noise_weight: float = 0.0
    location: str = ""

    detect_cutoff: float | None = None
    detect_target: float | None = None

    setups: list[str] = field(default_factory=lambda: ["S1"])
    x_values: list[int] = field(default_factory=lambda: [0])
    grammar: str = "auto"
    base_noun: str = "auto"
    attribute_order: str = SEEDED_RANDOM
    seed: int = 0
    slot_table: str = ""

    output_dir: str = "out"
    export_galleries: bool = False
    topk: int = 0
    topk_images: int = 0
    distance_images: int = 0
    distance_x_max: int = 0


def parse_x_values(text: str) -> list[int]:
    """Parse "0..3", "0,1,5", or a mix of both into a sorted unique list."""
    values: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo_text, _, hi_text = part.partition("..")
            lo, hi = int(lo_text), int(hi_text)
            if hi < lo:
                raise ConfigError(f"bad x range {part!r}")
            values.update(range(lo, hi + 1))
        else:
            values.add(int(part))
    if not values:
        raise ConfigError(f"no x values in {text!r}")
    if min(values) < 0:
        raise ConfigError("x values must be >= 0")
    return sorted(values)


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def load_run_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Load an INI config; ``overrides`` maps "section.key" to replacement values."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    cfg = RunConfig()

    def get(section: str, key: str, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key).strip()
        if isinstance(default, bool):
            if raw.lower() not in _BOOL:
                raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
            return _BOOL[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw

    cfg.dataset_kind = get("dataset", "kind", cfg.dataset_kind)
    cfg.dataset_root = get("dataset", "root", get("dataset", "path", cfg.dataset_root))
    cfg.min_certainty = get("dataset", "min_certainty", cfg.min_certainty)

    cfg.backend_kind = get("backend", "kind", cfg.backend_kind)
    cfg.model = get("backend", "model", cfg.model)
    cfg.dim = get("backend", "dim", cfg.dim)
    cfg.backend_seed = get("backend", "seed", cfg.backend_seed)
    cfg.class_weight = get("backend", "class_weight", cfg.class_weight)
    cfg.attribute_weight = get("backend", "attribute_weight", cfg.attribute_weight)
    cfg.noise_weight = get("backend", "noise_weight", cfg.noise_weight)
    cfg.location = get("backend", "location", cfg.location)

    if parser.has_section("detection"):
        if parser.has_option("detection", "cutoff"):
            cfg.detect_cutoff = parser.getfloat("detection", "cutoff")
        if parser.has_option("detection", "target_mean_attrs"):
            cfg.detect_target = parser.getfloat("detection", "target_mean_attrs")

    cfg.setups = [s.strip() for s in get("run", "setups", ",".join(cfg.setups)).split(",") if s.strip()]
    cfg.x_values = parse_x_values(get("run", "x", "0"))
    cfg.grammar = get("run", "grammar", cfg.grammar)
    cfg.base_noun = get("run", "base_noun", cfg.base_noun)
    cfg.attribute_order = get("run", "attribute_order", cfg.attribute_order)
    cfg.seed = get("run", "seed", cfg.seed)
    cfg.slot_table = get("run", "slot_table", cfg.slot_table)

    cfg.output_dir = get("output", "dir", cfg.output_dir)
    cfg.export_galleries = get("output", "export_galleries", cfg.export_galleries)
    cfg.topk = get("output", "topk", cfg.topk)
    cfg.topk_images = get("output", "topk_images", cfg.topk_images)
    cfg.distance_images = get("output", "distance_images", cfg.distance_images)
    cfg.distance_x_max = get("output", "distance_x_max", cfg.distance_x_max)

    validate_config(cfg)
    return cfg


def expand_jobs(cfg: RunConfig) -> list[tuple[str, int]]:
    """Expand setups x attribute counts, dropping inapplicable (S4/S5, x=0) cells."""
    jobs: list[tuple[str, int]] = []
    for setup in cfg.setups:
        xs = [x for x in cfg.x_values if not (setup in (S4, S5) and x == 0)]
        if not xs:
            raise ConfigError(
                f"setup {setup} has no valid attribute counts in x={cfg.x_values} "
                "(S4 and S5 require x >= 1)"
            )
        jobs.extend((setup, x) for x in xs)
    return jobs


def validate_config(cfg: RunConfig) -> None:
    if cfg.dataset_kind not in ("cub", "awa2", "canonical"):
        raise ConfigError(f"unknown dataset kind {cfg.dataset_kind!r}")
    if not cfg.dataset_root:
        raise ConfigError("[dataset] root is required")
    if not Path(cfg.dataset_root).exists():
        raise ConfigError(f"dataset path does not exist: {cfg.dataset_root}")
    if cfg.backend_kind not in ("mock", "store", "service"):
        raise ConfigError(f"unknown backend kind {cfg.backend_kind!r}")
    if cfg.backend_kind in ("store", "service") and not cfg.location:
        raise ConfigError(f"[backend] location is required for kind {cfg.backend_kind}")
    if cfg.backend_kind == "store" and not Path(cfg.location).exists():
        raise ConfigError(f"store file does not exist: {cfg.location}")
    unknown = [s for s in cfg.setups if s not in SETUPS]
    if unknown:
        raise ConfigError(f"unknown setups: {unknown}")
    if cfg.detect_cutoff is not None and cfg.detect_target is not None:
        raise ConfigError("[detection] set either cutoff or target_mean_attrs, not both")
    if cfg.slot_table and not Path(cfg.slot_table).exists():
        raise ConfigError(f"slot table does not exist: {cfg.slot_table}")
    if cfg.grammar == CONTENT_BASED and not cfg.slot_table:
        raise ConfigError("content_based grammar requires [run] slot_table")
    expand_jobs(cfg)


def ingest(cfg: RunConfig) -> AttributeDataset:
    if cfg.dataset_kind == "cub":
        return load_cub(cfg.dataset_root, min_certainty=cfg.min_certainty)
    if cfg.dataset_kind == "awa2":
        return load_awa2(cfg.dataset_root)
    return load_dataset(cfg.dataset_root)


def build_backend(cfg: RunConfig, dataset: AttributeDataset) -> EmbeddingBackend:
    if cfg.backend_kind == "mock":
        return MockBackend(
            dataset,
            MockStructure(
                class_weight=cfg.class_weight,
                attribute_weight=cfg.attribute_weight,
                noise_weight=cfg.noise_weight,
                seed=cfg.backend_seed,
            ),
            dim=cfg.dim,
            model_name=cfg.model,
        )
    if cfg.backend_kind == "store":
        return StoreBackend.open(cfg.location)
    return ServiceBackend(cfg.location, model_name=cfg.model or None)


def grammar_for(cfg: RunConfig, dataset: AttributeDataset) -> PromptGrammar:
    kind = cfg.grammar
    has_expressions = any(a.expression for a in dataset.attributes)
    if kind == "auto":
        kind = CUB_STYLE if has_expressions else AWA2_COMMA_LIST
    noun = cfg.base_noun
    if noun == "auto":
        noun = "bird" if dataset.name == "cub" else "animal"
    slot_table = SlotTable.load(cfg.slot_table) if cfg.slot_table else None
    return PromptGrammar(kind=kind, base_noun=noun, slot_table=slot_table)


def _dataset_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: RunConfig) -> Path:
    """Execute a full run; returns the output directory.

    Any stage failure propagates with its stage name; outputs written before
    the failure are left in place for inspection.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "package_version": __version__,
        "seed": cfg.seed,
        "stages": [],
    }

    def stage(name: str):
        manifest["stages"].append(name)
        return name

    try:
        stage("ingest")
        dataset = ingest(cfg)
        dataset_path = out_dir / "dataset.ndjson"
        save_dataset(dataset, dataset_path)

        backend = build_backend(cfg, dataset)

        detection_summary = None
        if cfg.detect_cutoff is not None or cfg.detect_target is not None:
            stage("detect")
            if dataset.flavor != PER_CLASS_ATTRIBUTES:
                raise ConfigError(
                    "[detection] configured but the dataset already has per-image attributes"
                )
            result = detect(
                dataset,
                backend,
                DetectionConfig(
                    cutoff=cfg.detect_cutoff, target_mean_attrs=cfg.detect_target
                ),
            )
            save_detection(result, out_dir / "detection.ndjson")
            dataset = result.dataset
            save_dataset(dataset, dataset_path)
            # The mock backend keys image embeddings off ground-truth
            # attribute sets, which detection just rewrote.
            backend = build_backend(cfg, dataset)
            detection_summary = {
                "cutoff_used": result.cutoff_used,
                "mean_attrs_per_image": result.mean_attrs_per_image,
            }

        stage("validate")
        max_attrs = max((len(i.attribute_ids) for i in dataset.images), default=0)
        jobs = expand_jobs(cfg)
        infeasible = sorted({x for _, x in jobs if x > max_attrs})
        if infeasible:
            raise ConfigError(
                f"x values {infeasible} exceed the dataset limit "
                f"(max {max_attrs} attributes on any image)"
            )

        grammar = grammar_for(cfg, dataset)
        stage("score")
        from .backends import CachingBackend
        from .scoring import score_gallery, topk, write_topk

        backend = CachingBackend(backend)
        reports = []
        job_records = []
        if cfg.export_galleries:
            (out_dir / "galleries").mkdir(exist_ok=True)
        if cfg.topk > 0 and cfg.topk_images > 0:
            (out_dir / "topk").mkdir(exist_ok=True)
        for setup, x in jobs:
            spec = SetupSpec(
                setup=setup, x=x, grammar=grammar, seed=cfg.seed,
                attribute_order=cfg.attribute_order,
            )
            report = run_setup(dataset, backend, spec)
            reports.append(report)
            write_recall_csv(report, dataset, out_dir / f"recall_{setup}_x{x}.csv")
            if cfg.export_galleries:
                galleries = (
                    g for g in (
                        build_gallery(dataset, img.image_id, spec)
                        for img in dataset.images
                    )
                    if g is not None
                )
                export_galleries(galleries, out_dir / "galleries" / f"{setup}_x{x}.ndjson")
            if cfg.topk > 0 and cfg.topk_images > 0:
                entries = []
                for img in dataset.images:
                    if len(entries) >= cfg.topk_images:
                        break
                    gallery = build_gallery(dataset, img.image_id, spec)
                    if gallery is None:
                        continue
                    scored = score_gallery(backend, img.image_id, gallery)
                    entries.append(
                        (img.image_id, topk(scored, min(cfg.topk, len(gallery.prompts))))
                    )
                write_topk(entries, dataset, out_dir / "topk" / f"{setup}_x{x}.ndjson")
            job_records.append(
                {"setup": setup, "x": x, "grammar": grammar.kind,
                 "n_evaluated": report.n_evaluated, "n_ties": report.n_ties}
            )

        if cfg.distance_images > 0:
            from .scoring import distance_profile, write_distance_profiles

            stage("distances")
            base_spec = SetupSpec(
                setup="S2", x=max(1, cfg.distance_x_max), grammar=grammar,
                seed=cfg.seed, attribute_order=cfg.attribute_order,
            )
            profiles = [
                distance_profile(
                    backend, dataset, img.image_id, list(range(dataset.n_classes)),
                    cfg.distance_x_max, base_spec,
                )
                for img in dataset.images[: cfg.distance_images]
            ]
            write_distance_profiles(profiles, out_dir / "distance_profiles.ndjson")

        stage("report")
        write_reports_csv(reports, out_dir / "eval_report.csv")
        ledger = build_skip_ledger(dataset, cfg.x_values)
        with (out_dir / "skip_rates.csv").open("w", encoding="utf-8", newline="") as fh:
            fh.write("x,skipped,total,rate\n")
            for x in cfg.x_values:
                fh.write(f"{x},{ledger.skipped[x]},{ledger.total_images},{ledger.rate(x)}\n")

        manifest.update(
            {
                "dataset": {
                    "name": dataset.name,
                    "sha256": _dataset_digest(dataset_path),
                    "n_classes": dataset.n_classes,
                    "n_attributes": dataset.n_attributes,
                    "n_images": len(dataset.images),
                    "flavor": dataset.flavor,
                },
                "backend": backend.descriptor().as_dict(),  # type: ignore[attr-defined]
                "detection": detection_summary,
                "grammar": {"kind": grammar.kind, "base_noun": grammar.base_noun},
                "attribute_order": cfg.attribute_order,
                "jobs": job_records,
                "outputs": sorted(
                    str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file()
                ),
            }
        )
    except Exception as exc:
        manifest["failed_stage"] = manifest["stages"][-1] if manifest["stages"] else None
        manifest["error"] = str(exc)
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        raise
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir
