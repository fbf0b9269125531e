"""Pipeline configuration and the stage functions behind the CLI.

Every stage reads artifacts from ``output_dir``, writes its own artifacts
there, and records a ``<stage>.manifest.json`` listing the SHA-256 of each
input and output so the chain can be audited.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .capture import FiveTuple, FlowSession, PacketRecord, assemble_sessions, read_capture
from .curate import CurationConfig, curate
from .evaluate import DEFAULT_PROTOCOLS, DEFAULT_TRAIT_KEYWORDS, evaluate_reports
from .features import ByteTraitExtractor, GlobalStats, TraitVector, global_stats
from .knowledge import load_knowledge_base, lookup
from .loss import LossConfig
from .targets import TargetRecord, synthesize_target, write_jsonl
from .tensorize import HEADER_ZONE, ROW_BYTES, read_npy_batch, tensorize_flow, write_npy_batch

logger = logging.getLogger(__name__)

CAPTURE_SUFFIXES = (".pcap", ".pcapng", ".cap")
STAGES = ("ingest", "curate", "tensorize", "features", "targets", "eval")
SPLITS = ("train", "test")


class ConfigInvalid(ValueError):
    pass


class MissingInput(FileNotFoundError):
    pass


class StageFailure(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    pcap_root: Path
    output_dir: Path
    knowledge_base: Path | None = None
    curation: CurationConfig = field(default_factory=CurationConfig)
    k: int = 10
    row_bytes: int = ROW_BYTES
    header_bytes: int = HEADER_ZONE
    prompt_template: Path | None = None
    keywords: Path | None = None
    predictions: Path | None = None
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a mapping")

        def path(value, name, required=False):
            if value in (None, ""):
                if required:
                    raise ConfigInvalid(f"{name} is required")
                return None
            p = Path(value)
            return p if p.is_absolute() else (base / p)

        try:
            inp = raw.get("input", {})
            cur = raw.get("curation", {})
            samp = raw.get("sampling", {})
            layout = raw.get("layout", {})
            loss = raw.get("loss", {})
            n_max = cur.get("n_max")
            cfg = cls(
                pcap_root=path(inp.get("pcap_root"), "input.pcap_root", required=True),
                output_dir=path(raw.get("output_dir", "out"), "output_dir"),
                knowledge_base=path(raw.get("knowledge_base"), "knowledge_base"),
                curation=CurationConfig(
                    n_min=int(cur.get("n_min", 0)),
                    n_max=None if n_max in (None, "unlimited") else int(n_max),
                    split_ratio=Fraction(str(cur.get("split_ratio", "4/5"))),
                    seed=int(cur.get("seed", 0)),
                ),
                k=int(samp.get("k", 10)),
                row_bytes=int(layout.get("row_bytes", ROW_BYTES)),
                header_bytes=int(layout.get("header_bytes", HEADER_ZONE)),
                prompt_template=path(raw.get("prompt_template"), "prompt_template"),
                keywords=path(raw.get("keywords"), "keywords"),
                predictions=path(raw.get("predictions"), "predictions"),
                loss=LossConfig(
                    lam=float(loss.get("lambda", 0.3)),
                    gamma=float(loss.get("gamma", 5.0)),
                    m=int(loss.get("m", 15)),
                ),
            )
        except ConfigInvalid:
            raise
        except (TypeError, ValueError, AttributeError, ZeroDivisionError) as exc:
            raise ConfigInvalid(str(exc)) from exc
        if cfg.row_bytes != ROW_BYTES or cfg.header_bytes != HEADER_ZONE:
            raise ConfigInvalid(f"layout must be {ROW_BYTES} bytes with a {HEADER_ZONE}-byte header zone")
        if cfg.k < 5:
            raise ConfigInvalid("sampling.k must be at least 5")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    def validate_paths(self) -> None:
        if not self.pcap_root.is_dir():
            raise ConfigInvalid(f"pcap_root is not a directory: {self.pcap_root}")
        for name in ("knowledge_base", "prompt_template", "keywords", "predictions"):
            p = getattr(self, name)
            if p is not None and not p.exists():
                raise ConfigInvalid(f"{name} does not exist: {p}")


# --------------------------------------------------------------------------
# helpers


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(path: Path, root: Path) -> str:
    # relative even outside ``root`` so manifests do not depend on the checkout location
    return Path(os.path.relpath(path.resolve(), root.resolve())).as_posix()


def write_manifest(cfg: PipelineConfig, stage: str, inputs: list[Path], outputs: list[Path], params: dict | None = None) -> Path:
    out = cfg.output_dir
    manifest = {
        "stage": stage,
        "tool_version": __version__,
        "numpy_version": np.__version__,
        "seed": cfg.curation.seed,
        "params": params or {},
        "inputs": {_rel(p, out): sha256_file(p) for p in sorted(inputs)},
        "outputs": {_rel(p, out): sha256_file(p) for p in sorted(outputs)},
    }
    path = out / f"{stage}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInput(f"missing input {path}; run the previous stage first")
    return path


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def packet_to_dict(p: PacketRecord) -> dict:
    return {
        "ts": p.ts_seconds,
        "src": _b64(p.src_ip),
        "dst": _b64(p.dst_ip),
        "sport": p.src_port,
        "dport": p.dst_port,
        "proto": p.ip_protocol,
        "hdr": _b64(p.l3l4_header_bytes),
        "payload": _b64(p.l4_payload),
        "len": p.total_len,
        "ipv": p.ip_version,
        "l3": p.l3_header_len,
        "l4": p.l4_header_len,
    }


def packet_from_dict(d: dict) -> PacketRecord:
    b = base64.b64decode
    return PacketRecord(d["ts"], b(d["src"]), b(d["dst"]), d["sport"], d["dport"], d["proto"], b(d["payload"]),
                        b(d["hdr"]), d["len"], d["ipv"], d["l3"], d["l4"])


def session_to_line(s: FlowSession) -> str:
    obj = {"flow_id": s.flow_id, "label": s.label, "source_file": s.source_file,
           "packets": [packet_to_dict(p) for p in s.packets]}
    return json.dumps(obj, separators=(",", ":"))


def session_from_line(line: str) -> FlowSession:
    obj = json.loads(line)
    packets = [packet_from_dict(p) for p in obj["packets"]]
    return FlowSession(FiveTuple.from_packet(packets[0]), packets, obj["label"], obj["source_file"])


def load_sessions(path: Path) -> list[FlowSession]:
    with open(_require(path), encoding="utf-8") as fh:
        return [session_from_line(line) for line in fh if line.strip()]


def discover_captures(root: Path) -> list[tuple[str, Path]]:
    """(label, path) pairs; the label is the capture's immediate parent directory."""
    found = [p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in CAPTURE_SUFFIXES]
    return [(p.parent.name, p) for p in sorted(found, key=lambda p: p.relative_to(root).as_posix())]


# --------------------------------------------------------------------------
# stages


def stage_ingest(cfg: PipelineConfig) -> dict:
    captures = discover_captures(cfg.pcap_root)
    if not captures:
        raise MissingInput(f"no capture files under {cfg.pcap_root}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "sessions.jsonl"
    stats = {"files": 0, "packets": 0, "sessions": 0, "non_ip_frames": 0, "truncated_files": 0}
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for label, path in captures:
            result = read_capture(path)
            if result.truncated:
                logger.warning("%s: truncated, kept %d packets", path, len(result.packets))
                stats["truncated_files"] += 1
            rel = path.relative_to(cfg.pcap_root).as_posix()
            sessions = assemble_sessions(result.packets, label, rel)
            for s in sessions:
                fh.write(session_to_line(s) + "\n")
            stats["files"] += 1
            stats["packets"] += len(result.packets)
            stats["sessions"] += len(sessions)
            stats["non_ip_frames"] += result.non_ip_frames
    write_manifest(cfg, "ingest", [p for _, p in captures], [out], stats)
    return stats


def stage_curate(cfg: PipelineConfig) -> dict:
    src = cfg.output_dir / "sessions.jsonl"
    sessions = load_sessions(src)
    try:
        corpus = curate(sessions, cfg.curation)
    except ValueError as exc:
        raise StageFailure(f"curation failed: {exc}") from exc
    manifest = corpus.manifest(cfg.curation)
    curation_path = cfg.output_dir / "curation.json"
    _dump_json(curation_path, manifest)
    split_path = cfg.output_dir / "split.json"
    _dump_json(split_path, {"train": [s.flow_id for s in corpus.train], "test": [s.flow_id for s in corpus.test]})
    write_manifest(cfg, "curate", [src], [curation_path, split_path], {"n_min": cfg.curation.n_min, "n_max": cfg.curation.n_max, "split_ratio": str(cfg.curation.split_ratio)})
    return {"train": len(corpus.train), "test": len(corpus.test), "removed_classes": manifest["removed_classes"]}


def _split_sessions(cfg: PipelineConfig) -> dict[str, list[FlowSession]]:
    sessions = {s.flow_id: s for s in load_sessions(cfg.output_dir / "sessions.jsonl")}
    split = json.loads(_require(cfg.output_dir / "split.json").read_text())
    try:
        return {name: [sessions[i] for i in split[name]] for name in SPLITS}
    except KeyError as exc:
        raise StageFailure(f"split references unknown flow {exc}") from exc


def stage_tensorize(cfg: PipelineConfig) -> dict:
    splits = _split_sessions(cfg)
    outputs = []
    counts = {}
    for name, sessions in splits.items():
        if not sessions:
            continue
        samples = [tensorize_flow(s, k=cfg.k) for s in sessions]
        npy = cfg.output_dir / f"{name}.npy"
        side = write_npy_batch(samples, npy)
        outputs += [npy, side]
        counts[name] = len(samples)
    write_manifest(cfg, "tensorize", [cfg.output_dir / "sessions.jsonl", cfg.output_dir / "split.json"], outputs, {"k": cfg.k})
    return counts


def stage_features(cfg: PipelineConfig) -> dict:
    splits = _split_sessions(cfg)
    tensors = {}
    inputs = []
    for name in SPLITS:
        npy = cfg.output_dir / f"{name}.npy"
        if splits[name]:
            tensors[name] = read_npy_batch(_require(npy), cfg.k)
            inputs.append(npy)
    everything = [s for name in SPLITS for s in tensors.get(name, [])]
    if len(everything) < 3:
        raise StageFailure("need at least 3 samples to compute bucket thresholds")
    # thresholds come from the full corpus distribution
    extractor = ByteTraitExtractor(n_packets=cfg.k).fit(everything)
    thr_path = cfg.output_dir / "thresholds.json"
    extractor.save_thresholds(thr_path)

    feat_path = cfg.output_dir / "features.jsonl"
    with open(feat_path, "w", encoding="utf-8", newline="\n") as fh:
        for name in SPLITS:
            samples = tensors.get(name, [])
            traits = extractor.transform(samples) if samples else []
            for sample, session, tv in zip(samples, splits[name], traits):
                if sample.flow_id != session.flow_id:
                    raise StageFailure(f"row order mismatch: {sample.flow_id} vs {session.flow_id}")
                row = {
                    "id": sample.flow_id,
                    "split": name,
                    "label": sample.label,
                    "raw": {"ascii": tv.raw_ascii_ratio, "entropy": tv.raw_entropy_bits, "zero_pad": tv.raw_zero_ratio},
                    "traits": tv.to_dict(),
                    "stats": global_stats(session).to_dict(),
                }
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    write_manifest(cfg, "features", inputs, [thr_path, feat_path])
    return {"samples": len(everything)}


def stage_targets(cfg: PipelineConfig) -> dict:
    if cfg.knowledge_base is None:
        raise ConfigInvalid("knowledge_base is required for the targets stage")
    kb = load_knowledge_base(cfg.knowledge_base)
    feat_path = _require(cfg.output_dir / "features.jsonl")
    rows = [json.loads(line) for line in feat_path.read_text(encoding="utf-8").splitlines() if line]
    records: dict[str, list[tuple[str, TargetRecord]]] = {name: [] for name in SPLITS}
    for row in rows:
        try:
            entry = lookup(kb, row["label"])
        except KeyError as exc:
            raise StageFailure(f"knowledge base has no entry for class {exc}") from exc
        rec = synthesize_target(TraitVector.from_dict(row["traits"]), GlobalStats.from_dict(row["stats"]), entry)
        records[row["split"]].append((row["id"], rec))
    outputs = []
    for name in SPLITS:
        path = cfg.output_dir / f"{name}.jsonl"
        write_jsonl(records[name], path)
        outputs.append(path)
    write_manifest(cfg, "targets", [feat_path, cfg.knowledge_base], outputs)
    return {name: len(v) for name, v in records.items()}


def load_keywords(cfg: PipelineConfig) -> tuple[dict, list[str]]:
    if cfg.keywords is None:
        return DEFAULT_TRAIT_KEYWORDS, DEFAULT_PROTOCOLS
    data = json.loads(cfg.keywords.read_text())
    return data.get("trait_keywords", DEFAULT_TRAIT_KEYWORDS), data.get("protocols", DEFAULT_PROTOCOLS)


def stage_eval(cfg: PipelineConfig, predictions: Path | None = None, references: Path | None = None) -> dict:
    refs_path = _require(references or cfg.output_dir / "test.jsonl")
    preds_path = _require(predictions or cfg.predictions or refs_path)
    refs = [line for line in refs_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    preds = [line for line in preds_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    kw, protocols = load_keywords(cfg)
    try:
        metrics = evaluate_reports(preds, refs, kw, protocols)
    except ValueError as exc:
        raise StageFailure(str(exc)) from exc
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    mpath = cfg.output_dir / "metrics.json"
    rpath = cfg.output_dir / "radar.csv"
    metrics.write_json(mpath)
    metrics.write_radar_csv(rpath)
    write_manifest(cfg, "eval", sorted({refs_path, preds_path}), [mpath, rpath])
    return metrics.to_dict()


def run_all(cfg: PipelineConfig) -> dict[str, Any]:
    cfg.validate_paths()
    return {
        "ingest": stage_ingest(cfg),
        "curate": stage_curate(cfg),
        "tensorize": stage_tensorize(cfg),
        "features": stage_features(cfg),
        "targets": stage_targets(cfg),
        "eval": stage_eval(cfg),
    }
