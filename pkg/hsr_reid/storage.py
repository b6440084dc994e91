"""
Artifact storage
Binary embedding files, metadata/split/label CSVs, model checkpoints and JSON reports
"""

import csv
import logging
import struct
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson

from .core import EmbeddingSet, PseudoLabels
from .errors import FormatError
from .evaluation import EvalSplit
from .icm import MutualPairs
from .model import ProjectorModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EMBEDDING_MAGIC = b"HSRE"
EMBEDDING_VERSION = 1
# magic, version, N, D_raw, P
_EMBEDDING_HEADER = struct.Struct("<4sIQII")

CHECKPOINT_MAGIC = b"HSRM"
CHECKPOINT_FORMAT = "hsr-projector"
CHECKPOINT_VERSION = 1
# magic, version, d_out, d_in
_CHECKPOINT_HEADER = struct.Struct("<4sIII")

METADATA_COLUMNS = ["index", "camera", "gt_id"]
SPLIT_COLUMNS = ["index", "role"]


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


def _format_float(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


# ==================== Embeddings ====================

def save_embeddings(dataset: EmbeddingSet, data_path: PathLike, metadata_path: PathLike) -> None:
    """Write the HSRE binary file and its index,camera,gt_id metadata CSV"""
    n, d_raw = dataset.raw_global.shape
    with open(data_path, "wb") as f:
        f.write(_EMBEDDING_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, n, d_raw, dataset.num_parts))
        f.write(dataset.raw_global.astype("<f4").tobytes(order="C"))
        for part in dataset.raw_parts:
            f.write(part.astype("<f4").tobytes(order="C"))

    with open(metadata_path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(METADATA_COLUMNS)
        for i in range(n):
            gt = "" if dataset.gt_ids is None else int(dataset.gt_ids[i])
            writer.writerow([i, int(dataset.cameras[i]), gt])
    logger.debug("Embeddings saved", extra={"path": str(data_path), "num_samples": n})


def _read_metadata(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METADATA_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(METADATA_COLUMNS)}, got {header}")
        cameras: List[int] = []
        gt: List[Optional[int]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise FormatError(f"{path}:{line_no}: expected 3 columns, got {len(row)}")
            try:
                index = int(row[0])
                cameras.append(int(row[1]))
                gt.append(int(row[2]) if row[2].strip() else None)
            except ValueError as e:
                raise FormatError(f"{path}:{line_no}: {e}") from e
            if index != line_no - 2:
                raise FormatError(f"{path}:{line_no}: index {index} out of order")

    gt_ids = None
    if gt and all(g is not None for g in gt):
        gt_ids = np.asarray(gt, dtype=np.int64)
    elif any(g is not None for g in gt):
        logger.warning(f"{path}: gt_id column partially empty, ground truth ignored")
    return np.asarray(cameras, dtype=np.int64), gt_ids


def load_embeddings(data_path: PathLike, metadata_path: PathLike) -> EmbeddingSet:
    """Read an HSRE file plus metadata CSV back into an EmbeddingSet

    Raises:
        FormatError: bad magic/version, truncated payload or N mismatch
    """
    raw = Path(data_path).read_bytes()
    if len(raw) < _EMBEDDING_HEADER.size:
        raise FormatError(f"{data_path}: file too short for an HSRE header")
    magic, version, n, d_raw, num_parts = _EMBEDDING_HEADER.unpack_from(raw, 0)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{data_path}: bad magic {magic!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{data_path}: unsupported version {version}")
    if num_parts < 1 or d_raw % num_parts:
        raise FormatError(f"{data_path}: D_raw={d_raw} not divisible into {num_parts} parts")

    d_part = d_raw // num_parts
    expected = _EMBEDDING_HEADER.size + 4 * (n * d_raw + num_parts * n * d_part)
    if len(raw) != expected:
        raise FormatError(f"{data_path}: expected {expected} bytes, found {len(raw)}")

    offset = _EMBEDDING_HEADER.size
    raw_global = np.frombuffer(raw, dtype="<f4", count=n * d_raw, offset=offset).reshape(n, d_raw)
    offset += 4 * n * d_raw
    parts = []
    for _ in range(num_parts):
        block = np.frombuffer(raw, dtype="<f4", count=n * d_part, offset=offset).reshape(n, d_part)
        parts.append(block)
        offset += 4 * n * d_part

    cameras, gt_ids = _read_metadata(metadata_path)
    if cameras.shape[0] != n:
        raise FormatError(f"{metadata_path}: {cameras.shape[0]} rows but {data_path} holds N={n}")
    try:
        return EmbeddingSet(
            raw_global=raw_global,
            raw_parts=tuple(parts),
            cameras=cameras,
            gt_ids=gt_ids,
        )
    except ValueError as e:
        raise FormatError(f"{data_path}: {e}") from e


# ==================== Split / labels / pairs ====================

def save_split(split: EvalSplit, path: PathLike) -> None:
    """index,role rows for every query and gallery sample, ascending index"""
    roles = split.roles()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(SPLIT_COLUMNS)
        for i in np.union1d(split.query, split.gallery).tolist():
            writer.writerow([i, roles[i]])


def load_split(path: PathLike, dataset: EmbeddingSet) -> EvalSplit:
    """Rebuild an EvalSplit against the dataset's gt ids and cameras"""
    if not dataset.has_gt:
        raise FormatError("Evaluation split needs a dataset with ground-truth ids")
    query: List[int] = []
    gallery: List[int] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SPLIT_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(SPLIT_COLUMNS)}, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in ("query", "gallery"):
                raise FormatError(f"{path}:{line_no}: expected index,query|gallery")
            try:
                index = int(row[0])
            except ValueError as e:
                raise FormatError(f"{path}:{line_no}: {e}") from e
            (query if row[1] == "query" else gallery).append(index)
    try:
        return EvalSplit(query=query, gallery=gallery, gt_ids=dataset.gt_ids, cameras=dataset.cameras)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def save_labels(path: PathLike, columns: Sequence[Tuple[str, PseudoLabels]]) -> None:
    """index plus one column per named labelling"""
    names = [name for name, _ in columns]
    arrays = [labels.labels for _, labels in columns]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(["index", *names])
        for i in range(len(arrays[0]) if arrays else 0):
            writer.writerow([i, *(int(a[i]) for a in arrays)])


def save_pairs(path: PathLike, pairs: MutualPairs) -> None:
    """anchor,partner rows in ascending order"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(["anchor", "partner"])
        for i, j in pairs.sorted_pairs():
            writer.writerow([i, j])


# ==================== Checkpoints ====================

def save_checkpoint(model: ProjectorModel, path: PathLike, extra: Optional[dict] = None) -> None:
    """orjson header line, then HSRM + u32 version, d_out, d_in, weight, bias"""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d_in": model.d_in,
        "d_out": model.d_out,
        "seed": model.seed,
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write(orjson.dumps(header, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY))
        f.write(b"\n")
        f.write(_CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.d_out, model.d_in))
        f.write(model.weight.astype("<f4").tobytes(order="C"))
        f.write(model.bias.astype("<f4").tobytes(order="C"))
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: PathLike) -> Tuple[ProjectorModel, dict]:
    """Projector and header dict from a checkpoint file

    Raises:
        FormatError: malformed header or payload
    """
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing checkpoint header line")
    try:
        header = orjson.loads(raw[:newline])
    except orjson.JSONDecodeError as e:
        raise FormatError(f"{path}: header is not JSON ({e})") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not an HSR projector checkpoint")

    body = raw[newline + 1:]
    if len(body) < _CHECKPOINT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint payload")
    magic, version, d_out, d_in = _CHECKPOINT_HEADER.unpack_from(body, 0)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: bad checkpoint magic/version")
    expected = _CHECKPOINT_HEADER.size + 4 * (d_out * d_in + d_out)
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(body)}")

    offset = _CHECKPOINT_HEADER.size
    weight = np.frombuffer(body, dtype="<f4", count=d_out * d_in, offset=offset).reshape(d_out, d_in)
    bias = np.frombuffer(body, dtype="<f4", count=d_out, offset=offset + 4 * d_out * d_in)
    return ProjectorModel(weight=weight, bias=bias, seed=header.get("seed")), header


# ==================== Reports ====================

def save_history(path: PathLike, records: Iterable[Any], columns: Sequence[str]) -> None:
    """One CSV row per record from record.to_dict(); None becomes an empty cell"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(columns)
        for record in records:
            row = record.to_dict()
            writer.writerow([
                value if isinstance(value, (int, str)) and not isinstance(value, bool)
                else _format_float(value)
                for value in (row.get(c) for c in columns)
            ])


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_float(v) if isinstance(v, float) else v for v in row])


def write_json_report(path: PathLike, payload: Any) -> None:
    """Pretty, key-sorted JSON via orjson; numpy values are serialised natively"""
    options = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    Path(path).write_bytes(orjson.dumps(payload, option=options, default=str) + b"\n")


__all__ = [
    "save_embeddings",
    "load_embeddings",
    "save_split",
    "load_split",
    "save_labels",
    "save_pairs",
    "save_checkpoint",
    "load_checkpoint",
    "save_history",
    "write_csv",
    "write_json_report",
]
