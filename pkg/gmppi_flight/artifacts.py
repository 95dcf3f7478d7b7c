"""File-backed storage for run logs, metrics, aggregates, diagnostics and depth dumps."""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .core import FloatArray, Pose
from .forest import Forest
from .gmppi import IterationDiagnostics
from .perception import CameraModel, DepthFrame
from .simulator import LOG_COLUMNS, RunLog, RunResult, SweepOutcome

logger = logging.getLogger(__name__)

AGGREGATE_COLUMNS = ("seed", "speed", "success", "pos_rmse", "heading_rmse", "max_v", "max_a")
TRACK_COLUMNS = ("controller", *AGGREGATE_COLUMNS)


def write_json_atomic(path: Path, payload: Any) -> None:
    """Write JSON to a sibling temp file and move it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
        os.replace(tmp, path)
    except Exception:
        Path(tmp).unlink(missing_ok=True)
        raise


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def write_run_log(path: Path, log: RunLog) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            np.savetxt(handle, log.table(), delimiter=",", header=",".join(LOG_COLUMNS), comments="", fmt="%.9g")
        os.replace(tmp, path)
    except Exception:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_run_log(path: Path) -> RunLog:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RunLog.from_table(table)


def metrics_record(result: RunResult) -> Dict[str, Any]:
    m = result.metrics
    return {
        "success": m.success,
        "failure": m.failure,
        "pos_rmse": m.pos_rmse,
        "heading_rmse": m.heading_rmse,
        "max_v": m.max_speed,
        "max_a": m.max_accel,
        "min_clearance": _finite_or_none(m.min_clearance),
        "final_distance": m.final_distance,
        "iterations": m.iterations,
    }


def aggregate_rows(outcomes: Sequence[SweepOutcome], with_controller: bool = False) -> List[Dict[str, Any]]:
    """One row per finished sweep job; keys are ``(seed, speed)`` or ``(controller, seed, speed)``."""
    rows: List[Dict[str, Any]] = []
    for outcome in outcomes:
        if outcome.result is None:
            continue
        key = list(outcome.key)
        row: Dict[str, Any] = {}
        if with_controller:
            row["controller"] = key.pop(0)
        row["seed"], row["speed"] = key[0], key[1]
        m = outcome.result.metrics
        row.update(
            success=int(m.success),
            pos_rmse=m.pos_rmse,
            heading_rmse=m.heading_rmse,
            max_v=m.max_speed,
            max_a=m.max_accel,
        )
        rows.append(row)
    return rows


def write_aggregate(path: Path, rows: Iterable[Mapping[str, Any]], with_controller: bool = False) -> int:
    columns = TRACK_COLUMNS if with_controller else AGGREGATE_COLUMNS
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})
            count += 1
    return count


def write_diagnostics(path: Path, records: Iterable[IterationDiagnostics]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        for record in records:
            handle.write(json.dumps(record.to_record(), default=_json_default))
            handle.write("\n")


def write_pfm(path: Path, image: FloatArray) -> None:
    """Single-channel little-endian PFM; rows are stored bottom to top."""
    data = np.asarray(image, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"PFM depth dumps need a 2-D image, got shape {data.shape}")
    height, width = data.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        handle.write(np.flipud(data).tobytes())


def read_pfm(path: Path) -> FloatArray:
    with path.open("rb") as handle:
        header = handle.readline().strip()
        if header != b"Pf":
            raise ValueError(f"{path} is not a single-channel PFM file")
        width, height = (int(v) for v in handle.readline().split())
        scale = float(handle.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(handle.read(), dtype=dtype, count=width * height)
    return np.flipud(data.reshape(height, width)).astype(np.float64)


def camera_record(camera: CameraModel) -> Dict[str, Any]:
    return {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
        "tilt_deg": camera.tilt_deg,
        "mount_translation": list(camera.mount_translation),
        "K": camera.intrinsic_matrix().tolist(),
    }


def dump_depth_frame(path: Path, frame: DepthFrame) -> Path:
    """Write the depth image as PFM plus a JSON sidecar with the capture pose and intrinsics."""
    write_pfm(path, frame.depths)
    sidecar = path.with_suffix(".json")
    write_json_atomic(
        sidecar,
        {
            "camera": camera_record(frame.camera),
            "position": frame.capture_pose.position,
            "attitude": frame.capture_pose.attitude,
            "range_m": frame.range_m,
        },
    )
    return sidecar


def load_depth_frame(path: Path) -> DepthFrame:
    meta = json.loads(path.with_suffix(".json").read_text())
    cam = meta["camera"]
    camera = CameraModel(
        fx=cam["fx"],
        fy=cam["fy"],
        cx=cam["cx"],
        cy=cam["cy"],
        width=cam["width"],
        height=cam["height"],
        tilt_deg=cam["tilt_deg"],
        mount_translation=tuple(cam["mount_translation"]),
    )
    pose = Pose(np.asarray(meta["position"], dtype=np.float64), np.asarray(meta["attitude"], dtype=np.float64))
    return DepthFrame(read_pfm(path), pose, camera, meta["range_m"])


class ArtifactStore:
    """Lays out one command's outputs under a single directory."""

    def __init__(self, root: Path, config_dump: Optional[Mapping[str, Any]] = None) -> None:
        self.root = Path(root)
        self.config_dump = dict(config_dump or {})
        self.root.mkdir(parents=True, exist_ok=True)
        logger.info("Writing results to %s", self.root)

    def run_stem(self, *parts: Any) -> Path:
        return self.root / "runs" / "_".join(str(p) for p in parts)

    def save_run(
        self, result: RunResult, *parts: Any, seed: Optional[int] = None, with_diagnostics: bool = False
    ) -> Path:
        stem = self.run_stem(*parts)
        write_run_log(stem.parent / f"{stem.name}.csv", result.log)
        payload = {"metrics": metrics_record(result), "seed": seed, "config": self.config_dump}
        write_json_atomic(stem.parent / f"{stem.name}.json", payload)
        if with_diagnostics and result.diagnostics:
            write_diagnostics(stem.parent / f"{stem.name}.diagnostics.jsonl", result.diagnostics)
        logger.debug("Saved run %s", stem.name)
        return stem

    def save_forest(self, forest: Forest, seed: int) -> Path:
        path = self.root / "forests" / f"forest_{seed}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        forest.save(path)
        return path

    def save_aggregate(self, name: str, outcomes: Sequence[SweepOutcome], with_controller: bool = False) -> Path:
        path = self.root / name
        count = write_aggregate(path, aggregate_rows(outcomes, with_controller), with_controller)
        logger.info("Wrote %d aggregate rows to %s", count, path)
        return path

    def save_summary(self, name: str, payload: Mapping[str, Any]) -> Path:
        path = self.root / name
        write_json_atomic(path, {**payload, "config": self.config_dump})
        return path

    def save_errors(self, outcomes: Sequence[SweepOutcome]) -> Optional[Path]:
        failed = [{"key": list(o.key), "error": o.error} for o in outcomes if o.error is not None]
        if not failed:
            return None
        path = self.root / "errors.json"
        write_json_atomic(path, failed)
        logger.error("%d sweep jobs raised; see %s", len(failed), path)
        return path
