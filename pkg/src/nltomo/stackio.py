"""File formats: stack directories, flat rasters, point clouds, footprints, reports, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .geo import CityHistogram, Footprint, GeoError, StructureReport, TomoPointCloud, load_footprints_obj
from .nlfilter import FilteredInterferogram, InterferometricStack

PLANES = ("g1_re", "g1_im", "g2_re", "g2_im")
FILTERED_PLANES = ("psi", "mu", "sigma2", "looks")
POINT_COLUMNS = ("east", "north", "height", "amplitude", "layer")


class StackFormatError(ValueError):
    """Malformed or truncated stack directory."""


def fmt(x) -> str:
    """Six significant digits, the text format of every float output."""
    return f"{float(x):.6g}"


# --------------------------------------------------------------------------
# Flat little-endian float32 rasters
# --------------------------------------------------------------------------

def write_plane(path, values) -> None:
    np.ascontiguousarray(values, dtype="<f4").tofile(path)


def read_plane(path, shape) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise StackFormatError(f"missing raster {path.name}")
    expected = int(np.prod(shape)) * 4
    size = path.stat().st_size
    if size != expected:
        raise StackFormatError(f"{path.name}: {size} bytes, expected {expected} for shape {tuple(shape)}")
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(float)


def write_int8(path, values) -> None:
    np.ascontiguousarray(values, dtype=np.int8).tofile(path)


def read_int8(path, shape) -> np.ndarray:
    path = Path(path)
    expected = int(np.prod(shape))
    if not path.is_file() or path.stat().st_size != expected:
        raise StackFormatError(f"{path.name}: expected {expected} int8 values")
    return np.fromfile(path, dtype=np.int8).reshape(shape)


def _read_meta(directory: Path, kind: str) -> dict:
    mp = directory / "meta.json"
    if not mp.is_file():
        raise StackFormatError(f"{directory} has no meta.json")
    try:
        meta = json.loads(mp.read_text())
        rows, cols, n = int(meta["rows"]), int(meta["cols"]), int(meta["n"])
    except (ValueError, KeyError, TypeError) as exc:
        raise StackFormatError(f"bad meta.json in {directory}: {exc}") from None
    if meta.get("kind", "stack") != kind:
        raise StackFormatError(f"{directory} holds '{meta.get('kind')}', expected '{kind}'")
    if rows < 1 or cols < 1 or n < 1:
        raise StackFormatError("meta.json dimensions must be positive")
    return meta


# --------------------------------------------------------------------------
# Stacks
# --------------------------------------------------------------------------

def write_stack(stack: InterferometricStack, directory, geometry: dict | str | None = None,
                extra: dict | None = None) -> list[Path]:
    """Write ``meta.json`` and four float32 planes per acquisition; returns the files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols = stack.shape
    meta = {"kind": "stack", "rows": rows, "cols": cols, "n": stack.n,
            "pixel_spacing": list(stack.pixel_spacing), "dtype": "float32-le"}
    if geometry is not None:
        meta["geometry"] = geometry
    meta.update(extra or {})
    files = [d / "meta.json"]
    files[0].write_text(json.dumps(meta, indent=2))
    for n in range(stack.n):
        for name, plane in zip(PLANES, (stack.g1[n].real, stack.g1[n].imag,
                                        stack.g2[n].real, stack.g2[n].imag)):
            p = d / f"{name}_{n}.bin"
            write_plane(p, plane)
            files.append(p)
    return files


def read_stack(directory) -> tuple[InterferometricStack, dict]:
    d = Path(directory)
    meta = _read_meta(d, "stack")
    shape = (meta["rows"], meta["cols"])
    g1, g2 = [], []
    for n in range(meta["n"]):
        re1, im1, re2, im2 = (read_plane(d / f"{name}_{n}.bin", shape) for name in PLANES)
        g1.append(re1 + 1j * im1)
        g2.append(re2 + 1j * im2)
    spacing = tuple(meta.get("pixel_spacing", (2.17, 1.36)))
    try:
        stack = InterferometricStack(np.array(g1), np.array(g2), spacing)
    except ValueError as exc:
        raise StackFormatError(str(exc)) from None
    return stack, meta


def write_filtered(filtered: list[FilteredInterferogram], directory, extra: dict | None = None) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols = filtered[0].psi.shape
    meta = {"kind": "filtered", "rows": rows, "cols": cols, "n": len(filtered), "dtype": "float32-le"}
    meta.update(extra or {})
    files = [d / "meta.json"]
    files[0].write_text(json.dumps(meta, indent=2))
    for n, f in enumerate(filtered):
        for name, plane in zip(FILTERED_PLANES, (f.psi, f.mu, f.sigma2, f.effective_looks)):
            p = d / f"{name}_{n}.bin"
            write_plane(p, plane)
            files.append(p)
    return files


def read_filtered(directory) -> tuple[list[FilteredInterferogram], dict]:
    d = Path(directory)
    meta = _read_meta(d, "filtered")
    shape = (meta["rows"], meta["cols"])
    out = []
    for n in range(meta["n"]):
        psi, mu, s2, looks = (read_plane(d / f"{name}_{n}.bin", shape) for name in FILTERED_PLANES)
        out.append(FilteredInterferogram(psi, mu, s2, looks))
    return out, meta


# --------------------------------------------------------------------------
# Point clouds, footprints, reports
# --------------------------------------------------------------------------

def write_points(cloud: TomoPointCloud, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(POINT_COLUMNS)
        for e, n, h, a, t in zip(cloud.east, cloud.north, cloud.height, cloud.amplitude, cloud.layer):
            w.writerow((fmt(e), fmt(n), fmt(h), fmt(a), t))


def read_points(path) -> TomoPointCloud:
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        if r.fieldnames is None or tuple(r.fieldnames) != POINT_COLUMNS:
            raise GeoError(f"point CSV header must be {','.join(POINT_COLUMNS)}")
        rows = list(r)
    if not rows:
        return TomoPointCloud(np.zeros(0), np.zeros(0), np.zeros(0))
    col = lambda k: np.array([float(x[k]) for x in rows])
    return TomoPointCloud(col("east"), col("north"), col("height"), col("amplitude"),
                          np.array([x["layer"] for x in rows], dtype=object))


def load_footprints(path) -> list[Footprint]:
    with open(path) as f:
        return load_footprints_obj(json.load(f))


def save_footprints(footprints, path) -> None:
    doc = [{"id": fp.id, "ring": [list(map(float, p)) for p in fp.ring],
            "reference_height": None if not math.isfinite(fp.reference_height) else fp.reference_height}
           for fp in footprints]
    Path(path).write_text(json.dumps(doc, indent=2))


def load_reference(path) -> dict:
    """Reference relative heights: JSON object id -> height, or CSV with id,height."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        doc = json.loads(p.read_text())
        if not isinstance(doc, dict):
            raise GeoError("reference JSON must map structure id to height")
        return {str(k): float(v) for k, v in doc.items()}
    with open(p, newline="") as f:
        return {row["id"]: float(row["height"]) for row in csv.DictReader(f)}


REPORT_COLUMNS = ("id", "top_min", "top_max", "top_std", "top_mean", "bottom_min", "bottom_max",
                  "bottom_std", "bottom_mean", "relative_height", "reference_height",
                  "abs_height_difference")


def write_reports(reports: list[StructureReport], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            t, b = r.top, r.bottom
            w.writerow([r.id] + [fmt(v) for v in (t.min, t.max, t.std, t.mean, b.min, b.max, b.std, b.mean,
                                                  r.relative_height, r.reference_height,
                                                  r.abs_height_difference)])


def summary_dict(h: CityHistogram, truncation: float) -> dict:
    return {"n_structures": h.n_total, "n_retained": h.n_retained, "truncation_m": truncation,
            "within_1m": h.frac_1m, "within_2m": h.frac_2m, "within_15m": h.frac_15m,
            "std_m": h.std, "bin_edges_m": h.edges.tolist(), "counts": h.counts.tolist()}


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration.

    The output location is left out: it does not change what is computed.
    """
    body = {k: v for k, v in config.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(directory, command: str, config: dict, seed, files, status: str = "ok",
                   error: dict | None = None) -> Path:
    d = Path(directory)
    entries = {}
    for p in files:
        p = Path(p)
        if p.is_file():
            entries[str(p.relative_to(d))] = file_digest(p)
    doc = {"command": command, "status": status, "config_hash": config_hash(config), "seed": seed,
           "config": config, "files": dict(sorted(entries.items()))}
    if error:
        doc["error"] = error
    out = d / "manifest.json"
    out.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return out
