"""Command-line interface: one subcommand per processing stage.

Every subcommand reads an optional JSON configuration (``--config``) whose
values are overridden by explicit flags, writes only inside the output
directory and records a ``manifest.json`` with the configuration hash and
seed. Exit codes: 0 success, 2 invalid configuration, 3 stage failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .city import CityConfig, render_city
from .crlb import crlb_single, db_to_linear
from .fusion import FusionParams
from .geo import GeocodeFrame
from .geometry import MUNICH_GEOMETRY, AcquisitionGeometry, load_geometry, rayleigh_resolution
from .modelsel import CRITERIA, K_MAX
from .nlfilter import FilterParams
from .pipeline import (PipelineParams, StageError, cloud_from_layers, compare, filtered_arrays,
                       fuse_layers, run_filter, run_inversion, run_pipeline)
from .scatterers import ScattererSpec
from .simulation import SimulationConfig, double_scene, run_monte_carlo
from .stackio import (StackFormatError, fmt, load_footprints, load_reference, read_filtered, read_int8,
                      read_plane, read_points, read_stack, save_footprints, summary_dict, write_filtered,
                      write_int8, write_manifest, write_plane, write_points, write_reports, write_stack)

log = logging.getLogger("nltomo")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

DEFAULTS = {
    "seed": 0,
    "filter": {"patch": 7, "search": 21, "bandwidth": None, "gamma": 1.0, "weights": "single",
               "coherence": "modulus", "skip": False},
    "inversion": {"estimator": "two-stage", "lambda_frac": 0.15, "peak_ratio": 3.0,
                  "grid_span": [-1.5, 3.0], "grid_step": None, "criterion": "bic",
                  "signal_gate": 0.5, "cs_tol": 1e-6},
    "fusion": {"weight": "tukey", "c_r": 4.685, "radius": 3, "layers": "selected", "enabled": True},
    "compare": {"footprints": None, "reference": None, "truncate": 15.0, "cell_size": 2.0,
                "ring_cells": 2.0},
    "frame": None,
}
# keys holding file paths; relative values in a config file resolve against its directory
PATH_KEYS = ("stack", "geometry", "input", "points", "compare.footprints", "compare.reference")
WEIGHTS = {"tukey": "tukey", "tdist": "t-dist", "t-dist": "t-dist"}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def _get(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _set(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key '{part}' must be an object")
    node[parts[-1]] = value


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(args) -> dict:
    """Defaults, then the JSON file, then explicit flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        base = path.resolve().parent
        for key in PATH_KEYS:
            v = _get(doc, key)
            if isinstance(v, str):
                _set(doc, key, str((base / v).resolve()))
        if isinstance(doc.get("output"), str):
            doc["output"] = str((base / doc["output"]).resolve())
        cfg = _merge(cfg, doc)
    for dest, value in vars(args).items():
        if "__" not in dest or value is None:
            continue
        # a trailing "__" marks a top-level key ("output__" -> "output")
        key = dest[:-2] if dest.endswith("__") else dest.replace("__", ".")
        if key in PATH_KEYS or key == "output":
            value = str(Path(value).resolve())
        _set(cfg, key, value)
    return cfg


def _require_path(cfg: dict, key: str, kind: str = "any") -> Path:
    v = _get(cfg, key)
    if not v:
        raise ConfigError(f"'{key}' is required")
    p = Path(v)
    ok = p.is_dir() if kind == "dir" else p.is_file() if kind == "file" else p.exists()
    if not ok:
        raise ConfigError(f"'{key}' path {p} does not exist")
    return p


def _output_dir(cfg: dict) -> Path:
    v = cfg.get("output")
    if not v:
        raise ConfigError("an output directory is required (--output or 'output' in the config)")
    out = Path(v)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def pipeline_params(cfg: dict) -> PipelineParams:
    f, inv, fu = cfg["filter"], cfg["inversion"], cfg["fusion"]
    try:
        weight = WEIGHTS[fu["weight"]]
    except KeyError:
        raise ConfigError(f"unknown fusion weight {fu['weight']!r}") from None
    if inv["estimator"] not in ("svd", "cs", "two-stage"):
        raise ConfigError(f"unknown estimator {inv['estimator']!r}")
    if inv["criterion"] not in CRITERIA:
        raise ConfigError(f"unknown criterion {inv['criterion']!r}")
    span = tuple(float(x) for x in inv["grid_span"])
    if len(span) != 2 or not span[0] < span[1]:
        raise ConfigError("grid_span must be two increasing values")
    if inv["grid_step"] is not None and not float(inv["grid_step"]) > 0:
        raise ConfigError("grid_step must be positive")
    try:
        return PipelineParams(
            filter=FilterParams(int(f["patch"]), int(f["search"]), f["bandwidth"], float(f["gamma"]),
                                f["coherence"], f["weights"]),
            skip_filter=bool(f["skip"]),
            estimator=inv["estimator"], lambda_frac=float(inv["lambda_frac"]),
            peak_ratio=float(inv["peak_ratio"]), grid_span=span,
            grid_step=None if inv["grid_step"] is None else float(inv["grid_step"]),
            criterion=inv["criterion"],
            fusion=FusionParams(weight, float(fu["c_r"]), int(fu["radius"])),
            fuse=bool(fu["enabled"]), cs_tol=float(inv["cs_tol"]),
            signal_gate=float(inv["signal_gate"]), layers=fu["layers"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _geometry(cfg: dict, meta: dict | None = None) -> AcquisitionGeometry:
    g = cfg.get("geometry")
    try:
        if isinstance(g, str):
            if not Path(g).is_file():
                raise ConfigError(f"geometry file {g} does not exist")
            return load_geometry(g)
        if isinstance(g, dict):
            return AcquisitionGeometry.from_dict(g)
        if meta and isinstance(meta.get("geometry"), dict):
            return AcquisitionGeometry.from_dict(meta["geometry"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from None
    raise ConfigError("no geometry given (config 'geometry' or stack meta.json)")


def _frame(cfg: dict, geom: AcquisitionGeometry, meta: dict) -> GeocodeFrame:
    fr = cfg.get("frame") or meta.get("frame")
    if not fr or fr.get("anchor") is None:
        raise ConfigError("geocoding needs 'frame': {'anchor': [east, north, height]}")
    try:
        return GeocodeFrame.from_geometry(geom, fr["anchor"], float(fr.get("heading_deg", 0.0)),
                                          tuple(meta.get("pixel_spacing", (2.17, 1.36))))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _carry(meta: dict, geom: AcquisitionGeometry) -> dict:
    """Metadata passed on from one stage's output to the next."""
    out = {"geometry": geom.to_dict(), "pixel_spacing": meta.get("pixel_spacing", [2.17, 1.36])}
    if meta.get("frame"):
        out["frame"] = meta["frame"]
    return out


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_crlb(cfg: dict, args) -> int:
    geom = _geometry(cfg) if cfg.get("geometry") else MUNICH_GEOMETRY
    values = args.n_snr_db if args.n_snr_db else list(range(0, 31, 5))
    rho = rayleigh_resolution(geom)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("n_snr_db", "sigma_s_m", "sigma_norm"))
    for x in values:
        # the bound depends on N and SNR only through their product
        s = crlb_single(geom, db_to_linear(float(x)), 1)
        w.writerow((fmt(x), fmt(s), fmt(s / rho)))
    return EXIT_OK


def _simulation_cells(sim: dict):
    Ns = [int(n) for n in _listify(sim.get("n_acquisitions", 5))]
    kappas = _listify(sim.get("kappa")) if sim.get("kappa") is not None else [None]
    for est in _listify(sim.get("estimator", "svd")):
        for N in Ns:
            if sim.get("n_snr_db") is not None:
                snrs = [(float(x) - 10 * math.log10(N), float(x)) for x in _listify(sim["n_snr_db"])]
            else:
                snrs = [(float(x), float(x) + 10 * math.log10(N)) for x in _listify(sim.get("snr_db", 10.0))]
            for snr_db, nsnr in snrs:
                for kappa in kappas:
                    yield est, N, snr_db, nsnr, kappa


def cmd_simulate(cfg: dict, args) -> int:
    out = _output_dir(cfg)
    seed = int(cfg["seed"])
    if args.city or cfg.get("city") is not None:
        return _simulate_city(cfg, out, seed)
    sim = cfg.get("simulation")
    if not isinstance(sim, dict):
        raise ConfigError("simulate needs a 'simulation' object (or --city)")
    if args.realizations is not None:
        sim["n_realizations"] = args.realizations
    if args.draws is not None:
        sim["n_baseline_draws"] = args.draws
    if args.estimator is not None:
        sim["estimator"] = args.estimator
    try:
        base = dict(n_realizations=int(sim.get("n_realizations", 1000)),
                    n_baseline_draws=int(sim.get("n_baseline_draws", 20)),
                    baseline_span=float(sim.get("baseline_span", MUNICH_GEOMETRY.elevation_aperture)),
                    criterion=sim.get("criterion", "bic"), window=float(sim.get("window", 0.5)),
                    random_phase=bool(sim.get("random_phase", True)), rng_seed=seed)
        if cfg.get("geometry"):
            base["base_geometry"] = _geometry(cfg)
        explicit = tuple(ScattererSpec(float(s["elevation"]), float(s.get("amplitude", 1.0)),
                                       float(s.get("phase", 0.0))) for s in sim.get("scatterers", []))
        cells = list(_simulation_cells(sim))
        configs = []
        for est, N, snr_db, nsnr, kappa in cells:
            if kappa is not None:
                scat, unit = double_scene(float(kappa)), "rayleigh"
            elif explicit:
                scat, unit = explicit, sim.get("elevation_unit", "m")
            else:
                scat, unit = (ScattererSpec(0.0, 1.0, 0.0),), "m"
            configs.append(SimulationConfig(scat, snr_db=snr_db, n_acquisitions=N, estimator=est,
                                            elevation_unit=unit, **base))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from None

    q = max(len(c.scatterers) for c in configs)
    header = ["estimator", "n", "snr_db", "n_snr_db", "kappa"]
    for i in range(1, q + 1):
        header += [f"bias_{i}_m", f"std_{i}_m", f"normalized_std_{i}"]
    header += ["detection_rate", "crlb_m", "crlb_norm", "rayleigh_m", "samples"]
    path = out / "monte_carlo.csv"
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for (est, N, snr_db, nsnr, kappa), c in zip(cells, configs):
                r = run_monte_carlo(c, threads=args.threads)
                row = [est, N, fmt(snr_db), fmt(nsnr), "" if kappa is None else fmt(kappa)]
                for i in range(q):
                    if i < len(r.bias):
                        row += [fmt(r.bias[i]), fmt(r.std[i]), fmt(r.normalized_std[i])]
                    else:
                        row += ["", "", ""]
                row += [fmt(r.detection_rate), fmt(r.crlb_reference.sigma_s_double),
                        fmt(r.crlb_reference.normalized), fmt(r.rayleigh), r.n_samples]
                w.writerow(row)
    except Exception as exc:
        write_manifest(out, "simulate", cfg, seed, [path], "failed", {"stage": "simulate", "message": str(exc)})
        raise StageError("simulate", exc) from exc
    write_manifest(out, "simulate", cfg, seed, [path])
    print(f"wrote {len(cells)} cells to {path}")
    return EXIT_OK


def _simulate_city(cfg: dict, out: Path, seed: int) -> int:
    city = dict(cfg.get("city") or {})
    city["seed"] = seed
    try:
        cc = CityConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in city.items()})
        if cfg.get("geometry"):
            from dataclasses import replace
            cc = replace(cc, geometry=_geometry(cfg))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid city config: {exc}") from None
    scene = render_city(cc)
    fr = scene.frame
    files = write_stack(scene.stack, out / "stack", scene.geometry.to_dict(),
                        {"frame": {"anchor": list(fr.anchor), "heading_deg": fr.heading_deg}})
    fp = out / "footprints.json"
    save_footprints(scene.footprints, fp)
    write_manifest(out, "simulate", cfg, seed, files + [fp])
    print(f"rendered {len(scene.buildings)} buildings into a {scene.stack.shape[0]}x"
          f"{scene.stack.shape[1]} stack of {scene.stack.n} interferograms")
    return EXIT_OK


def _load_stack(cfg: dict):
    path = _require_path(cfg, "stack", "dir")
    try:
        return read_stack(path)
    except StackFormatError as exc:
        raise StageError("load", exc) from exc


def cmd_filter(cfg: dict, args) -> int:
    params = pipeline_params(cfg)
    stack, meta = _load_stack(cfg)
    geom = _geometry(cfg, meta) if (cfg.get("geometry") or meta.get("geometry")) else None
    out = _output_dir(cfg)
    try:
        filt = run_filter(stack, params, args.threads)
    except Exception as exc:
        raise StageError("filter", exc) from exc
    carry = _carry(meta, geom) if geom else {"pixel_spacing": list(stack.pixel_spacing)}
    files = write_filtered(filt, out, carry)
    write_manifest(out, "filter", cfg, cfg["seed"], files)
    looks = np.mean([np.median(f.effective_looks) for f in filt])
    print(f"filtered {len(filt)} interferograms, median effective looks {fmt(looks)}")
    return EXIT_OK


def _write_scatterers(out: Path, sel: dict, carry: dict) -> list[Path]:
    k_hat = sel["k_hat"]
    rows, cols = k_hat.shape
    meta = {"kind": "scatterers", "rows": rows, "cols": cols, "n": K_MAX, **carry}
    files = [out / "meta.json"]
    files[0].write_text(json.dumps(meta, indent=2))
    for name, plane in (("elevation.bin", sel["elevation"]), ("amplitude.bin", np.abs(sel["amplitude"])),
                        ("order1.bin", sel["orders"][..., 1, 0])):
        write_plane(out / name, plane)
        files.append(out / name)
    write_int8(out / "k_hat.int8", k_hat)
    files.append(out / "k_hat.int8")
    return files


def _read_scatterers(directory: Path):
    mp = directory / "meta.json"
    try:
        meta = json.loads(mp.read_text())
        if meta.get("kind") != "scatterers":
            raise StackFormatError(f"{directory} does not hold inversion output")
        shape = (int(meta["rows"]), int(meta["cols"]))
        k_hat = read_int8(directory / "k_hat.int8", shape)
        elev = read_plane(directory / "elevation.bin", shape + (K_MAX,))
        amp = read_plane(directory / "amplitude.bin", shape + (K_MAX,))
        order1 = read_plane(directory / "order1.bin", shape)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("load", exc) from exc
    orders = np.full(shape + (K_MAX + 1, K_MAX), np.nan)
    orders[..., 1, 0] = order1
    return meta, k_hat, elev, amp, orders


def cmd_invert(cfg: dict, args) -> int:
    params = pipeline_params(cfg)
    src = _require_path(cfg, "input", "dir")
    try:
        filt, meta = read_filtered(src)
    except StackFormatError as exc:
        raise StageError("load", exc) from exc
    geom = _geometry(cfg, meta)
    if geom.n != len(filt):
        raise ConfigError(f"geometry has {geom.n} baselines, input {len(filt)} interferograms")
    out = _output_dir(cfg)
    try:
        ifg, noise, signal = filtered_arrays(filt)
        k_hat, elev, amp, orders = run_inversion(ifg, noise, signal, geom, params, args.threads)
    except Exception as exc:
        raise StageError("invert", exc) from exc
    files = _write_scatterers(out, {"k_hat": k_hat, "elevation": elev, "amplitude": amp, "orders": orders},
                              _carry(meta, geom))
    write_manifest(out, "invert", cfg, cfg["seed"], files)
    counts = np.bincount(k_hat.ravel().astype(int), minlength=K_MAX + 1)
    print("pixels per order " + ", ".join(f"K={k}: {c}" for k, c in enumerate(counts)))
    return EXIT_OK


def cmd_fuse(cfg: dict, args) -> int:
    params = pipeline_params(cfg)
    src = _require_path(cfg, "input", "dir")
    meta, k_hat, elev, amp, orders = _read_scatterers(src)
    geom = _geometry(cfg, meta)
    frame = _frame(cfg, geom, meta)
    out = _output_dir(cfg)
    try:
        fused = fuse_layers(k_hat, elev, orders, params)
    except Exception as exc:
        raise StageError("fuse", exc) from exc
    try:
        cloud = cloud_from_layers(k_hat, fused, amp, frame)
    except Exception as exc:
        raise StageError("geocode", exc) from exc
    write_plane(out / "fused.bin", fused)
    write_points(cloud, out / "points.csv")
    (out / "meta.json").write_text(json.dumps({"kind": "fused", "rows": k_hat.shape[0],
                                               "cols": k_hat.shape[1], "n": K_MAX, **_carry(meta, geom)},
                                              indent=2))
    write_manifest(out, "fuse", cfg, cfg["seed"], [out / "fused.bin", out / "points.csv", out / "meta.json"])
    print(f"wrote {len(cloud)} points")
    return EXIT_OK


def _compare_outputs(cfg: dict, cloud, out: Path) -> list[Path]:
    c = cfg["compare"]
    fps = load_footprints(_require_path(cfg, "compare.footprints", "file"))
    ref = load_reference(_require_path(cfg, "compare.reference", "file")) if c.get("reference") else None
    fusion = pipeline_params(cfg).fusion
    res = compare(cloud, fps, float(c["cell_size"]), float(c["truncate"]), float(c["ring_cells"]),
                  fusion, ref)
    write_reports(res.reports, out / "reports.csv")
    summary = summary_dict(res.histogram, float(c["truncate"]))
    summary.update(excluded=res.excluded, skipped=res.skipped)
    summary = {k: (float(fmt(v)) if isinstance(v, float) else v) for k, v in summary.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    h = res.histogram
    print(f"structures {h.n_total}, retained {h.n_retained}, within 1 m {fmt(h.frac_1m)}, "
          f"within 2 m {fmt(h.frac_2m)}, std {fmt(h.std)} m")
    return [out / "reports.csv", out / "summary.json"]


def cmd_compare(cfg: dict, args) -> int:
    pts = _require_path(cfg, "points", "file")
    _require_path(cfg, "compare.footprints", "file")
    out = _output_dir(cfg)
    try:
        cloud = read_points(pts)
        files = _compare_outputs(cfg, cloud, out)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("compare", exc) from exc
    write_manifest(out, "compare", cfg, cfg["seed"], files)
    return EXIT_OK


def cmd_pipeline(cfg: dict, args) -> int:
    params = pipeline_params(cfg)
    if cfg["compare"].get("footprints"):
        _require_path(cfg, "compare.footprints", "file")
    out = _output_dir(cfg)
    files: list[Path] = []
    try:
        stack, meta = _load_stack(cfg)
    except StageError as exc:
        write_manifest(out, "pipeline", cfg, cfg["seed"], [], "failed",
                       {"stage": exc.stage, "message": str(exc.cause)})
        raise
    geom = _geometry(cfg, meta)
    frame = _frame(cfg, geom, meta)
    carry = _carry(meta, geom)

    def persist(stage, payload):
        if not args.save_intermediate:
            return
        if stage == "filter":
            files.extend(write_filtered(payload, out / "filtered", carry))
        elif stage == "select":
            (out / "scatterers").mkdir(exist_ok=True)
            files.extend(_write_scatterers(out / "scatterers", payload, carry))
        elif stage == "fuse":
            write_plane(out / "fused.bin", payload)
            files.append(out / "fused.bin")

    try:
        res = run_pipeline(stack, geom, frame, params, args.threads, persist)
    except StageError as exc:
        write_manifest(out, "pipeline", cfg, cfg["seed"], files, "failed",
                       {"stage": exc.stage, "message": str(exc.cause)})
        raise
    write_points(res.cloud, out / "points.csv")
    write_int8(out / "k_hat.int8", res.k_hat)
    files += [out / "points.csv", out / "k_hat.int8"]
    print(f"wrote {len(res.cloud)} points")
    if cfg["compare"].get("footprints"):
        files += _compare_outputs(cfg, res.cloud, out)
    write_manifest(out, "pipeline", cfg, cfg["seed"], files)
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, output: bool = True) -> None:
    p.add_argument("--config", help="JSON configuration file")
    if output:
        p.add_argument("--output", "-o", dest="output__", metavar="DIR", help="output directory")
    p.add_argument("--seed", dest="seed__", type=int, help="random seed (recorded in the manifest)")
    p.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    p.add_argument("--verbose", "-v", action="store_true")


def _filter_flags(p):
    p.add_argument("--patch", dest="filter__patch", type=int, help="patch size (odd)")
    p.add_argument("--search", dest="filter__search", type=int, help="search window size (odd)")
    p.add_argument("--bandwidth", dest="filter__bandwidth", type=float,
                   help="weight bandwidth h (default: calibrated on a noise tile)")
    p.add_argument("--gamma", dest="filter__gamma", type=float, help="phase term weight")
    p.add_argument("--weights", dest="filter__weights", choices=("single", "joint"),
                   help="per-interferogram or stack-joint similarity weights")


def _invert_flags(p):
    p.add_argument("--estimator", dest="inversion__estimator", choices=("svd", "cs", "two-stage"))
    p.add_argument("--lambda-frac", dest="inversion__lambda_frac", type=float,
                   help="lasso weight as a fraction of max|R^H g|")
    p.add_argument("--grid-span", dest="inversion__grid_span", type=float, nargs=2, metavar=("LO", "HI"),
                   help="elevation grid span in Rayleigh units")
    p.add_argument("--grid-step", dest="inversion__grid_step", type=float, help="grid spacing (m)")
    p.add_argument("--criterion", dest="inversion__criterion", choices=CRITERIA)
    p.add_argument("--signal-gate", dest="inversion__signal_gate", type=float,
                   help="minimum signal power as a fraction of the scene median (0 disables)")


def _fuse_flags(p):
    p.add_argument("--weight", dest="fusion__weight", choices=("tukey", "tdist"))
    p.add_argument("--cr", dest="fusion__c_r", type=float, help="Tukey/t tuning constant")
    p.add_argument("--radius", dest="fusion__radius", type=int, help="neighbourhood radius (pixels)")
    p.add_argument("--layers", dest="fusion__layers", choices=("selected", "primary"))


def _compare_flags(p):
    p.add_argument("--footprints", dest="compare__footprints", help="footprint polygons (JSON)")
    p.add_argument("--reference", dest="compare__reference", help="reference heights (JSON or CSV)")
    p.add_argument("--truncate", dest="compare__truncate", type=float, help="histogram truncation (m)")
    p.add_argument("--cell-size", dest="compare__cell_size", type=float, help="raster cell size (m)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nltomo", description="Non-local TomoSAR processing chain.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo accuracy runs, or a synthetic city stack")
    _common(p)
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON")
    p.add_argument("--city", action="store_true", help="render the synthetic city stack")
    p.add_argument("--estimator", choices=("svd", "cs", "two-stage"))
    p.add_argument("--realizations", type=int)
    p.add_argument("--draws", type=int)

    p = sub.add_parser("crlb", help="print the single-scatterer bound over N*SNR")
    _common(p, output=False)
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON (default: Munich stack)")
    p.add_argument("--n-snr-db", type=float, nargs="+", help="N*SNR values in dB")

    p = sub.add_parser("filter", help="non-local filtering of a stack")
    _common(p)
    p.add_argument("--stack", dest="stack__", help="stack directory")
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON")
    _filter_flags(p)

    p = sub.add_parser("invert", help="tomographic inversion and order selection")
    _common(p)
    p.add_argument("--input", dest="input__", help="filtered directory")
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON")
    _invert_flags(p)

    p = sub.add_parser("fuse", help="robust height fusion and geocoding")
    _common(p)
    p.add_argument("--input", dest="input__", help="inversion output directory")
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON")
    _fuse_flags(p)

    p = sub.add_parser("compare", help="per-structure statistics against footprints")
    _common(p)
    p.add_argument("--points", dest="points__", help="point cloud CSV")
    _compare_flags(p)
    p.add_argument("--weight", dest="fusion__weight", choices=("tukey", "tdist"))
    p.add_argument("--cr", dest="fusion__c_r", type=float)

    p = sub.add_parser("pipeline", help="filter, invert, select, fuse and geocode")
    _common(p)
    p.add_argument("--stack", dest="stack__", help="stack directory")
    p.add_argument("--geometry", dest="geometry__", help="geometry JSON")
    p.add_argument("--skip-filter", dest="filter__skip", action="store_const", const=True,
                   help="use the raw single-look interferograms")
    p.add_argument("--save-intermediate", action="store_true", help="persist every stage's output")
    _filter_flags(p)
    _invert_flags(p)
    _fuse_flags(p)
    _compare_flags(p)
    return ap


COMMANDS = {"simulate": cmd_simulate, "crlb": cmd_crlb, "filter": cmd_filter, "invert": cmd_invert,
            "fuse": cmd_fuse, "compare": cmd_compare, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
