"""Pipeline command line: pose ingestion, regularization, filling, simulation,
and rendering, each runnable alone or end to end via `run`.

All stages are driven by one JSON config (see README for the schema) and write
into per-stage directories under paths.output_dir. Every stage directory gets
a stage.json with the hash of the config blocks it depends on; a rerun with an
unchanged hash and intact artifacts is skipped unless --force is given.

Exit codes: 0 success, 2 configuration or validation failure, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from splatsim import __version__, anisotropy, geo_pose, interior_fill
from splatsim import gaussian_scene as gs
from splatsim import mpm
from splatsim.errors import (
    CheckpointError,
    ConfigError,
    DegenerateStateError,
    SimulationDivergedError,
    SplatSimError,
)
from splatsim.mpm import checkpoints as ckpt
from splatsim.render import Camera, render_sequence

log = logging.getLogger("splatsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        doc = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        return json.dumps(doc)


def _setup_logging(log_json):
    handler = logging.StreamHandler(sys.stderr)
    if log_json:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    cfg.setdefault("paths", {})
    cfg["paths"].setdefault("output_dir", "splatsim_out")
    # Resolve relative paths against the config file location.
    base = path.parent
    for key in ("ply", "mesh", "poses_csv", "output_dir"):
        val = cfg["paths"].get(key)
        if val:
            cfg["paths"][key] = str((base / val) if not Path(val).is_absolute() else Path(val))
    return cfg


def _require_path(cfg, key, stage):
    val = cfg.get("paths", {}).get(key)
    if not val:
        raise ConfigError(f"stage {stage}: paths.{key} is not set")
    p = Path(val)
    if not p.exists():
        raise ConfigError(f"stage {stage}: paths.{key} does not exist: {p}")
    return p


def _material_from_config(cfg):
    block = dict(cfg.get("material", {}))
    return mpm.MaterialParams(
        youngs_modulus=float(block.get("youngs_modulus", 5.0e7)),
        poisson_ratio=float(block.get("poisson_ratio", 0.3)),
        friction_angle=float(block.get("friction_angle", 22.0)),
        density=float(block.get("density", 2000.0)),
        gravity=np.asarray(block.get("gravity", (0.0, 0.0, -9.8)), dtype=np.float64),
    )


def _sim_config(cfg):
    block = cfg.get("sim")
    if not block:
        raise ConfigError("config has no 'sim' block")
    for key in ("dx", "domain_lo", "domain_hi"):
        if key not in block:
            raise ConfigError(f"sim block is missing '{key}'")
    return mpm.SimConfig(
        dx=float(block["dx"]),
        domain_lo=block["domain_lo"],
        domain_hi=block["domain_hi"],
        dt=(None if block.get("dt") is None else float(block["dt"])),
        n_steps=int(block.get("n_steps", 0)),
        boundary=block.get("boundary", "slip"),
        cfl_max=float(block.get("cfl_max", 0.4)),
        checkpoint_every=int(block.get("checkpoint_every", 50)),
        transfer=block.get("transfer", "pic"),
    )


def _fill_domain(cfg):
    block = cfg.get("fill")
    if not block:
        raise ConfigError("config has no 'fill' block")
    for key in ("x_min", "x_max", "y_min", "y_max", "z_min"):
        if key not in block:
            raise ConfigError(f"fill block is missing '{key}'")
    h_fill = block.get("h_fill")
    if h_fill is None:
        h_fill = cfg.get("sim", {}).get("dx")
    if h_fill is None:
        raise ConfigError("fill.h_fill is not set and sim.dx is unavailable to default to")
    return interior_fill.FillDomain(
        x_min=float(block["x_min"]), x_max=float(block["x_max"]),
        y_min=float(block["y_min"]), y_max=float(block["y_max"]),
        z_min=float(block["z_min"]), h_fill=float(h_fill),
    )


def _camera_from_config(cfg):
    block = cfg.get("render", {}).get("camera")
    if not block:
        raise ConfigError("render block has no 'camera'")
    width = int(block.get("width", 320))
    height = int(block.get("height", 240))
    fx = float(block.get("fx", 300.0))
    fy = float(block.get("fy", fx))
    near = float(block.get("near", 0.01))
    if "position" in block and "look_at" in block:
        return Camera.from_look_at(
            position=block["position"], target=block["look_at"], fx=fx, fy=fy,
            cx=block.get("cx"), cy=block.get("cy"),
            width=width, height=height, near=near,
            up=block.get("up", (0.0, 0.0, 1.0)),
        )
    if "q" in block and "t" in block:
        pose = geo_pose.ColmapCamera(image_id=1, q=np.asarray(block["q"], dtype=np.float64),
                                     t=np.asarray(block["t"], dtype=np.float64))
        return Camera(pose=pose, fx=fx, fy=fy,
                      cx=float(block.get("cx", (width - 1) / 2.0)),
                      cy=float(block.get("cy", (height - 1) / 2.0)),
                      width=width, height=height, near=near)
    raise ConfigError("render.camera needs either position+look_at or q+t")


# ---------------------------------------------------------------------------
# Stage plumbing: hashing, skip logic, manifests
# ---------------------------------------------------------------------------


def _stage_hash(payload):
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _stage_dir(cfg, stage):
    return Path(cfg["paths"]["output_dir"]) / stage


def _stage_fresh(stage_dir, config_hash):
    meta = stage_dir / "stage.json"
    if not meta.exists():
        return False
    try:
        with open(meta) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError):
        return False
    if doc.get("config_hash") != config_hash or doc.get("version") != __version__:
        return False
    return all((stage_dir / a).exists() for a in doc.get("artifacts", []))


def _write_stage_meta(stage_dir, stage, config_hash, artifacts, extra=None):
    doc = {
        "stage": stage,
        "config_hash": config_hash,
        "version": __version__,
        "artifacts": list(artifacts),
    }
    if extra:
        doc.update(extra)
    with open(stage_dir / "stage.json", "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _run_stage(cfg, stage, hash_payload, force, runner):
    """Skip-or-run one stage; returns (stage_dir, skipped)."""
    stage_dir = _stage_dir(cfg, stage)
    payload = {"stage": stage, "config": hash_payload, "version": __version__}
    h = _stage_hash(payload)
    if not force and _stage_fresh(stage_dir, h):
        log.info("stage %s: up to date, skipping (config hash %s)", stage, h[:12])
        return stage_dir, True
    stage_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    artifacts, extra = runner(stage_dir)
    _write_stage_meta(stage_dir, stage, h, artifacts, extra)
    log.info("stage %s: done in %.2fs", stage, time.monotonic() - t0)
    return stage_dir, False


def _file_fingerprint(path):
    st = Path(path).stat()
    return {"path": str(path), "size": st.st_size, "mtime_ns": st.st_mtime_ns}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_ingest_poses(cfg, force=False, origin_override=None):
    csv_path = _require_path(cfg, "poses_csv", "ingest-poses")
    payload = {"csv": _file_fingerprint(csv_path), "origin": origin_override}

    def runner(stage_dir):
        poses = geo_pose.read_pose_csv(csv_path)
        if origin_override is not None:
            origin = geo_pose.GeoPose(*origin_override, image_name="<origin>")
            source = "explicit"
        elif poses:
            origin = poses[0]
            source = "first_pose"
        else:
            origin = None
        cams = geo_pose.to_colmap(poses) if origin_override is None \
            else geo_pose.to_colmap(poses, origin=origin)
        geo_pose.write_images_txt(cams, stage_dir / "images.txt")
        if origin is not None:
            geo_pose.write_origin_json(origin, stage_dir / "origin.json", source=source)
            artifacts = ["images.txt", "origin.json"]
        else:
            artifacts = ["images.txt"]
        log.info("ingest-poses: wrote %d camera records", len(cams))
        return artifacts, {"n_images": len(cams)}

    return _run_stage(cfg, "poses", payload, force, runner)


def cmd_regularize(cfg, force=False, r=None, report=False):
    ply_path = _require_path(cfg, "ply", "regularize")
    block = cfg.get("regularize", {})
    r_val = float(block.get("r", 3.0)) if r is None else float(r)
    payload = {"ply": _file_fingerprint(ply_path), "r": r_val}
    result = {}

    def runner(stage_dir):
        scene = gs.load_ply_file(ply_path)
        clamped, rep = anisotropy.clamp_report(scene, r_val)
        gs.save_ply_file(clamped, stage_dir / "scene.ply")
        rep["r"] = r_val
        rep["n_gaussians"] = len(scene)
        with open(stage_dir / "report.json", "w") as f:
            json.dump(rep, f, indent=2)
            f.write("\n")
        result.update(rep)
        log.info("regularize: loss %.6g -> %.6g, clamped %d of %d",
                 rep["loss_before"], rep["loss_after"], rep["n_clamped"], len(scene))
        return ["scene.ply", "report.json"], rep

    stage_dir, skipped = _run_stage(cfg, "regularize", payload, force, runner)
    if report:
        if skipped:
            with open(stage_dir / "report.json") as f:
                result = json.load(f)
        print(json.dumps(result, sort_keys=True))
    return stage_dir, skipped


def _load_or_build_mesh(cfg, scene, dom):
    mesh_path = cfg.get("paths", {}).get("mesh")
    if mesh_path:
        mesh_path = Path(mesh_path)
        if not mesh_path.exists():
            raise ConfigError(f"paths.mesh does not exist: {mesh_path}")
        return interior_fill.load_obj_file(mesh_path), str(mesh_path)
    cell = cfg.get("fill", {}).get("heightfield_cell") or 2.0 * dom.h_fill
    return interior_fill.heightfield_surface(scene, float(cell)), "<heightfield>"


def cmd_fill(cfg, force=False):
    reg_dir = _stage_dir(cfg, "regularize")
    src_ply = reg_dir / "scene.ply"
    if not src_ply.exists():
        src_ply = _require_path(cfg, "ply", "fill")
    dom = _fill_domain(cfg)
    payload = {
        "ply": _file_fingerprint(src_ply),
        "mesh": cfg.get("paths", {}).get("mesh"),
        "fill": cfg.get("fill", {}),
        "h_fill": dom.h_fill,
    }

    def runner(stage_dir):
        scene = gs.load_ply_file(src_ply)
        mesh, mesh_src = _load_or_build_mesh(cfg, scene, dom)
        filled = interior_fill.fill_interior(scene, mesh, dom)
        gs.save_ply_file(filled, stage_dir / "filled.ply")
        stats = {
            "n_surface": len(scene),
            "n_filled": len(filled),
            "mesh_source": mesh_src,
            "mesh_triangles": int(len(mesh.triangles)),
            "h_fill": dom.h_fill,
            "aniso_loss_of_fill": (anisotropy.aniso_loss(filled.activated_scales(),
                                                         cfg.get("regularize", {}).get("r", 3.0))
                                   if len(filled) else 0.0),
        }
        with open(stage_dir / "stats.json", "w") as f:
            json.dump(stats, f, indent=2)
            f.write("\n")
        log.info("fill: %d interior Gaussians under %s", len(filled), mesh_src)
        return ["filled.ply", "stats.json"], stats

    return _run_stage(cfg, "fill", payload, force, runner)


def _combined_scene(cfg):
    """Surface + filled Gaussians as one scene, with the filled mask."""
    reg_ply = _stage_dir(cfg, "regularize") / "scene.ply"
    if not reg_ply.exists():
        reg_ply = _require_path(cfg, "ply", "simulate")
    fill_ply = _stage_dir(cfg, "fill") / "filled.ply"
    if not fill_ply.exists():
        raise ConfigError("fill stage has not produced filled.ply yet; run `fill` first")
    surface = gs.load_ply_file(reg_ply)
    filled = gs.load_ply_file(fill_ply)
    combined = gs.concat_scenes(surface, filled)
    is_filled = np.zeros(len(combined), dtype=bool)
    is_filled[len(surface):] = True
    return combined, is_filled


def cmd_simulate(cfg, force=False, threads=1):
    sim_cfg = _sim_config(cfg)
    material = _material_from_config(cfg)
    dom = _fill_domain(cfg)
    include_surface = bool(cfg.get("fill", {}).get("include_surface", True))
    payload = {
        "sim": cfg.get("sim", {}),
        "material": cfg.get("material", {}),
        "include_surface": include_surface,
        "fill_stage": str(_stage_dir(cfg, "fill")),
    }

    def runner(stage_dir):
        combined, is_filled = _combined_scene(cfg)
        gs.save_ply_file(combined, stage_dir / "sim_scene.ply")
        particles = mpm.init_particles(
            combined, material, sim_cfg.dx, h_fill=dom.h_fill,
            is_filled=is_filled,
            domain=(sim_cfg.domain_lo, sim_cfg.domain_hi))
        if not include_surface:
            mask = is_filled[particles.source.astype(np.int64)]
            particles = particles.subset(mask)
        if len(particles) == 0:
            raise ConfigError("no particles inside the simulation domain")
        state = mpm.make_state(particles, material, sim_cfg)
        stop_speed = cfg.get("sim", {}).get("stop_speed")
        entries = mpm.run(
            state, out_dir=stage_dir, threads=threads,
            stop_speed=None if stop_speed is None else float(stop_speed),
            progress_every=max(1, sim_cfg.n_steps // 10))
        log.info("simulate: %d particles, %d checkpoints, final max|v|=%.3e",
                 len(particles), len(entries), state.particles.max_speed())
        artifacts = ["manifest.json", "sim_scene.ply"] + [e["file"] for e in entries]
        return artifacts, {"n_particles": len(particles), "n_checkpoints": len(entries),
                           "n_rejected": particles.n_rejected}

    return _run_stage(cfg, "simulate", payload, force, runner)


def cmd_render(cfg, force=False, threads=1):
    cam = _camera_from_config(cfg)
    render_block = cfg.get("render", {})
    sim_dir = _stage_dir(cfg, "simulate")
    manifest_path = sim_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError("simulate stage has not produced a manifest yet; run `simulate` first")
    payload = {"render": render_block, "sim_stage": str(sim_dir)}

    def runner(stage_dir):
        scene = gs.load_ply_file(sim_dir / "sim_scene.ply")
        doc = ckpt.read_manifest(manifest_path)
        entries = [{"file": str(sim_dir / e["file"]), "step": e["step"]}
                   for e in doc["checkpoints"]]
        extra = {}
        if "alpha_cutoff" in render_block:
            extra["alpha_cutoff"] = float(render_block["alpha_cutoff"])
        if "cov_floor" in render_block:
            extra["cov_floor"] = float(render_block["cov_floor"])
        frames = render_sequence(
            entries, scene, cam, stage_dir,
            background=render_block.get("background", (0.0, 0.0, 0.0)),
            stride=int(render_block.get("frame_stride", 1)),
            png=bool(render_block.get("png", False)),
            sh_degree=int(render_block.get("sh_degree", 0)),
            tile_size=render_block.get("tile_size"),
            threads=threads,
            **extra,
        )
        log.info("render: wrote %d frames", len(frames))
        return [f.name for f in frames], {"n_frames": len(frames)}

    return _run_stage(cfg, "render", payload, force, runner)


def cmd_run(cfg, force=False, threads=1):
    """All stages in order. Config validation happens before any stage runs."""
    _require_path(cfg, "ply", "run")
    _sim_config(cfg)
    _fill_domain(cfg)
    _material_from_config(cfg)
    _camera_from_config(cfg)
    if cfg.get("paths", {}).get("poses_csv"):
        cmd_ingest_poses(cfg, force=force)
    cmd_regularize(cfg, force=force)
    cmd_fill(cfg, force=force)
    cmd_simulate(cfg, force=force, threads=threads)
    cmd_render(cfg, force=force, threads=threads)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_origin(text):
    try:
        lat, lon, alt = (float(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"--origin expects 'lat,lon,alt', got {text!r}") from e
    return lat, lon, alt


def _add_global_flags(parser, suppress):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="pipeline JSON configuration",
                        **(kw if suppress else {"default": None}))
    parser.add_argument("--force", action="store_true",
                        help="rerun stages even when their outputs are up to date",
                        **(kw if suppress else {"default": False}))
    parser.add_argument("--log-json", action="store_true",
                        help="line-oriented JSON logs on stderr",
                        **(kw if suppress else {"default": False}))
    parser.add_argument("--threads", type=int, metavar="N",
                        help="worker threads; 1 selects the deterministic reference path",
                        **(kw if suppress else {"default": 1}))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="splatsim",
        description="Scan-to-simulation pipeline for Gaussian-splat slope scenes.")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sub(name, help_text):
        # global flags are accepted on either side of the subcommand
        p = sub.add_parser(name, help=help_text)
        _add_global_flags(p, suppress=True)
        return p

    p = add_sub("ingest-poses", "pose CSV -> COLMAP images.txt + ENU origin")
    p.add_argument("--origin", type=str, default=None,
                   help="explicit ENU origin 'lat,lon,alt' (default: first pose)")

    p = add_sub("regularize", "clamp Gaussian aspect ratios")
    p.add_argument("--r", type=float, default=None, help="ratio bound (default from config)")
    p.add_argument("--report", action="store_true",
                   help="print the before/after loss report as JSON on stdout")

    add_sub("fill", "fill the interior below the surface")
    add_sub("simulate", "run the MPM simulation")
    add_sub("render", "render checkpoint frames")
    add_sub("run", "run all stages in order")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_json)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is None:
            raise ConfigError("--config is required")
        if args.command == "ingest-poses":
            origin = _parse_origin(args.origin) if args.origin else None
            cmd_ingest_poses(cfg, force=args.force, origin_override=origin)
        elif args.command == "regularize":
            cmd_regularize(cfg, force=args.force, r=args.r, report=args.report)
        elif args.command == "fill":
            cmd_fill(cfg, force=args.force)
        elif args.command == "simulate":
            cmd_simulate(cfg, force=args.force, threads=args.threads)
        elif args.command == "render":
            cmd_render(cfg, force=args.force, threads=args.threads)
        elif args.command == "run":
            cmd_run(cfg, force=args.force, threads=args.threads)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command}")
    except SplatSimError as e:
        # Format/validation problems are configuration errors; solver blowups
        # and checkpoint mismatches are runtime errors.
        if isinstance(e, (SimulationDivergedError, DegenerateStateError, CheckpointError)):
            log.error("runtime failure: %s", e)
            return EXIT_RUNTIME
        log.error("%s", e)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports anything
        log.error("unexpected failure: %s", e, exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
