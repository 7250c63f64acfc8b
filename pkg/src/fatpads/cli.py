"""Command-line interface: build, pose, diff, serve, and demo assets."""

import json
import sys
from pathlib import Path

import click

from .mesh import (MeshError, hausdorff_rms, load_obj, save_obj,
                   vertex_surface_distances)
from .pipeline import BundleError, PipelineError, build_project, load_bundle
from .posing import (PoseError, apply_pose_script, load_pose_script,
                     rest_state)


@click.group()
def main():
    """Fat-pad facial posing: cage building, batch posing, and serving."""


@main.command()
@click.option("--mesh", required=True, type=click.Path(exists=True),
              help="Face mesh (Wavefront OBJ).")
@click.option("--map", "map_path", required=True, type=click.Path(exists=True),
              help="Fat-pad map JSON for the mesh.")
@click.option("--out-dir", required=True, type=click.Path(),
              help="Directory receiving the artifact bundle.")
@click.option("--alpha-base", default=0.05, show_default=True,
              help="Cage offset as a fraction of the bbox diagonal.")
@click.option("--geodesic", default="exact", show_default=True,
              type=click.Choice(["exact", "dijkstra"]),
              help="Distance solver feeding the attenuation.")
def build(mesh, map_path, out_dir, alpha_base, geodesic):
    """Run the full pipeline and write an artifact bundle."""
    def report(stage, elapsed):
        click.echo(f"{stage}: {elapsed:.2f}s")

    try:
        manifest = build_project(mesh, map_path, out_dir,
                                 alpha_base=alpha_base, geodesic=geodesic,
                                 on_stage=report)
    except PipelineError as exc:
        click.echo(f"stage {exc.stage}: {exc}", err=True)
        sys.exit(1)
    click.echo(f"bundle: {manifest}")


@main.command()
@click.option("--bundle", required=True, type=click.Path(exists=True),
              help="Bundle manifest written by build.")
@click.option("--script", required=True, type=click.Path(exists=True),
              help="Pose script JSON.")
@click.option("--out", required=True, type=click.Path(),
              help="Posed mesh output (OBJ).")
def pose(bundle, script, out):
    """Apply a pose script to a bundle and write the posed mesh."""
    try:
        loaded = load_bundle(bundle)
        pose_script = load_pose_script(Path(script).read_bytes())
        state = rest_state(loaded.rig)
        apply_pose_script(state, pose_script)
    except (BundleError, PoseError, OSError, ValueError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    posed = loaded.mesh.with_positions(state.current_positions)
    Path(out).write_bytes(save_obj(posed))
    click.echo(f"posed mesh: {out}")


@main.command()
@click.option("--a", "a_path", required=True, type=click.Path(exists=True),
              help="First mesh (OBJ).")
@click.option("--b", "b_path", required=True, type=click.Path(exists=True),
              help="Second mesh (OBJ).")
@click.option("--heat", type=click.Path(), default=None,
              help="Write per-vertex distances from --a to --b's surface, "
                   "one value per line.")
def diff(a_path, b_path, heat):
    """Print the symmetric Hausdorff RMS distance between two meshes."""
    try:
        a = load_obj(Path(a_path).read_bytes())
        b = load_obj(Path(b_path).read_bytes())
        rms = hausdorff_rms(a, b)
        if heat is not None:
            d = vertex_surface_distances(a, b)
            Path(heat).write_text(
                "".join(f"{v:.17g}\n" for v in d), encoding="ascii")
    except (MeshError, OSError, ValueError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(f"{rms:.17g}")


@main.command()
@click.option("--bundle", required=True, type=click.Path(exists=True),
              help="Bundle manifest written by build.")
@click.option("--port", required=True, type=int, help="Port to listen on.")
def serve(bundle, port):
    """Serve interactive pose sessions over WebSocket."""
    from .service import serve as run_service

    static = Path("frontend/dist")
    try:
        run_service(bundle, port,
                    static_dir=static if static.is_dir() else None)
    except BundleError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)


@main.command()
@click.option("--out-dir", required=True, type=click.Path(),
              help="Directory receiving mesh.obj and map.json.")
@click.option("--subdivisions", default=5, show_default=True,
              help="Icosphere subdivision level of the demo face.")
def demo(out_dir, subdivisions):
    """Write the procedural demo face and its fat-pad map."""
    from .demo import demo_map_doc, make_demo_head

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = make_demo_head(subdivisions=subdivisions)
    (out / "mesh.obj").write_bytes(save_obj(mesh))
    doc = demo_map_doc(mesh)
    (out / "map.json").write_text(json.dumps(doc, indent=2, sort_keys=True)
                                  + "\n", encoding="ascii")
    click.echo(f"demo assets: {out / 'mesh.obj'}, {out / 'map.json'}")


if __name__ == "__main__":
    main()
