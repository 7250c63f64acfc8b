"""Shared fixtures: the demo bundle is built once per test session."""

import json

import pytest

from fatpads.demo import demo_map_doc, make_demo_head
from fatpads.mesh import save_obj
from fatpads.pipeline import build_project, load_bundle


@pytest.fixture(scope="session")
def demo_assets(tmp_path_factory):
    """Subdivision-4 demo mesh.obj and map.json on disk."""
    root = tmp_path_factory.mktemp("demo_assets")
    mesh = make_demo_head(subdivisions=4)
    (root / "mesh.obj").write_bytes(save_obj(mesh))
    doc = demo_map_doc(mesh)
    (root / "map.json").write_text(json.dumps(doc, indent=2, sort_keys=True)
                                   + "\n")
    return root


@pytest.fixture(scope="session")
def demo_bundle_dir(demo_assets, tmp_path_factory):
    """A full artifact bundle built from the demo assets."""
    out = tmp_path_factory.mktemp("demo_bundle")
    build_project(demo_assets / "mesh.obj", demo_assets / "map.json", out)
    return out


@pytest.fixture(scope="session")
def demo_bundle(demo_bundle_dir):
    return load_bundle(demo_bundle_dir / "bundle.json")
