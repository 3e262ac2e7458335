"""Active neural surface reconstruction on synthetic SDF scenes.

The compiled extension exposes the core operations: scene construction and
SDF queries, RGB-D rendering, map training episodes, mesh extraction, and
mesh evaluation.
"""

from ._core import (
    Scene,
    MapHandle,
    bundled_scene_names,
    load_scene,
    scene_sdf,
    render_rgbd,
    render_equirect_depth,
    extract_gt_mesh,
    mesh_metrics,
    plan_path,
    run_episode,
    replay_trajectory,
    __version__,
)

__all__ = [
    "Scene",
    "MapHandle",
    "bundled_scene_names",
    "load_scene",
    "scene_sdf",
    "render_rgbd",
    "render_equirect_depth",
    "extract_gt_mesh",
    "mesh_metrics",
    "plan_path",
    "run_episode",
    "replay_trajectory",
    "__version__",
]
