"""Geometry kernels: meshes, BVH queries, hulls, scenes, sampling, cameras."""

from .bvh import BVH
from .camera import Camera, partial_view_cull, render_depth
from .hull import ConvexHull, DegenerateHullError, convex_hull, signed_distance_hull
from .mesh import TriMesh, box_mesh, icosphere, load_obj, merge_meshes, plane_mesh, save_obj
from .ply import read_cloud, read_ply, write_cloud, write_ply
from .sampling import (
    farthest_point_sampling,
    sample_initial_poses,
    sample_link_surface,
    thumb_direction,
)
from .scene import (
    load_scene,
    ClosestHit,
    PosedGripper,
    Scene,
    closest_point_gripper,
    closest_point_scene,
)

__all__ = [
    "BVH", "Camera", "ClosestHit", "ConvexHull", "DegenerateHullError", "PosedGripper",
    "Scene", "TriMesh", "box_mesh", "closest_point_gripper", "closest_point_scene",
    "convex_hull", "farthest_point_sampling", "icosphere", "load_obj", "merge_meshes",
    "partial_view_cull", "plane_mesh", "read_cloud", "read_ply", "render_depth",
    "sample_initial_poses", "sample_link_surface", "save_obj", "signed_distance_hull",
    "load_scene", "thumb_direction", "write_cloud", "write_ply",
]
