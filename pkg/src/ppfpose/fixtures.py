"""Parametric demo shapes (meshes in mm) for tests and synthetic scenes.

Run `python -m ppfpose.fixtures <shape> <out.ply>` to write one as a PLY file.
"""

from __future__ import annotations

import numpy as np

from .geometry import OrientedPointCloud, TriMesh


def make_box_mesh(sx, sy, sz, center=(0.0, 0.0, 0.0)):
    """Axis-aligned box of the given edge lengths, centered at `center`."""
    c = np.asarray(center, dtype=np.float64)
    h = np.array([sx, sy, sz], dtype=np.float64) / 2
    corners = np.array([[x, y, z] for x in (-h[0], h[0])
                        for y in (-h[1], h[1]) for z in (-h[2], h[2])]) + c
    # outward-wound faces, two triangles per side
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, cq, d in quads:
        faces.append((a, b, cq))
        faces.append((a, cq, d))
    return TriMesh(corners, faces)


def make_plane_mesh(sx, sy, center=(0.0, 0.0, 0.0)):
    """Rectangle in the local xy plane, normal +z."""
    c = np.asarray(center, dtype=np.float64)
    v = np.array([[-sx / 2, -sy / 2, 0], [sx / 2, -sy / 2, 0],
                  [sx / 2, sy / 2, 0], [-sx / 2, sy / 2, 0]]) + c
    return TriMesh(v, [(0, 2, 1), (0, 3, 2)])


def make_icosphere_mesh(radius, subdivisions=2, center=(0.0, 0.0, 0.0)):
    t = (1 + np.sqrt(5)) / 2
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)


def make_blob_mesh(semi_axes=(75.0, 58.0, 45.0), bumps=(0.20, 0.15),
                   frequencies=(3.0, 5.0), subdivisions=3,
                   center=(0.0, 0.0, 0.0)):
    """Asymmetric lumpy blob: an ellipsoid with deterministic radial bumps.

    Curved everywhere, so flat scene structures cannot mimic it; the bump
    phases break all mirror and rotational symmetries, and the two bump
    frequencies spread its pair features over many quantization cells.
    """
    sphere = make_icosphere_mesh(1.0, subdivisions=subdivisions)
    u = sphere.vertices
    f = np.ones(len(u))
    phases = [1.3, -0.4, 0.5, 2.0, 0.7, -1.1]
    for i, (a, w) in enumerate(zip(bumps, frequencies)):
        f = f + a * (np.sin(w * u[:, i % 3] + phases[i])
                     * np.cos(0.77 * w * u[:, (i + 1) % 3] + phases[i + 1]))
    v = u * f[:, None] * np.asarray(semi_axes, dtype=np.float64)
    return TriMesh(v + np.asarray(center, dtype=np.float64), sphere.faces)


def make_lblock_mesh(a=120.0, b=80.0, thickness=40.0, arm=45.0):
    """L-shaped prism: an a x b footprint with a rectangular notch removed.

    Asymmetric enough that its pose is unambiguous, and with enough distinct
    face orientations to exercise the pair-feature pipeline.
    """
    ax, by = a / 2, b / 2
    poly = np.array([
        [-ax, -by], [ax, -by], [ax, -by + arm],
        [-ax + arm, -by + arm], [-ax + arm, by], [-ax, by],
    ])
    h = thickness / 2
    bottom = np.column_stack([poly, np.full(len(poly), -h)])
    top = np.column_stack([poly, np.full(len(poly), h)])
    verts = np.vstack([bottom, top])
    n = len(poly)
    # caps triangulated as two rectangles each (vertices 0..5 form an L)
    cap = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5)]
    faces = [(a2, c2, b2) for a2, b2, c2 in cap]            # bottom (normal -z)
    faces += [(a2 + n, b2 + n, c2 + n) for a2, b2, c2 in cap]  # top (+z)
    for i in range(n):                                      # side walls
        j = (i + 1) % n
        faces.append((i, j, j + n))
        faces.append((i, j + n, i + n))
    return TriMesh(verts, faces)


def sample_mesh_cloud(mesh: TriMesh, n_points, seed=0) -> OrientedPointCloud:
    """Surface point cloud with face normals, seeded and deterministic."""
    rng = np.random.default_rng(seed)
    pts, nms = mesh.sample_surface(n_points, rng)
    return OrientedPointCloud(pts, nms)


SHAPES = {
    "lblock": lambda: make_lblock_mesh(),
    "box": lambda: make_box_mesh(100.0, 60.0, 40.0),
    "sphere": lambda: make_icosphere_mesh(50.0),
    "blob": lambda: make_blob_mesh(),
}


def main(argv=None):
    import argparse

    from .ply import save_ply

    ap = argparse.ArgumentParser(description="write a demo shape as a PLY mesh")
    ap.add_argument("shape", choices=sorted(SHAPES))
    ap.add_argument("out")
    ap.add_argument("--binary", action="store_true")
    args = ap.parse_args(argv)
    mesh = SHAPES[args.shape]()
    save_ply(args.out, mesh.vertices, normals=mesh.vertex_normals(),
             faces=mesh.faces, binary=args.binary)
    print(f"wrote {args.shape}: {len(mesh.vertices)} vertices, "
          f"{len(mesh.faces)} faces -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
