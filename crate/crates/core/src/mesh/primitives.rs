//! Procedural meshes used by tests, examples and the synthetic pipeline.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriangleMesh;

fn build(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> TriangleMesh {
    TriangleMesh::new(vertices, triangles)
        .expect("procedural mesh is valid")
        .0
}

/// Subdivided icosahedron projected onto a sphere.
///
/// Subdivision level `k` yields `10·4^k + 2` vertices and `20·4^k` faces.
/// The base icosahedron is symmetric under each coordinate reflection and so
/// is every level, bit for bit.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    build(verts.into_iter().map(|v| Point3::from(v * radius)).collect(), faces)
}

/// Sawtooth strip whose edge graph between its base vertices is a path of
/// `edges` unit-length segments.
///
/// Base vertex `i` sits at `(i, 0, 0)` for `i in 0..=edges`. Each segment
/// carries one apex vertex at height 0.5, so any detour through an apex costs
/// more than the direct hop and no pair of vertices is farther apart than the
/// two chain ends.
pub fn chain(edges: usize) -> TriangleMesh {
    assert!(edges >= 1);
    let mut verts: Vec<Point3<f64>> = (0..=edges).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let mut tris = Vec::with_capacity(edges);
    for i in 0..edges {
        verts.push(Point3::new(i as f64 + 0.5, 0.5, 0.0));
        tris.push([i, i + 1, edges + 1 + i]);
    }
    build(verts, tris)
}

/// Axis-aligned square `[-half, half]²` in the plane `z = z`, facing −z.
pub fn square(half: f64, z: f64) -> TriangleMesh {
    build(
        vec![
            Point3::new(-half, -half, z),
            Point3::new(half, -half, z),
            Point3::new(half, half, z),
            Point3::new(-half, half, z),
        ],
        vec![[0, 2, 1], [0, 3, 2]],
    )
}

/// Regular grid of `nx × ny` cells on the plane `z = 0` spanning `[0, sx] × [0, sy]`.
pub fn grid(nx: usize, ny: usize, sx: f64, sy: f64) -> TriangleMesh {
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            verts.push(Point3::new(sx * i as f64 / nx as f64, sy * j as f64 / ny as f64, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tris.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            tris.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    build(verts, tris)
}

/// Closed cylinder around the z axis from `z0` to `z1`.
///
/// `segments` vertices per ring, the first at angle 0 (on +x); `rings ≥ 2`
/// rings including the two ends, plus one center vertex per cap.
pub fn cylinder(radius: f64, z0: f64, z1: f64, segments: usize, rings: usize) -> TriangleMesh {
    assert!(segments >= 3 && rings >= 2);
    let mut verts = Vec::with_capacity(segments * rings + 2);
    for r in 0..rings {
        let z = z0 + (z1 - z0) * r as f64 / (rings - 1) as f64;
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Point3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let idx = |r: usize, s: usize| r * segments + (s % segments);
    let mut tris = Vec::new();
    for r in 0..rings - 1 {
        for s in 0..segments {
            tris.push([idx(r, s), idx(r, s + 1), idx(r + 1, s + 1)]);
            tris.push([idx(r, s), idx(r + 1, s + 1), idx(r + 1, s)]);
        }
    }
    let bottom = verts.len();
    verts.push(Point3::new(0.0, 0.0, z0));
    let top = verts.len();
    verts.push(Point3::new(0.0, 0.0, z1));
    for s in 0..segments {
        tris.push([bottom, idx(0, s + 1), idx(0, s)]);
        tris.push([top, idx(rings - 1, s), idx(rings - 1, s + 1)]);
    }
    build(verts, tris)
}

/// Mirror-symmetric (under x → −x) dumbbell along the x axis.
///
/// Built by reshaping an icosphere: the x extent is stretched to `±half_length`
/// and the cross-section radius narrows toward the middle. The profile depends
/// on `x` only through `|x|`, so the mirror image of a vertex is again a vertex.
pub fn dumbbell(half_length: f64, bell_radius: f64, waist_radius: f64, subdivisions: u32) -> TriangleMesh {
    let sphere = icosphere(1.0, subdivisions);
    let verts = sphere
        .vertices()
        .iter()
        .map(|p| {
            // radial profile: waist at the middle, full bell toward the ends
            let profile = waist_radius + (bell_radius - waist_radius) * p.x.abs().sqrt();
            Point3::new(p.x * half_length, p.y * profile, p.z * profile)
        })
        .collect();
    build(verts, sphere.triangles().to_vec())
}

/// Disjoint union of two meshes (vertex indices of `b` shifted).
pub fn disjoint_union(a: &TriangleMesh, b: &TriangleMesh) -> TriangleMesh {
    let offset = a.vertex_count();
    let mut verts = a.vertices().to_vec();
    verts.extend_from_slice(b.vertices());
    let mut tris = a.triangles().to_vec();
    tris.extend(b.triangles().iter().map(|t| t.map(|i| i + offset)));
    build(verts, tris)
}
