//! A procedural rigged humanoid for tests, demos and desk-scale experiments.
//!
//! The body is the zero level set of a smooth union of tapered capsules,
//! meshed with surface nets and snapped onto the level set. It stands along
//! +y (feet at y ≈ 0, about 1.75 m tall) in a T-pose, facing +z. The feet
//! and a nose point forward, so the shape has a distinct front.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{connected_components, TriangleMesh};
use crate::rig::{compute_skinning_weights, AngleLimits, Bone, Joint, Skeleton};
use crate::softlabel::HeatOptions;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanoidOptions {
    /// Surface-nets grid spacing (meters); about 0.021 gives ~5k vertices.
    pub cell: f64,
    /// Snap iterations onto the level set.
    pub projection_steps: usize,
    /// Compute heat-diffusion skinning weights for the rig.
    pub weights: bool,
}

impl Default for HumanoidOptions {
    fn default() -> Self {
        Self {
            cell: 0.021,
            projection_steps: 3,
            weights: true,
        }
    }
}

/// Tapered capsule `a → b` with radii `ra → rb`; `squash` scales z before
/// evaluation (values above 1 flatten the part front-to-back).
#[derive(Debug, Clone, Copy)]
struct Part {
    a: Point3<f64>,
    b: Point3<f64>,
    ra: f64,
    rb: f64,
    squash: f64,
}

impl Part {
    fn new(a: [f64; 3], b: [f64; 3], ra: f64, rb: f64) -> Self {
        Self {
            a: Point3::from(a),
            b: Point3::from(b),
            ra,
            rb,
            squash: 1.0,
        }
    }

    fn squashed(mut self, s: f64) -> Self {
        self.squash = s;
        self
    }

    fn eval(&self, p: &Point3<f64>) -> f64 {
        let s = Vector3::new(1.0, 1.0, self.squash);
        let p = p.coords.component_mul(&s);
        let a = self.a.coords.component_mul(&s);
        let ab = self.b.coords.component_mul(&s) - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (a + ab * t)).norm() - (self.ra + (self.rb - self.ra) * t)
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

const BLEND: f64 = 0.03;

fn body_parts() -> Vec<Part> {
    let mut parts = vec![
        Part::new([0.0, 0.90, 0.0], [0.0, 1.36, 0.0], 0.14, 0.15).squashed(1.5),
        Part::new([-0.09, 0.92, 0.0], [0.09, 0.92, 0.0], 0.10, 0.10).squashed(1.3),
        Part::new([-0.17, 1.40, 0.0], [0.17, 1.40, 0.0], 0.07, 0.07).squashed(1.2),
        Part::new([0.0, 1.40, 0.0], [0.0, 1.56, 0.0], 0.05, 0.05),
        Part::new([0.0, 1.62, 0.0], [0.0, 1.70, 0.0], 0.095, 0.09),
        Part::new([0.0, 1.655, 0.075], [0.0, 1.635, 0.115], 0.02, 0.015),
    ];
    for sx in [1.0, -1.0] {
        parts.extend([
            Part::new([0.09 * sx, 0.90, 0.0], [0.10 * sx, 0.50, 0.01], 0.075, 0.055),
            Part::new([0.10 * sx, 0.50, 0.01], [0.10 * sx, 0.09, -0.01], 0.052, 0.036),
            Part::new([0.10 * sx, 0.05, -0.04], [0.10 * sx, 0.035, 0.15], 0.038, 0.03),
            Part::new([0.18 * sx, 1.40, 0.0], [0.45 * sx, 1.40, -0.01], 0.048, 0.04),
            Part::new([0.45 * sx, 1.40, -0.01], [0.70 * sx, 1.40, 0.0], 0.038, 0.03),
            Part::new([0.71 * sx, 1.40, 0.0], [0.80 * sx, 1.40, 0.01], 0.034, 0.028).squashed(1.6),
        ]);
    }
    parts
}

fn body_sdf(parts: &[Part], p: &Point3<f64>) -> f64 {
    parts
        .iter()
        .map(|q| q.eval(p))
        .reduce(|a, b| smooth_min(a, b, BLEND))
        .expect("nonempty")
}

/// Surface nets over a regular grid: one vertex per sign-changing cell at the
/// mean of its edge crossings, one quad per sign-changing grid edge.
fn surface_nets(
    f: &dyn Fn(&Point3<f64>) -> f64,
    lo: Point3<f64>,
    hi: Point3<f64>,
    h: f64,
) -> (Vec<Point3<f64>>, Vec<[usize; 3]>) {
    let n = ((hi - lo) / h).map(|x| x.ceil() as usize + 1);
    let (nx, ny, nz) = (n.x, n.y, n.z);
    let gid = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
    let pos = |i: usize, j: usize, k: usize| lo + Vector3::new(i as f64, j as f64, k as f64) * h;
    let mut values = vec![0.0; nx * ny * nz];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                values[gid(i, j, k)] = f(&pos(i, j, k));
            }
        }
    }
    const CORNERS: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];
    const EDGES: [[usize; 2]; 12] = [
        [0, 1],
        [2, 3],
        [4, 5],
        [6, 7],
        [0, 2],
        [1, 3],
        [4, 6],
        [5, 7],
        [0, 4],
        [1, 5],
        [2, 6],
        [3, 7],
    ];
    let cid = |i: usize, j: usize, k: usize| (i * (ny - 1) + j) * (nz - 1) + k;
    let mut cell_vertex = vec![usize::MAX; (nx - 1) * (ny - 1) * (nz - 1)];
    let mut vertices = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let c = CORNERS.map(|o| values[gid(i + o[0], j + o[1], k + o[2])]);
                if c.iter().all(|&v| v < 0.0) || c.iter().all(|&v| v >= 0.0) {
                    continue;
                }
                let mut acc = Vector3::zeros();
                let mut count = 0.0;
                for [e0, e1] in EDGES {
                    if (c[e0] < 0.0) != (c[e1] < 0.0) {
                        let t = c[e0] / (c[e0] - c[e1]);
                        let p0 = Vector3::from(CORNERS[e0].map(|x| x as f64));
                        let p1 = Vector3::from(CORNERS[e1].map(|x| x as f64));
                        acc += p0 + (p1 - p0) * t;
                        count += 1.0;
                    }
                }
                cell_vertex[cid(i, j, k)] = vertices.len();
                vertices.push(pos(i, j, k) + acc / count * h);
            }
        }
    }
    let mut triangles = Vec::new();
    let mut emit = |quad: [usize; 4], outward: Vector3<f64>, verts: &[Point3<f64>]| {
        let d02 = (verts[quad[0]] - verts[quad[2]]).norm_squared();
        let d13 = (verts[quad[1]] - verts[quad[3]]).norm_squared();
        let tris = if d02 <= d13 {
            [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]]
        } else {
            [[quad[0], quad[1], quad[3]], [quad[1], quad[2], quad[3]]]
        };
        for mut t in tris {
            let nrm = (verts[t[1]] - verts[t[0]]).cross(&(verts[t[2]] - verts[t[0]]));
            if nrm.dot(&outward) < 0.0 {
                t.swap(1, 2);
            }
            triangles.push(t);
        }
    };
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            for k in 1..nz - 1 {
                let v0 = values[gid(i, j, k)];
                for axis in 0..3 {
                    let (a, b, c) = match axis {
                        0 => (i + 1, j, k),
                        1 => (i, j + 1, k),
                        _ => (i, j, k + 1),
                    };
                    if a >= nx || b >= ny || c >= nz {
                        continue;
                    }
                    let v1 = values[gid(a, b, c)];
                    if (v0 < 0.0) == (v1 < 0.0) {
                        continue;
                    }
                    // the four cells sharing this edge, in cyclic order
                    let cells: [[usize; 3]; 4] = match axis {
                        0 => [[i, j - 1, k - 1], [i, j, k - 1], [i, j, k], [i, j - 1, k]],
                        1 => [[i - 1, j, k - 1], [i, j, k - 1], [i, j, k], [i - 1, j, k]],
                        _ => [[i - 1, j - 1, k], [i, j - 1, k], [i, j, k], [i - 1, j, k]],
                    };
                    let quad = cells.map(|[x, y, z]| cell_vertex[cid(x, y, z)]);
                    if quad.contains(&usize::MAX) {
                        continue;
                    }
                    let mut dir = Vector3::zeros();
                    dir[axis] = if v0 < 0.0 { 1.0 } else { -1.0 };
                    emit(quad, dir, &vertices);
                }
            }
        }
    }
    (vertices, triangles)
}

/// Keeps the largest connected component and drops unreferenced vertices.
fn largest_component(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let (labels, count) = connected_components(mesh);
    let mut sizes = vec![0usize; count];
    for tri in mesh.triangles() {
        sizes[labels[tri[0]]] += 1;
    }
    let keep = (0..count).max_by_key(|&c| sizes[c]).unwrap_or(0);
    let mut remap = vec![usize::MAX; mesh.vertex_count()];
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for tri in mesh.triangles() {
        if labels[tri[0]] != keep {
            continue;
        }
        tris.push(tri.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = verts.len();
                verts.push(mesh.vertices()[v]);
            }
            remap[v]
        }));
    }
    Ok(TriangleMesh::new(verts, tris)?.0)
}

fn snap_to_level_set(f: &dyn Fn(&Point3<f64>) -> f64, p: Point3<f64>, max_step: f64) -> Point3<f64> {
    const H: f64 = 1e-5;
    let v = f(&p);
    let g = Vector3::new(
        f(&(p + Vector3::x() * H)) - f(&(p - Vector3::x() * H)),
        f(&(p + Vector3::y() * H)) - f(&(p - Vector3::y() * H)),
        f(&(p + Vector3::z() * H)) - f(&(p - Vector3::z() * H)),
    ) / (2.0 * H);
    let g2 = g.norm_squared();
    if g2 < 1e-12 {
        return p;
    }
    let step = g * (v / g2);
    let len = step.norm();
    p - if len > max_step { step * (max_step / len) } else { step }
}

fn limits(x: [f64; 2], y: [f64; 2], z: [f64; 2]) -> Option<AngleLimits> {
    Some([x, y, z])
}

/// Joints and bones of the humanoid, with marker counts summing to 26.
pub fn humanoid_skeleton() -> Skeleton {
    let mut joints = Vec::new();
    let mut add = |name: &str, p: [f64; 3], lim: Option<AngleLimits>| {
        joints.push(Joint {
            name: name.into(),
            position: Point3::from(p),
            limits: lim,
        });
        joints.len() - 1
    };
    let pelvis = add(
        "pelvis",
        [0.0, 0.95, 0.0],
        limits([-0.2, 0.2], [-0.5, 0.5], [-0.15, 0.15]),
    );
    let spine = add("spine", [0.0, 1.10, 0.0], limits([-0.3, 0.3], [-0.3, 0.3], [-0.2, 0.2]));
    let chest = add(
        "chest",
        [0.0, 1.30, 0.0],
        limits([-0.2, 0.2], [-0.2, 0.2], [-0.15, 0.15]),
    );
    let neck = add("neck", [0.0, 1.48, 0.0], limits([-0.3, 0.3], [-0.5, 0.5], [-0.2, 0.2]));
    let head = add("head", [0.0, 1.58, 0.0], limits([-0.2, 0.2], [-0.2, 0.2], [-0.1, 0.1]));
    let head_top = add("head_top", [0.0, 1.78, 0.0], None);
    let mut bones = Vec::new();
    let mut bone = |name: String, parent: usize, child: usize, axis: Vector3<f64>, markers: usize| {
        bones.push(Bone {
            name,
            parent,
            child,
            polar_axis: axis,
            markers,
            rings: 1,
            z_range: [0.1, 0.9],
        });
    };
    let fwd = Vector3::z();
    bone("lower_back".into(), pelvis, spine, fwd, 2);
    bone("upper_back".into(), spine, chest, fwd, 2);
    bone("neck".into(), chest, neck, fwd, 0);
    bone("head_base".into(), neck, head, fwd, 0);
    bone("skull".into(), head, head_top, fwd, 2);
    for (side, sx) in [("l", 1.0), ("r", -1.0)] {
        // positive side angles are mirrored for the right half
        let m = |lo: f64, hi: f64| if sx > 0.0 { [lo, hi] } else { [-hi, -lo] };
        let hip = add(
            &format!("{side}_hip"),
            [0.09 * sx, 0.90, 0.0],
            limits([-1.0, 0.35], [-0.3, 0.3], m(-0.1, 0.5)),
        );
        let knee = add(
            &format!("{side}_knee"),
            [0.10 * sx, 0.50, 0.01],
            limits([0.0, 1.4], [0.0, 0.0], [0.0, 0.0]),
        );
        let ankle = add(
            &format!("{side}_ankle"),
            [0.10 * sx, 0.08, -0.01],
            limits([-0.3, 0.4], [-0.1, 0.1], [-0.1, 0.1]),
        );
        let toe = add(&format!("{side}_toe"), [0.10 * sx, 0.035, 0.15], None);
        let shoulder = add(
            &format!("{side}_shoulder"),
            [0.18 * sx, 1.40, 0.0],
            limits([-0.5, 0.5], m(-0.9, 0.3), m(-1.2, 0.5)),
        );
        let elbow = add(
            &format!("{side}_elbow"),
            [0.45 * sx, 1.40, -0.01],
            limits([0.0, 0.0], m(-1.5, 0.0), [0.0, 0.0]),
        );
        let wrist = add(
            &format!("{side}_wrist"),
            [0.70 * sx, 1.40, 0.0],
            limits([-0.3, 0.3], [-0.3, 0.3], [-0.3, 0.3]),
        );
        let tip = add(&format!("{side}_hand_tip"), [0.80 * sx, 1.40, 0.01], None);
        bone(format!("{side}_pelvis"), pelvis, hip, fwd, 0);
        bone(format!("{side}_thigh"), hip, knee, fwd, 2);
        bone(format!("{side}_shin"), knee, ankle, fwd, 2);
        bone(format!("{side}_foot"), ankle, toe, Vector3::y(), 1);
        bone(format!("{side}_clavicle"), chest, shoulder, fwd, 0);
        bone(format!("{side}_upper_arm"), shoulder, elbow, fwd, 2);
        bone(format!("{side}_forearm"), elbow, wrist, fwd, 2);
        bone(format!("{side}_hand"), wrist, tip, Vector3::y(), 1);
    }
    Skeleton::new(joints, bones).expect("humanoid rig is a valid tree")
}

/// Meshes the humanoid body and, if requested, attaches skinning weights.
pub fn humanoid(opts: &HumanoidOptions) -> Result<(TriangleMesh, Skeleton)> {
    if !(opts.cell > 0.002) {
        return Err(Error::InvalidInput(format!("grid cell {} is too small", opts.cell)));
    }
    let parts = body_parts();
    let f = |p: &Point3<f64>| body_sdf(&parts, p);
    let pad = 2.0 * opts.cell;
    let lo = Point3::new(-0.85 - pad, -0.01 - pad, -0.2 - pad);
    let hi = Point3::new(0.85 + pad, 1.80 + pad, 0.25 + pad);
    let (mut verts, tris) = surface_nets(&f, lo, hi, opts.cell);
    for _ in 0..opts.projection_steps {
        for p in &mut verts {
            *p = snap_to_level_set(&f, *p, 0.5 * opts.cell);
        }
    }
    let (raw, _) = TriangleMesh::new(verts, tris)?;
    let mesh = largest_component(&raw)?;
    let skeleton = humanoid_skeleton();
    if !opts.weights {
        return Ok((mesh, skeleton));
    }
    let weights = compute_skinning_weights(&mesh, &skeleton, &HeatOptions::default())?;
    Ok((mesh, skeleton.with_weights(weights)?))
}
