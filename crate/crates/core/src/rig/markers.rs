use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Skeleton;
use crate::error::{Error, Result};
use crate::mesh::{ray_intersect, SurfacePoint, TriangleMesh};

/// Where a marker came from: bone index, azimuth φ (radians, after any
/// jitter) and axial offset z (meters from the bone's parent joint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerProvenance {
    pub bone: usize,
    pub phi: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseMarker {
    pub point: SurfacePoint,
    pub provenance: MarkerProvenance,
}

/// The S sparse markers of a template.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMarkerSet {
    markers: Vec<SparseMarker>,
}

impl SparseMarkerSet {
    pub fn new(markers: Vec<SparseMarker>) -> Result<Self> {
        if markers.is_empty() {
            return Err(Error::InvalidInput("marker set is empty".into()));
        }
        for m in &markers {
            SurfacePoint::new(m.point.triangle, m.point.barycentric)?;
        }
        Ok(Self { markers })
    }

    /// Markers sitting exactly on the given vertices (bone provenance 0).
    pub fn at_vertices(mesh: &TriangleMesh, vertices: &[usize]) -> Result<Self> {
        let mut markers = Vec::with_capacity(vertices.len());
        for &v in vertices {
            let (t, corner) = mesh
                .triangles()
                .iter()
                .enumerate()
                .find_map(|(t, tri)| tri.iter().position(|&x| x == v).map(|c| (t, c)))
                .ok_or(Error::OutOfRange {
                    index: v,
                    len: mesh.vertex_count(),
                })?;
            markers.push(SparseMarker {
                point: SurfacePoint::at_corner(t, corner),
                provenance: MarkerProvenance {
                    bone: 0,
                    phi: 0.0,
                    z: 0.0,
                },
            });
        }
        Self::new(markers)
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn markers(&self) -> &[SparseMarker] {
        &self.markers
    }

    pub fn check(&self, mesh: &TriangleMesh, bones: Option<usize>) -> Result<()> {
        for m in &self.markers {
            m.point.check(mesh)?;
            if let Some(nb) = bones {
                if m.provenance.bone >= nb {
                    return Err(Error::OutOfRange {
                        index: m.provenance.bone,
                        len: nb,
                    });
                }
            }
        }
        Ok(())
    }

    /// Vertex each marker snaps to for distance computations.
    pub fn source_vertices(&self, mesh: &TriangleMesh) -> Vec<usize> {
        self.markers.iter().map(|m| m.point.nearest_vertex(mesh)).collect()
    }

    pub fn positions(&self, mesh: &TriangleMesh) -> Vec<Point3<f64>> {
        self.markers.iter().map(|m| m.point.position(mesh)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlacementOptions {
    /// Half-width of the uniform φ jitter applied on retries (degrees).
    pub jitter_deg: f64,
    pub retries: usize,
    pub seed: u64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            jitter_deg: 5.0,
            retries: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementFailure {
    pub bone: usize,
    pub phi: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct PlacementReport {
    pub markers: SparseMarkerSet,
    pub failures: Vec<PlacementFailure>,
}

/// `(φ, z-fraction)` grid for one bone. Markers are split over `rings`
/// z-levels as evenly as possible; φ is uniform on `[0, 2π)` within a ring.
fn bone_grid(markers: usize, rings: usize, z_range: [f64; 2]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(markers);
    if markers == 0 {
        return out;
    }
    let [lo, hi] = z_range;
    for r in 0..rings {
        let count = markers / rings + usize::from(r < markers % rings);
        let zf = if rings == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * r as f64 / (rings - 1) as f64
        };
        for j in 0..count {
            out.push((std::f64::consts::TAU * j as f64 / count as f64, zf));
        }
    }
    out
}

/// Cylindrical frame of a bone: (axis, φ = 0 direction, φ = 90° direction).
fn bone_frame(axis: &Vector3<f64>, polar: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let a = axis.normalize();
    let u = polar - a * polar.dot(&a);
    if u.norm() < 1e-9 {
        return Err(Error::InvalidRig("polar axis is parallel to the bone".into()));
    }
    let u = u.normalize();
    Ok((a, u, a.cross(&u)))
}

/// Places each bone's sparse markers by casting rays perpendicular to the
/// bone axis and keeping the nearest mesh intersection.
///
/// Missed rays are retried with φ jittered uniformly within
/// `±jitter_deg`; rays that keep missing are reported as failures. A bone
/// whose rays all miss is an error.
pub fn place_sparse_markers(
    mesh: &TriangleMesh,
    skeleton: &Skeleton,
    opts: PlacementOptions,
) -> Result<PlacementReport> {
    let mut markers = Vec::with_capacity(skeleton.marker_count());
    let mut failures = Vec::new();
    for (b, bone) in skeleton.bones().iter().enumerate() {
        if bone.markers == 0 {
            continue;
        }
        let (start, end) = skeleton.bone_segment(b);
        let axis = end - start;
        let length = axis.norm();
        if length < 1e-12 {
            return Err(Error::InvalidRig(format!("bone '{}' has zero length", bone.name)));
        }
        let (a, u, v) = bone_frame(&axis, &bone.polar_axis)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(b as u64));
        let mut placed = 0;
        let grid = bone_grid(bone.markers, bone.rings, bone.z_range);
        for &(phi0, zf) in &grid {
            let z = zf * length;
            let origin = start + a * z;
            let mut phi = phi0;
            let mut hit = None;
            for attempt in 0..=opts.retries {
                if attempt > 0 {
                    let j = opts.jitter_deg.to_radians();
                    phi = phi0 + rng.gen_range(-j..=j);
                }
                let dir = Unit::new_normalize(u * phi.cos() + v * phi.sin());
                if let Some(h) = ray_intersect(mesh, &origin, &dir)? {
                    hit = Some(h);
                    break;
                }
            }
            match hit {
                Some(h) => {
                    placed += 1;
                    markers.push(SparseMarker {
                        point: h.point,
                        provenance: MarkerProvenance { bone: b, phi, z },
                    });
                }
                None => failures.push(PlacementFailure { bone: b, phi: phi0, z }),
            }
        }
        if placed == 0 {
            return Err(Error::PlacementFailed {
                bone: bone.name.clone(),
                rays: grid.len(),
            });
        }
    }
    if !failures.is_empty() {
        log::warn!("{} marker rays missed the mesh", failures.len());
    }
    Ok(PlacementReport {
        markers: SparseMarkerSet::new(markers)?,
        failures,
    })
}

/// ASCII sidecar, one marker per line:
/// `id bone phi z triangle b0 b1 b2`.
pub fn write_marker_sidecar(markers: &SparseMarkerSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("# id bone phi z triangle b0 b1 b2\n");
    for (i, m) in markers.markers().iter().enumerate() {
        let p = &m.provenance;
        let [b0, b1, b2] = m.point.barycentric;
        let _ = writeln!(
            s,
            "{i} {} {:?} {:?} {} {b0:?} {b1:?} {b2:?}",
            p.bone, p.phi, p.z, m.point.triangle
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_marker_sidecar(path: impl AsRef<Path>) -> Result<SparseMarkerSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut markers = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse("marker sidecar", format!("line {}", n + 1));
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad());
        markers.push(SparseMarker {
            point: SurfacePoint::new(int(4)?, [num(5)?, num(6)?, num(7)?])?,
            provenance: MarkerProvenance {
                bone: int(1)?,
                phi: num(2)?,
                z: num(3)?,
            },
        });
    }
    SparseMarkerSet::new(markers)
}
