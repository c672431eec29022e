use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::render::LabeledPointCloud;

/// Occupied voxels of a point cloud.
///
/// Coordinates are relative to the per-axis minimum occupied voxel, so a
/// cloud shifted by a whole number of voxels yields the same grid. Voxels are
/// sorted lexicographically by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    voxel_size: f64,
    origin: [i64; 3],
    coords: Vec<[i32; 3]>,
    point_voxel: Vec<u32>,
    member_offsets: Vec<usize>,
    members: Vec<u32>,
    /// Mean of member normals per voxel (not renormalized).
    normals: Option<Vec<[f64; 3]>>,
    targets: Option<VoxelTargets>,
}

/// Per-voxel training targets: the renormalized mean of member-point labels,
/// weighted by member count.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTargets {
    pub markers: usize,
    /// `voxels × markers`, row per voxel.
    pub values: Vec<f64>,
    /// Fraction of all points falling in each voxel; sums to 1.
    pub weights: Vec<f64>,
}

impl SparseVoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Absolute integer coordinate of relative voxel `[0, 0, 0]`.
    pub fn origin(&self) -> [i64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.point_voxel.len()
    }

    pub fn coords(&self) -> &[[i32; 3]] {
        &self.coords
    }

    /// Voxel index of every input point.
    pub fn point_voxels(&self) -> &[u32] {
        &self.point_voxel
    }

    pub fn members(&self, voxel: usize) -> &[u32] {
        &self.members[self.member_offsets[voxel]..self.member_offsets[voxel + 1]]
    }

    pub fn targets(&self) -> Option<&VoxelTargets> {
        self.targets.as_ref()
    }

    pub fn normals(&self) -> Option<&[[f64; 3]]> {
        self.normals.as_deref()
    }

    /// Input features, one channel per voxel (constant occupancy).
    pub fn features(&self) -> Vec<f64> {
        vec![1.0; self.coords.len()]
    }

    /// Occupancy followed by the mean normal, four channels per voxel.
    pub fn features_with_normals(&self) -> Result<Vec<f64>> {
        let normals = self
            .normals
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("the model expects normals, the input has none".into()))?;
        Ok(normals.iter().flat_map(|n| [1.0, n[0], n[1], n[2]]).collect())
    }

    /// Replaces the training targets with one-hot rows of their argmax.
    pub fn harden_targets(&mut self) {
        if let Some(t) = &mut self.targets {
            for row in t.values.chunks_mut(t.markers) {
                let best = argmax(row);
                row.iter_mut()
                    .enumerate()
                    .for_each(|(i, x)| *x = if i == best { 1.0 } else { 0.0 });
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn voxelize(cloud: &LabeledPointCloud, voxel_size: f64) -> Result<SparseVoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot voxelize an empty point cloud".into()));
    }
    let mut abs = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} is not finite")));
        }
        abs.push([0, 1, 2].map(|k| (p[k] / voxel_size).floor() as i64));
    }
    let mut origin = abs[0];
    for a in &abs {
        for k in 0..3 {
            origin[k] = origin[k].min(a[k]);
        }
    }
    let rel: Vec<[i32; 3]> = abs
        .iter()
        .map(|a| [0, 1, 2].map(|k| i32::try_from(a[k] - origin[k]).expect("cloud extent fits in i32 voxels")))
        .collect();
    let mut coords = rel.clone();
    coords.sort_unstable();
    coords.dedup();
    let index: HashMap<[i32; 3], u32> = coords.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
    let point_voxel: Vec<u32> = rel.iter().map(|c| index[c]).collect();

    let mut member_offsets = vec![0usize; coords.len() + 1];
    for &v in &point_voxel {
        member_offsets[v as usize + 1] += 1;
    }
    for i in 0..coords.len() {
        member_offsets[i + 1] += member_offsets[i];
    }
    let mut fill = member_offsets.clone();
    let mut members = vec![0u32; point_voxel.len()];
    for (p, &v) in point_voxel.iter().enumerate() {
        members[fill[v as usize]] = p as u32;
        fill[v as usize] += 1;
    }

    let targets = cloud.labels.as_ref().map(|labels| {
        let s = labels.marker_count();
        let n = point_voxel.len() as f64;
        let mut values = vec![0.0; coords.len() * s];
        let mut weights = vec![0.0; coords.len()];
        for (v, row) in values.chunks_mut(s).enumerate() {
            let m = &members[member_offsets[v]..member_offsets[v + 1]];
            for &p in m {
                for (k, x) in row.iter_mut().enumerate() {
                    *x += f64::from(labels.get(k, p as usize));
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            } else {
                row.iter_mut().for_each(|x| *x = 1.0 / s as f64);
            }
            weights[v] = m.len() as f64 / n;
        }
        VoxelTargets {
            markers: s,
            values,
            weights,
        }
    });

    let normals = cloud.normals.as_ref().map(|ns| {
        (0..coords.len())
            .map(|v| {
                let m = &members[member_offsets[v]..member_offsets[v + 1]];
                let mut acc = [0.0; 3];
                for &p in m {
                    let n = &ns[p as usize];
                    acc.iter_mut().zip(n.iter()).for_each(|(a, x)| *a += x);
                }
                acc.map(|a| a / m.len() as f64)
            })
            .collect()
    });

    Ok(SparseVoxelGrid {
        voxel_size,
        origin,
        coords,
        point_voxel,
        member_offsets,
        members,
        normals,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::render::PointSource;
    use crate::softlabel::SoftLabelField;

    fn cloud(points: Vec<Point3<f64>>) -> LabeledPointCloud {
        let n = points.len();
        LabeledPointCloud::new(points, None, (0..n).map(PointSource::Vertex).collect()).unwrap()
    }

    #[test]
    fn single_point() {
        let g = voxelize(&cloud(vec![Point3::new(0.3, -0.2, 1.0)]), 0.02).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.coords()[0], [0, 0, 0]);
        assert_eq!(g.members(0), &[0]);
    }

    #[test]
    fn two_separated_points() {
        let g = voxelize(
            &cloud(vec![Point3::new(0.001, 0.001, 0.001), Point3::new(0.101, 0.001, 0.001)]),
            0.02,
        )
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.coords()[1], [5, 0, 0]);
    }

    #[test]
    fn points_partition_into_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.0..0.1),
                )
            })
            .collect();
        let g = voxelize(&cloud(pts), 0.05).unwrap();
        let total: usize = (0..g.len()).map(|v| g.members(v).len()).sum();
        assert_eq!(total, 500);
        for v in 0..g.len() {
            for &p in g.members(v) {
                assert_eq!(g.point_voxels()[p as usize] as usize, v);
            }
        }
        let mut c = g.coords().to_vec();
        c.dedup();
        assert_eq!(c.len(), g.len());
    }

    #[test]
    fn shift_invariant_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = 0.04;
        let pts: Vec<_> = (0..200)
            .map(|_| {
                Point3::new(
                    (rng.gen_range(0..20) as f64 + rng.gen_range(0.2..0.8)) * v,
                    (rng.gen_range(0..20) as f64 + rng.gen_range(0.2..0.8)) * v,
                    (rng.gen_range(0..3) as f64 + rng.gen_range(0.2..0.8)) * v,
                )
            })
            .collect();
        let shifted: Vec<_> = pts.iter().map(|p| p + Vector3::new(5.0, -5.0, 5.0) * v).collect();
        let a = voxelize(&cloud(pts), v).unwrap();
        let b = voxelize(&cloud(shifted), v).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.point_voxels(), b.point_voxels());
        assert_eq!(b.origin()[0] - a.origin()[0], 5);
    }

    #[test]
    fn targets_are_mean_labels() {
        let pts = vec![
            Point3::new(0.001, 0.0, 0.0),
            Point3::new(0.002, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
        ];
        let labels = SoftLabelField::new(2, 3, vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.5]).unwrap();
        let c = LabeledPointCloud::new(pts, Some(labels), (0..3).map(PointSource::Vertex).collect()).unwrap();
        let mut g = voxelize(&c, 0.02).unwrap();
        let t = g.targets().unwrap();
        assert_eq!(t.values, vec![0.5, 0.5, 0.5, 0.5]);
        assert!((t.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        g.harden_targets();
        assert_eq!(g.targets().unwrap().values, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_empty_and_bad_size() {
        assert!(voxelize(&cloud(vec![]), 0.02).is_err());
        assert!(voxelize(&cloud(vec![Point3::origin()]), 0.0).is_err());
    }
}
