use super::{triangle_area, vertex_distances, TriangleMesh};

pub fn surface_area(mesh: &TriangleMesh) -> f64 {
    (0..mesh.triangle_count())
        .map(|t| {
            let [a, b, c] = mesh.triangle_points(t);
            triangle_area(&a, &b, &c)
        })
        .sum()
}

/// Component id per vertex over the edge graph, plus component count.
/// Vertices referenced by no triangle form singleton components.
pub fn connected_components(mesh: &TriangleMesh) -> (Vec<usize>, usize) {
    let graph = mesh.edge_graph();
    let n = graph.vertex_count();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = count;
        stack.push(seed);
        while let Some(v) = stack.pop() {
            for (u, _) in graph.neighbors(v) {
                if label[u] == usize::MAX {
                    label[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

#[derive(Debug, Clone, Copy)]
pub struct DiameterOptions {
    /// Number of farthest-point-sampled source vertices.
    pub samples: usize,
}

impl Default for DiameterOptions {
    fn default() -> Self {
        Self { samples: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicDiameter {
    pub diameter: f64,
    /// True when the mesh has more than one component; the value then refers
    /// to the largest one.
    pub disconnected: bool,
}

/// Approximate geodesic diameter: the largest finite distance seen from a
/// farthest-point sample of sources in the largest component.
pub fn geodesic_diameter(mesh: &TriangleMesh, opts: DiameterOptions) -> GeodesicDiameter {
    let (label, count) = connected_components(mesh);
    let mut sizes = vec![0usize; count];
    for &l in &label {
        sizes[l] += 1;
    }
    let largest = (0..count).max_by_key(|&c| (sizes[c], usize::MAX - c)).unwrap_or(0);
    if count > 1 {
        log::warn!("mesh has {count} components; diameter uses the largest");
    }
    let n = mesh.vertex_count();
    let mut source = (0..n).find(|&v| label[v] == largest).unwrap_or(0);
    let mut nearest_source = vec![f64::INFINITY; n];
    let mut diameter: f64 = 0.0;
    for _ in 0..opts.samples.max(1) {
        let d = vertex_distances(mesh, source);
        for (v, &dv) in d.iter().enumerate() {
            if dv.is_finite() {
                diameter = diameter.max(dv);
                nearest_source[v] = nearest_source[v].min(dv);
            }
        }
        let next = (0..n)
            .filter(|&v| label[v] == largest)
            .max_by(|&a, &b| nearest_source[a].total_cmp(&nearest_source[b]));
        match next {
            Some(v) if nearest_source[v] > 0.0 => source = v,
            _ => break,
        }
    }
    GeodesicDiameter {
        diameter,
        disconnected: count > 1,
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;

    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn unit_triangle_area() {
        let h = 3f64.sqrt() / 2.0;
        let (mesh, _) = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.5, h, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!((surface_area(&mesh) - 3f64.sqrt() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_area_near_analytic() {
        let mesh = primitives::icosphere(1.0, 3);
        let rel = (surface_area(&mesh) - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI);
        assert!(rel < 0.03, "relative error {rel}");
    }

    #[test]
    fn chain_diameter() {
        let d = geodesic_diameter(&primitives::chain(10), DiameterOptions::default());
        assert_eq!(d.diameter, 10.0);
        assert!(!d.disconnected);
    }

    #[test]
    fn disconnected_uses_largest_component() {
        let small = primitives::chain(3);
        let big = primitives::chain(10);
        let moved = big
            .with_positions(
                big.vertices()
                    .iter()
                    .map(|p| p + nalgebra::Vector3::new(0.0, 5.0, 0.0))
                    .collect(),
            )
            .unwrap();
        let d = geodesic_diameter(&primitives::disjoint_union(&small, &moved), DiameterOptions::default());
        assert_eq!(d.diameter, 10.0);
        assert!(d.disconnected);
    }
}
