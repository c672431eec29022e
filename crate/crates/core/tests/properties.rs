use std::sync::OnceLock;

use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vmark::classifier::{soft_cross_entropy, voxelize, ClassifierModel, ModelConfig};
use vmark::correspondence::{eval_geodesic_error, match_labels, CorrespondenceMap, MatchMetric, Normalization};
use vmark::inference::{infer_multiview, infer_oneshot, InferenceInput, MultiviewOptions};
use vmark::mesh::{cotangent_laplacian, geodesic_between, primitives, ray_intersect, vertex_distances, TriangleMesh};
use vmark::render::{backproject, label_frame, render_depth, Camera, Intrinsics, LabeledPointCloud, PointSource};
use vmark::rig::{
    lbs_skin, place_sparse_markers, sample_joint_angles, sample_random_pose, PlacementOptions, Pose, RigidTransform,
    Skeleton, SparseMarkerSet,
};
use vmark::softlabel::{densify, HeatOptions, SoftLabelField};
use vmark::synthetic::{humanoid, HumanoidOptions};

fn coarse_humanoid() -> &'static (TriangleMesh, Skeleton) {
    static CELL: OnceLock<(TriangleMesh, Skeleton)> = OnceLock::new();
    CELL.get_or_init(|| {
        humanoid(&HumanoidOptions {
            cell: 0.03,
            ..Default::default()
        })
        .unwrap()
    })
}

fn test_mesh(kind: u8) -> TriangleMesh {
    match kind % 4 {
        0 => primitives::icosphere(0.5, 2),
        1 => primitives::cylinder(0.2, 0.0, 1.0, 16, 8),
        2 => primitives::dumbbell(0.6, 0.3, 0.1, 2),
        _ => primitives::grid(8, 6, 1.0, 0.7),
    }
}

fn rigid(axis: [f64; 3], angle: f64, t: [f64; 3]) -> RigidTransform {
    let axis = Vector3::from(axis);
    let r = if axis.norm() < 1e-6 {
        Rotation3::identity()
    } else {
        Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
    };
    RigidTransform::new(*r.matrix(), Vector3::from(t))
}

fn axis() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn look_at_sphere(yaw: f64, pitch: f64, size: usize) -> Camera {
    let dir = Vector3::new(pitch.cos() * yaw.cos(), pitch.sin(), pitch.cos() * yaw.sin());
    Camera::look_at(
        Intrinsics::centered(size, size, size as f64, size as f64),
        &Point3::from(dir * 2.5),
        &Point3::origin(),
        &Vector3::y(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn laplacian_is_symmetric_with_constant_kernel(kind in 0u8..4, clamp in any::<bool>()) {
        let mesh = test_mesh(kind);
        let l = cotangent_laplacian(&mesh, clamp);
        for (i, j, v) in l.triplets() {
            prop_assert_eq!(v, l.get(j, i));
        }
        let ones = vec![1.0; l.dim()];
        let k = l.mul_vec(&ones).into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(k <= 1e-10, "‖L·1‖∞ = {}", k);
    }

    #[test]
    fn edge_geodesics_obey_the_triangle_inequality(kind in 0u8..4, a in 0usize..1000, b in 0usize..1000, c in 0usize..1000) {
        let mesh = test_mesh(kind);
        let n = mesh.vertex_count();
        let (a, b, c) = (a % n, b % n, c % n);
        let da = vertex_distances(&mesh, a);
        let db = vertex_distances(&mesh, b);
        prop_assert!(da[c] <= da[b] + db[c] + 1e-12);
        prop_assert!((geodesic_between(&mesh, a, c) - da[c]).abs() <= 1e-12);
        prop_assert!((da[b] - db[a]).abs() <= 1e-12);
    }

    #[test]
    fn depth_agrees_with_ray_casting(yaw in 0.0..std::f64::consts::TAU, pitch in -1.2..1.2f64) {
        let mesh = primitives::icosphere(0.6, 2);
        let cam = look_at_sphere(yaw, pitch, 24);
        let frame = render_depth(&mesh, &cam);
        let to_world = cam.world_from_camera();
        let origin = cam.center();
        let (mut hit, mut agree) = (0usize, 0usize);
        for v in 0..24 {
            for u in 0..24 {
                let ray = cam.pixel_ray(u as f64, v as f64);
                let dir = to_world.apply_vector(&ray.normalize());
                let oracle = ray_intersect(&mesh, &origin, &dir).unwrap();
                let d = frame.depth_at(u, v);
                if d > 0.0 || oracle.is_some() {
                    hit += 1;
                    // camera-space z of the hit is its ray distance over |ray|
                    if oracle.is_some_and(|o| (o.distance / ray.norm() - d).abs() <= 1e-4) {
                        agree += 1;
                    }
                }
            }
        }
        prop_assert!(hit > 100);
        // pixels grazing a silhouette edge may differ by the inside tolerance
        prop_assert!(hit - agree <= 2, "{}/{}", agree, hit);
    }

    #[test]
    fn backprojection_reprojects_to_its_pixel(yaw in 0.0..std::f64::consts::TAU, pitch in -1.2..1.2f64) {
        let mesh = primitives::icosphere(0.6, 2);
        let cam = look_at_sphere(yaw, pitch, 32);
        let frame = render_depth(&mesh, &cam);
        let cloud = backproject(&frame, true);
        for (p, src) in cloud.points.iter().zip(&cloud.sources) {
            let PointSource::Pixel { u, v, .. } = *src else { panic!("pixel source expected") };
            let q = cam.project(p).unwrap();
            prop_assert!((q.x - u as f64).abs() < 0.5 && (q.y - v as f64).abs() < 0.5);
        }
    }

    #[test]
    fn labeled_frames_keep_partition_of_unity(yaw in 0.0..std::f64::consts::TAU, seed in 0u64..1000) {
        let mesh = primitives::icosphere(0.6, 2);
        let n = mesh.vertex_count();
        let vs: Vec<usize> = (0..4).map(|i| (seed as usize * 7 + i * 11) % n).collect();
        let mut vs = vs;
        vs.sort_unstable();
        vs.dedup();
        let field = densify(&mesh, &SparseMarkerSet::at_vertices(&mesh, &vs).unwrap(), &HeatOptions::default()).unwrap();
        let frame = render_depth(&mesh, &look_at_sphere(yaw, 0.3, 24));
        let cloud = label_frame(&frame, &mesh, &field).unwrap();
        let l = cloud.labels.unwrap();
        for j in 0..l.vertex_count() {
            prop_assert!((l.column_sum(j) - 1.0).abs() <= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn densified_fields_are_partitions_of_unity(kind in 0u8..4, picks in prop::collection::vec(0usize..10_000, 2..8)) {
        let mesh = test_mesh(kind);
        let n = mesh.vertex_count();
        let mut vs: Vec<usize> = picks.iter().map(|p| p % n).collect();
        vs.sort_unstable();
        vs.dedup();
        let field = densify(&mesh, &SparseMarkerSet::at_vertices(&mesh, &vs).unwrap(), &HeatOptions::default()).unwrap();
        for d in 0..n {
            prop_assert!((field.column_sum(d) - 1.0).abs() <= 1e-6);
        }
        for &x in field.values() {
            prop_assert!((-1e-6..=1.0 + 1e-6).contains(&f64::from(x)));
        }
    }

    #[test]
    fn identity_pose_skins_to_the_rest_mesh(_dummy in 0u8..1) {
        let (mesh, skel) = coarse_humanoid();
        let posed = lbs_skin(mesh, skel, &Pose::identity(skel.bones().len())).unwrap();
        for (a, b) in posed.vertices().iter().zip(mesh.vertices()) {
            prop_assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn skinning_commutes_with_rigid_motion(seed in 0u64..10_000, ax in axis(), angle in -3.0..3.0f64, t in [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]) {
        let (mesh, skel) = coarse_humanoid();
        let g = rigid(ax, angle, t);
        let pose = sample_random_pose(skel, seed).unwrap();
        let moved = mesh.with_positions(mesh.vertices().iter().map(|p| g.apply(p)).collect()).unwrap();
        let lhs = lbs_skin(&moved, skel, &pose.conjugated(&g)).unwrap();
        let rhs = lbs_skin(mesh, skel, &pose).unwrap();
        for (a, b) in lhs.vertices().iter().zip(rhs.vertices()) {
            prop_assert!((a - g.apply(b)).amax() <= 1e-9);
        }
    }

    #[test]
    fn random_poses_respect_joint_limits(seed in any::<u64>()) {
        let (_, skel) = coarse_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = sample_joint_angles(skel, &mut rng).unwrap();
        for (j, a) in angles.iter().enumerate() {
            if !skel.is_articulated(j) {
                prop_assert_eq!(*a, [0.0; 3]);
                continue;
            }
            let limits = skel.joints()[j].limits.unwrap();
            for k in 0..3 {
                prop_assert!(limits[k][0] <= a[k] && a[k] <= limits[k][1]);
            }
        }
    }

    #[test]
    fn marker_placement_is_deterministic(seed in 0u64..1000) {
        let (mesh, skel) = coarse_humanoid();
        let opts = PlacementOptions { seed, ..Default::default() };
        let a = place_sparse_markers(mesh, skel, opts).unwrap();
        let b = place_sparse_markers(mesh, skel, opts).unwrap();
        prop_assert_eq!(a.markers, b.markers);
        prop_assert_eq!(a.failures, b.failures);
    }

    #[test]
    fn forward_is_equivariant_to_integer_voxel_shifts(seed in 0u64..1000, shift in [-20i32..20, -20i32..20, -20i32..20]) {
        let voxel = 0.125;
        let model = ClassifierModel::new(ModelConfig {
            channels: vec![4, 8],
            voxel_size: voxel,
            normals: true,
            ..ModelConfig::new(3)
        }, seed).unwrap();
        let mesh = primitives::icosphere(0.45, 1);
        // offset keeps points away from voxel boundaries under the shift
        let base = Vector3::new(0.013, 0.027, 0.041);
        let a = LabeledPointCloud::from_mesh(&mesh, None).unwrap()
            .transformed(&RigidTransform::new(nalgebra::Matrix3::identity(), base));
        let d = Vector3::new(shift[0] as f64, shift[1] as f64, shift[2] as f64) * voxel;
        let b = a.transformed(&RigidTransform::new(nalgebra::Matrix3::identity(), d));
        let ga = voxelize(&a, voxel).unwrap();
        let gb = voxelize(&b, voxel).unwrap();
        prop_assert_eq!(ga.coords(), gb.coords());
        let (fa, fb) = (model.forward(&ga).unwrap(), model.forward(&gb).unwrap());
        prop_assert!((fa - fb).amax() <= 1e-12);
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_ln_s_at_uniform(s in 1usize..12, n in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = nalgebra::DMatrix::from_fn(s, n, |_, _| rng.gen_range(-5.0..5.0));
        let t = nalgebra::DMatrix::from_fn(s, n, |_, _| rng.gen_range(0.01..1.0));
        let sums = t.row_sum();
        let t = nalgebra::DMatrix::from_fn(s, n, |i, j| t[(i, j)] / sums[j]);
        let (loss, _) = soft_cross_entropy(&z, &t).unwrap();
        prop_assert!(loss >= -1e-12);
        let uniform = nalgebra::DMatrix::from_element(s, n, 1.0 / s as f64);
        let (l0, _) = soft_cross_entropy(&nalgebra::DMatrix::zeros(s, n), &uniform).unwrap();
        prop_assert!((l0 - (s as f64).ln()).abs() <= 1e-12);
    }

    #[test]
    fn predictions_are_normalized(seed in 0u64..1000, views in 1usize..6) {
        let model = ClassifierModel::new(ModelConfig {
            channels: vec![4, 8],
            voxel_size: 0.08,
            normals: true,
            ..ModelConfig::new(5)
        }, seed).unwrap();
        let mesh = primitives::icosphere(0.5, 2);
        let one = infer_oneshot(&model, InferenceInput::Mesh(&mesh)).unwrap();
        let opts = MultiviewOptions { views, intrinsics: Intrinsics::centered(32, 32, 30.0, 30.0), ..Default::default() };
        let multi = infer_multiview(&model, &mesh, &opts).unwrap();
        for r in [&one, &multi] {
            for j in 0..r.labels.vertex_count() {
                prop_assert!((r.labels.column_sum(j) - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn matching_a_field_with_itself_is_the_identity(s in 2usize..10, n in 2usize..200, seed in any::<u64>(), cosine in any::<bool>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
                let t: f64 = c.iter().sum();
                c.into_iter().map(|x| x / t).collect()
            })
            .collect();
        let field = SoftLabelField::from_weights(&(0..s).map(|m| cols.iter().map(|c| c[m]).collect()).collect::<Vec<_>>()).unwrap();
        let metric = if cosine { MatchMetric::Cosine } else { MatchMetric::L2 };
        let map = match_labels(&field, &field, metric).unwrap();
        // random columns are distinct with probability 1
        prop_assert_eq!(map.targets, (0..n).collect::<Vec<_>>());
        if !cosine {
            prop_assert!(map.scores.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn sqrt_area_error_is_scale_invariant(scale in 0.1..10.0f64, seed in any::<u64>()) {
        use rand::Rng;
        let mesh = primitives::icosphere(0.5, 2);
        let n = mesh.vertex_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let map = CorrespondenceMap::new(targets, vec![0.0; n], n).unwrap();
        let gt: Vec<usize> = (0..n).collect();
        let scaled = mesh.with_positions(mesh.vertices().iter().map(|p| p * scale).collect()).unwrap();
        let a = eval_geodesic_error("a", &map, &gt, &mesh, Normalization::SqrtArea).unwrap();
        let b = eval_geodesic_error("b", &map, &gt, &scaled, Normalization::SqrtArea).unwrap();
        prop_assert!((a.normalized_mean() - b.normalized_mean()).abs() <= 1e-9 * a.normalized_mean().max(1.0));
        prop_assert!((b.mean - scale * a.mean).abs() <= 1e-9 * b.mean.max(1.0));
    }
}
