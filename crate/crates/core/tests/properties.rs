use std::collections::HashSet;

use nalgebra::UnitQuaternion;
use ppf_core::evaluation::{is_correct, vsd_error, PoseRecord, VSDParams};
use ppf_core::geometry::{estimate_normals, is_unit, KdTree, OrientedPointCloud, RigidTransform, TriangleMesh, Vec3};
use ppf_core::io::{load_depth_png, save_depth_png};
use ppf_core::matching::*;
use ppf_core::ppf::*;
use ppf_core::preprocess::{preprocess, subsample, SubsampleParams};
use ppf_core::verification::{render_depth, CameraIntrinsics, DepthImage, RenderModel};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3> {
    vec3(1.0)
        .prop_filter("degenerate direction", |v| v.norm() > 0.1)
        .prop_map(|v| v.normalize())
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (direction(), 0.0..std::f64::consts::PI, vec3(500.0)).prop_map(|(axis, angle, t)| {
        RigidTransform::from_quaternion(&UnitQuaternion::from_scaled_axis(axis * angle), t)
    })
}

fn cloud(n: std::ops::Range<usize>, extent: f64) -> impl Strategy<Value = OrientedPointCloud> {
    prop::collection::vec((vec3(extent), direction()), n).prop_map(|v| {
        let (p, n): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        OrientedPointCloud::new(p, n).unwrap()
    })
}

fn cam() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 80.0,
        cy: 60.0,
        width: 160,
        height: 120,
    }
}

/// Accumulator filled from every key within one bin of the base key in
/// all four dimensions.
fn full_neighborhood_votes(table: &ModelTable, scene: &OrientedPointCloud, r: usize, n_alpha: u32) -> Vec<u32> {
    let q = table.quant();
    let bins = [q.n_dist_bins, q.n_angle_bins, q.n_angle_bins, q.n_angle_bins];
    let mut acc = vec![0u32; table.model().len() * n_alpha as usize];
    let mut seen = HashSet::new();
    let frame = intermediate_frame(scene.point(r), scene.normal(r));
    for j in 0..scene.len() {
        let Ok(f) = compute_ppf(scene.point(r), scene.normal(r), scene.point(j), scene.normal(j)) else {
            continue;
        };
        if j == r || f.dist > q.d_max {
            continue;
        }
        let s_bin = alpha_bin(alpha_angle(&frame, scene.point(j)), n_alpha);
        let b = discretize(&f, q).bins();
        for code in 0..81 {
            let mut k = [0u32; 4];
            let mut valid = true;
            let mut c = code;
            for d in 0..4 {
                let v = b[d] as i64 + (c % 3) as i64 - 1;
                c /= 3;
                valid &= v >= 0 && v < bins[d] as i64;
                k[d] = v.max(0) as u32;
            }
            let packed = PpfKey::from_bins(k).pack(q);
            if !valid || !seen.insert((packed, s_bin)) {
                continue;
            }
            for e in table.lookup(packed) {
                let m_bin = alpha_bin(e.alpha as f64, n_alpha);
                acc[e.ref_index as usize * n_alpha as usize + ((s_bin + n_alpha - m_bin) % n_alpha) as usize] += 1;
            }
        }
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_matches_sequential_application(a in transform(), b in transform(), p in vec3(300.0)) {
        let lhs = a.compose(&b).apply_point(&p);
        let rhs = a.apply_point(&b.apply_point(&p));
        prop_assert!((lhs - rhs).amax() < 1e-6);
        prop_assert!(a.compose(&b).is_valid(1e-6));
    }

    #[test]
    fn inverse_cancels(t in transform()) {
        let id = t.inverse().compose(&t);
        prop_assert!((id.rotation - nalgebra::Matrix3::identity()).amax() < 1e-9);
        prop_assert!(id.translation.norm() < 1e-6);
    }

    #[test]
    fn radius_query_equals_linear_scan(pts in prop::collection::vec(vec3(100.0), 1..300), c in vec3(120.0), r in 0.0..80.0f64) {
        let tree = KdTree::build(&pts);
        let got: HashSet<usize> = tree.radius_query(&c, r).into_iter().collect();
        let want: HashSet<usize> = (0..pts.len()).filter(|&i| (pts[i] - c).norm_squared() <= r * r).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn estimated_normals_are_unit(pts in prop::collection::vec(vec3(50.0), 25..120)) {
        let est = estimate_normals(&pts, 10, &Vec3::new(0.0, 0.0, -500.0)).unwrap();
        for (p, n) in est.cloud.points().iter().zip(est.cloud.normals()) {
            prop_assert!(is_unit(n));
            prop_assert!(n.dot(&(Vec3::new(0.0, 0.0, -500.0) - p)) >= 0.0);
        }
    }

    #[test]
    fn preprocess_shrinks_and_keeps_unit_normals(c in cloud(1..400, 60.0), leaf in 3.0..30.0f64) {
        let out = preprocess(&c, &SubsampleParams::with_leaf(leaf)).unwrap();
        prop_assert!(!out.is_empty() && out.len() <= c.len());
        prop_assert!(out.normals().iter().all(is_unit));
        prop_assert_eq!(&out, &preprocess(&c, &SubsampleParams::with_leaf(leaf)).unwrap());
    }

    #[test]
    fn straight_angle_clustering_is_voxel_grid(c in cloud(1..400, 60.0), leaf in 3.0..30.0f64) {
        let params = SubsampleParams {
            normal_cluster_angle: std::f64::consts::PI,
            merge_neighbor_clusters: false,
            ..SubsampleParams::with_leaf(leaf)
        };
        let out = subsample(&c, &params).unwrap();
        let min = c.points().iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let voxels: HashSet<[i64; 3]> = c
            .points()
            .iter()
            .map(|p| {
                let r = (p - min) / leaf;
                [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
            })
            .collect();
        prop_assert_eq!(out.cloud.len(), voxels.len());
    }

    #[test]
    fn feature_ranges_and_keys(p1 in vec3(100.0), n1 in direction(), p2 in vec3(100.0), n2 in direction()) {
        let f = compute_ppf(&p1, &n1, &p2, &n2).unwrap();
        let pi = std::f64::consts::PI;
        prop_assert!(f.dist >= 0.0);
        for a in [f.angle_n1_d, f.angle_n2_d, f.angle_n1_n2] {
            prop_assert!((0.0..=pi).contains(&a));
        }
        let q = QuantizationParams::with_diameter(350.0);
        let k = discretize(&f, &q);
        prop_assert!(k.b_dist < q.n_dist_bins && k.b1 < q.n_angle_bins && k.b2 < q.n_angle_bins && k.b3 < q.n_angle_bins);
        prop_assert_eq!(PpfKey::unpack(k.pack(&q), &q), k);
    }

    #[test]
    fn peak_is_the_lowest_argmax(votes in prop::collection::vec((0u32..6, 0u32..7), 0..60)) {
        let mut acc = Accumulator::new(6, 7);
        for &(m, b) in &votes {
            acc.vote(m, b);
        }
        let cells = acc.as_slice();
        let best = cells.iter().copied().max().unwrap_or(0);
        let want = (best > 0).then(|| {
            let cell = cells.iter().position(|&v| v == best).unwrap() as u32;
            (cell / 7, cell % 7, best)
        });
        prop_assert_eq!(acc.peak(), want);
    }

    #[test]
    fn table_serialization_round_trips(model in cloud(2..40, 50.0)) {
        let q = QuantizationParams::with_diameter(model.diameter().max(1.0));
        let table = ModelTable::from_subsampled(model, SubsampleParams::with_leaf(4.0), q).unwrap();
        let bytes = table.to_bytes();
        let back = ModelTable::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(table.iter().all(|(_, e)| (e.ref_index as usize) < table.model().len()));
    }

    #[test]
    fn pose_record_json_round_trips(t in transform()) {
        let rec = PoseRecord::from(&t);
        let back: PoseRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        prop_assert_eq!(back, rec);
        prop_assert_eq!(RigidTransform::from(back), t);
    }

    #[test]
    fn correctness_is_monotone_in_the_threshold(e in 0.0..1.0f64, t1 in 0.01..0.99f64, t2 in 0.01..0.99f64) {
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let p = |t| VSDParams { t, ..VSDParams::default() };
        prop_assert!(!is_correct(e, &p(lo)) || is_correct(e, &p(hi)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn neighbor_voting_lies_between_base_and_full_neighborhood(
        model in cloud(10..50, 60.0),
        g in transform(),
        extra in cloud(0..40, 80.0),
    ) {
        let mut q = QuantizationParams::with_diameter(model.diameter());
        q.noise_fraction = 0.0;
        let base = ModelTable::from_subsampled(model.clone(), SubsampleParams::with_leaf(4.0), q).unwrap();
        q.noise_fraction = 0.3;
        let noisy = ModelTable::from_subsampled(model.clone(), SubsampleParams::with_leaf(4.0), q).unwrap();

        let mut pts: Vec<Vec3> = model.points().iter().map(|p| g.apply_point(p)).collect();
        let mut nrm: Vec<Vec3> = model.normals().iter().map(|n| g.apply_vector(n)).collect();
        pts.extend(extra.points().iter().map(|p| g.apply_point(p)));
        nrm.extend(extra.normals().iter().map(|n| g.apply_vector(n)));
        let scene = OrientedPointCloud::new(pts, nrm).unwrap();

        let params = MatchParams { scene_ref_stride: 1, ..MatchParams::default() };
        let (ib, inz) = (SceneIndex::new(&scene, &base, params.n_alpha_bins), SceneIndex::new(&scene, &noisy, params.n_alpha_bins));
        let (mut sb, mut sn) = (VoteScratch::new(&base, &params), VoteScratch::new(&noisy, &params));
        for r in 0..scene.len() {
            vote_reference(&base, &ib, r, &params, &mut sb);
            vote_reference(&noisy, &inz, r, &params, &mut sn);
            let full = full_neighborhood_votes(&noisy, &scene, r, params.n_alpha_bins);
            for ((&b, &n), &f) in sb.acc.as_slice().iter().zip(sn.acc.as_slice()).zip(&full) {
                prop_assert!(b <= n && n <= f, "ref {}: {} / {} / {}", r, b, n, f);
            }
        }
    }

    #[test]
    fn vsd_is_symmetric_and_zero_on_identity(a in transform(), b in transform()) {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(60.0, 40.0, 30.0));
        let m = RenderModel::Mesh(&mesh);
        let place = |t: RigidTransform| RigidTransform::new(t.rotation, Vec3::new(t.translation.x * 0.05, t.translation.y * 0.05, 600.0 + t.translation.z * 0.1));
        let (pa, pb) = (place(a), place(b));
        let scene = render_depth(&m, &pa, &cam()).depth;
        let p = VSDParams::default();
        let e_ab = vsd_error(&pa, &pb, &m, &scene, &cam(), &p);
        let e_ba = vsd_error(&pb, &pa, &m, &scene, &cam(), &p);
        prop_assert!((e_ab - e_ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e_ab));
        prop_assert_eq!(vsd_error(&pa, &pa, &m, &scene, &cam(), &p), 0.0);
    }

    #[test]
    fn depth_png_round_trips_counts(raw in prop::collection::vec(0u16..=u16::MAX, 12)) {
        let depth = DepthImage::from_data(4, 3, raw.iter().map(|&v| v as f64 * 0.1).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        save_depth_png(&path, &depth, 0.1).unwrap();
        let back = load_depth_png(&path, 0.1).unwrap();
        let counts: Vec<u16> = back.data.iter().map(|&d| (d / 0.1).round() as u16).collect();
        prop_assert_eq!(counts, raw);
    }
}
