mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_pose, random_rotation};
use postcn_core::augmentation::apply_pipeline_with;
use postcn_core::heatmap::HeatmapSequence;
use postcn_core::losses::{loss_2d, loss_multiview, rotation_matrix};
use postcn_core::skeleton::{bone_lengths, bones_from_pose};
use postcn_core::synthdata::generate_sequence;
use postcn_core::{
    extract_peaks, mpjpe, p_mpjpe, pck3d, procrustes_align, render_heatmaps, render_sequence,
    spatial_kcs, temporal_kcs, AugmentationConfig, MotionSpec, OrthoProjection, Pose2D, Pose3D,
    PoseSequence2D, SkeletonTopology,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * scale.max(1e-300))
}

fn topo() -> SkeletonTopology {
    SkeletonTopology::h36m()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bones_ignore_translation(seed in any::<u64>(), dx in -1e4..1e4f64, dy in -1e4..1e4f64, dz in -1e4..1e4f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_pose(&mut rng, 17, 800.0);
        let a = bones_from_pose(&p, &topo()).unwrap();
        let b = bones_from_pose(&p.translated([dx, dy, dz]), &topo()).unwrap();
        for (u, v) in a.columns.iter().zip(&b.columns) {
            for ax in 0..3 {
                prop_assert!((u[ax] - v[ax]).abs() <= 1e-12 * (dx.abs() + dy.abs() + dz.abs() + 800.0) * 4.0);
            }
        }
    }

    #[test]
    fn bones_rotate_with_the_pose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_pose(&mut rng, 17, 800.0);
        let r = random_rotation(&mut rng);
        let rotated = bones_from_pose(&r.apply(&p), &topo()).unwrap();
        let expected = bones_from_pose(&p, &topo()).unwrap().transformed(r.matrix());
        let flat = |b: &postcn_core::BoneMatrix| b.columns.iter().flatten().copied().collect::<Vec<_>>();
        prop_assert!(close(&flat(&rotated), &flat(&expected), 1e-9));
    }

    #[test]
    fn kcs_diagonal_holds_squared_lengths(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bones_from_pose(&random_pose(&mut rng, 17, 800.0), &topo()).unwrap();
        let psi = spatial_kcs(&b);
        for (m, len) in bone_lengths(&b).iter().enumerate() {
            prop_assert!(rel(psi.get(m, m), len * len) <= 1e-9);
        }
    }

    #[test]
    fn kcs_is_rotation_invariant(seed in any::<u64>(), interval in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = topo();
        let a = bones_from_pose(&random_pose(&mut rng, 17, 800.0), &t).unwrap();
        let b = bones_from_pose(&random_pose(&mut rng, 17, 800.0), &t).unwrap();
        let r = random_rotation(&mut rng);
        let (ra, rb) = (a.transformed(r.matrix()), b.transformed(r.matrix()));
        prop_assert!(close(&spatial_kcs(&a).psi, &spatial_kcs(&ra).psi, 1e-9));
        let phi = temporal_kcs(&a, &b, interval).unwrap();
        let rphi = temporal_kcs(&ra, &rb, interval).unwrap();
        prop_assert!(close(&phi.phi, &rphi.phi, 1e-9));
    }

    #[test]
    fn temporal_diagonal_is_length_change(seed in any::<u64>(), factor in 0.5..1.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = bones_from_pose(&random_pose(&mut rng, 17, 800.0), &topo()).unwrap();
        let b = a.scaled(factor);
        let phi = temporal_kcs(&a, &b, 1).unwrap();
        for (m, len) in bone_lengths(&a).iter().enumerate() {
            let want = (factor * len).powi(2) - len * len;
            prop_assert!((phi.get(m, m) - want).abs() <= 1e-9 * len * len * 2.0);
        }
    }

    #[test]
    fn spatial_kcs_is_positive_semidefinite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bones_from_pose(&random_pose(&mut rng, 17, 800.0), &topo()).unwrap();
        let psi = spatial_kcs(&b);
        let m = psi.bones;
        let matrix = nalgebra::DMatrix::from_row_slice(m, m, &psi.psi);
        let trace = matrix.trace();
        let min = matrix.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &v| a.min(v));
        prop_assert!(min >= -1e-9 * trace);
    }

    #[test]
    fn render_then_extract_recovers_grid_joints(
        cols in prop::collection::vec(0usize..32, 17),
        rows in prop::collection::vec(0usize..24, 17),
        sigma in 1.0..4.0f64,
    ) {
        let pose = Pose2D::new(cols.iter().zip(&rows).map(|(&c, &r)| [c as f64, r as f64]).collect());
        let stack = render_heatmaps(&pose, sigma, (24, 32)).unwrap();
        let peaks = extract_peaks(&stack);
        prop_assert_eq!(peaks.pose.coords, pose.coords);
        prop_assert!(peaks.confidence.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn masking_only_zeroes_channels(seed in any::<u64>(), point in 0.0..0.6f64, frame in 0.0..0.4f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Pose2D> = (0..12)
            .map(|_| Pose2D::new((0..17).map(|_| [rng.random_range(0.0..16.0), rng.random_range(0.0..16.0)]).collect()))
            .collect();
        let clean_poses = PoseSequence2D::new(frames);
        let config = AugmentationConfig {
            frame_occlusion_rate: frame,
            point_occlusion_rate: point,
            noise_amplitude: 0.0,
            shift_probability: 0.0,
            swap_probability: 0.0,
            resolution: [16, 16],
            ..AugmentationConfig::default()
        };
        let clean: HeatmapSequence = render_sequence(&clean_poses, config.sigma, (16, 16)).unwrap();
        let out = apply_pipeline_with(&config, &clean_poses, &topo(), &mut rng).unwrap();
        for t in 0..12 {
            for k in 0..17 {
                let (a, b) = (out.heatmaps.channel(t, k), clean.channel(t, k));
                for (x, y) in a.iter().zip(b) {
                    prop_assert!(*x == *y || *x == 0.0);
                }
                let zeroed = out.mask.frames.contains(&t) || out.mask.points.contains(&(t, k));
                if zeroed {
                    prop_assert!(a.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn multiview_loss_vanishes_for_consistent_views(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v1: Vec<_> = (0..4).map(|_| random_pose(&mut rng, 17, 800.0)).collect();
        let r = random_rotation(&mut rng);
        let v2: Vec<_> = v1.iter().map(|p| r.apply(p)).collect();
        prop_assert!(loss_multiview(&v1, &v2, &r).unwrap() <= 1e-12);
    }

    #[test]
    fn loss_2d_ignores_depth(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = OrthoProjection::for_topology(&topo());
        let x = random_pose(&mut rng, 17, 800.0);
        let mut y = x.clone();
        for c in &mut y.coords {
            c[2] = rng.random_range(-2000.0..2000.0);
        }
        let mut target = Pose2D::new((0..17).map(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]).collect());
        target.visibility[3] = false;
        let a = loss_2d(&[x], &[target.clone()], &proj).unwrap();
        let b = loss_2d(&[y], &[target], &proj).unwrap();
        prop_assert_eq!(a.value, b.value);
    }

    #[test]
    fn euler_rotations_are_orthonormal(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64) {
        let r = *rotation_matrix(a, b, c).matrix();
        let err = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
        prop_assert!(err <= 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn alignment_never_hurts(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<_> = (0..3).map(|_| random_pose(&mut rng, 17, 800.0)).collect();
        let pred: Vec<_> = (0..3).map(|_| random_pose(&mut rng, 17, 800.0)).collect();
        prop_assert!(p_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
    }

    #[test]
    fn procrustes_residual_ignores_similarity_of_pred(seed in any::<u64>(), s in 0.2..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_pose(&mut rng, 17, 800.0);
        let pred = random_pose(&mut rng, 17, 800.0);
        let r = random_rotation(&mut rng);
        let moved = scaled(&r.apply(&pred), s).translated([rng.random_range(-1e3..1e3), 5.0, -40.0]);
        let (a, _) = procrustes_align(&pred, &gt).unwrap();
        let (b, _) = procrustes_align(&moved, &gt).unwrap();
        let ra = mpjpe(&[a], &[gt.clone()]).unwrap();
        let rb = mpjpe(&[b], &[gt]).unwrap();
        prop_assert!((ra - rb).abs() <= 1e-9 * ra.max(1.0));
    }

    #[test]
    fn pck_grows_with_threshold(seed in any::<u64>(), lo in 0.0..400.0f64, extra in 0.0..400.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<_> = (0..3).map(|_| random_pose(&mut rng, 17, 300.0)).collect();
        let pred: Vec<_> = (0..3).map(|_| random_pose(&mut rng, 17, 300.0)).collect();
        prop_assert!(pck3d(&pred, &gt, lo).unwrap() <= pck3d(&pred, &gt, lo + extra).unwrap());
    }
}

fn scaled(p: &Pose3D, s: f64) -> Pose3D {
    Pose3D::new(
        p.coords
            .iter()
            .map(|c| [c[0] * s, c[1] * s, c[2] * s])
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noiseless_gait_keeps_bone_lengths(speed in 0.25..3.0f64, phase in 0.0..6.0f64, heading in -3.0..3.0f64) {
        let spec = MotionSpec { frames: 40, speed_multiplier: speed, phase, heading, ..MotionSpec::default() };
        let seq = generate_sequence(&spec).unwrap();
        let t = topo();
        for pair in seq.frames.windows(2) {
            let a = bones_from_pose(&pair[0], &t).unwrap();
            let b = bones_from_pose(&pair[1], &t).unwrap();
            let phi = temporal_kcs(&a, &b, 1).unwrap();
            for m in 0..t.num_bones() {
                prop_assert!(phi.get(m, m).abs() <= 1e-9 * spatial_kcs(&a).get(m, m).max(1.0));
            }
        }
    }

    #[test]
    fn doubling_speed_doubles_velocity(phase in 0.0..6.3f64, frame in 1.0..50.0f64) {
        let slow = MotionSpec { speed_multiplier: 1.0, phase, ..MotionSpec::default() };
        let fast = MotionSpec { speed_multiplier: 2.0, phase, ..MotionSpec::default() };
        // same gait phase: the fast sequence reaches it in half the frames
        let (ts, tf) = (frame, frame / 2.0);
        prop_assert!((slow.phase_at(ts) - fast.phase_at(tf)).abs() < 1e-12);
        let h = 1e-4;
        let velocity = |spec: &MotionSpec, t: f64| {
            let (a, b) = (spec.pose_at(t + h), spec.pose_at(t - h));
            a.coords.iter().zip(&b.coords)
                .map(|(p, q)| [(p[0] - q[0]) / (2.0 * h), (p[1] - q[1]) / (2.0 * h), (p[2] - q[2]) / (2.0 * h)])
                .collect::<Vec<_>>()
        };
        let (vs, vf) = (velocity(&slow, ts), velocity(&fast, tf));
        for (a, b) in vs.iter().zip(&vf) {
            let (na, nb) = (a.iter().map(|v| v * v).sum::<f64>().sqrt(), b.iter().map(|v| v * v).sum::<f64>().sqrt());
            prop_assert!(rel(nb, 2.0 * na) <= 1e-6, "{} vs {}", nb, 2.0 * na);
        }
    }
}
