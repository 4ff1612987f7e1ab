use gcspn_core::geometry::{backproject, knn, project, Point3};
use gcspn_core::graph::{gather_patches, scatter_patches, PatchGraph, PatchLayout};
use gcspn_core::grid::{CameraIntrinsics, DepthGrid, FeatureGrid};
use gcspn_core::learning::{loss_with_auxiliary, masked_loss, LossKind};
use gcspn_core::matrix::Matrix;
use gcspn_core::propagation::{attention_coefficients, softmax_slots, MlpSpec};
use gcspn_core::rng::Rng;
use proptest::prelude::*;

fn random_graph(seed: u64, ph: usize, pw: usize, rows: usize, cols: usize, k: usize) -> PatchGraph {
    let mut rng = Rng::new(seed);
    let (h, w) = (rows * ph, cols * pw);
    let layout = PatchLayout::new(h, w, ph, pw).unwrap();
    let intr = CameraIntrinsics::centered(h, w, 0.9 * w as f64);
    let l = layout.feature_len();
    let n = layout.n_nodes();
    let positions: Vec<Point3> = (0..n)
        .map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(1.0, 8.0)))
        .collect();
    let feats: Vec<f64> = (0..n * l).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let neighbors = knn(&positions, k).unwrap();
    PatchGraph::new(
        layout,
        Matrix::from_vec(n, l, feats).unwrap(),
        positions,
        neighbors,
        intr,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn replicated_plane_round_trips(
        ph in 1usize..4, pw in 1usize..4, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()
    ) {
        let (h, w) = (rows * ph, cols * pw);
        let mut rng = Rng::new(seed);
        let plane = DepthGrid::new(h, w, (0..h * w).map(|_| rng.uniform(0.0, 9.0)).collect()).unwrap();
        let layout = PatchLayout::new(h, w, ph, pw).unwrap();
        let nodes = gather_patches(&FeatureGrid::replicate(&plane, ph * pw), &layout).unwrap();
        prop_assert_eq!(scatter_patches(&nodes, &layout).unwrap(), plane);
    }

    #[test]
    fn layout_counts(ph in 1usize..6, pw in 1usize..6, rows in 1usize..6, cols in 1usize..6) {
        let layout = PatchLayout::new(rows * ph, cols * pw, ph, pw).unwrap();
        prop_assert_eq!(layout.patch_len(), ph * pw);
        prop_assert_eq!(layout.feature_len(), ph * pw + 3);
        prop_assert_eq!(layout.n_nodes(), rows * ph * cols * pw / (ph * pw));
    }

    #[test]
    fn indivisible_layout_rejected(ph in 2usize..6, rows in 1usize..6, extra in 1usize..6) {
        prop_assume!(extra % ph != 0);
        prop_assert!(PatchLayout::new(rows * ph + extra, ph, ph, 1).is_err());
    }

    #[test]
    fn project_inverts_backproject(
        p in -50.0f64..150.0, q in -50.0f64..150.0, d in 0.01f64..100.0,
        f in 10.0f64..500.0, cp in 0.0f64..100.0, cq in 0.0f64..100.0
    ) {
        let intr = CameraIntrinsics::new(f, 1.1 * f, cp, cq).unwrap();
        let (p2, q2, d2) = project(&backproject(p, q, d, &intr).unwrap(), &intr).unwrap();
        prop_assert!((p2 - p).abs() < 1e-9 && (q2 - q).abs() < 1e-9 && (d2 - d).abs() < 1e-9);
    }

    #[test]
    fn attention_columns_sum_to_one(seed in any::<u64>(), k in 1usize..6) {
        let g = random_graph(seed, 2, 2, 3, 3, k);
        let l = g.feature_len();
        let psi = MlpSpec::random(&[2 * l, 16, l - 3], &mut Rng::new(seed ^ 7)).unwrap();
        let alpha = attention_coefficients(&g, &psi).unwrap();
        prop_assert!(alpha.max_normalization_error() < 1e-9);
        prop_assert!(alpha.values().iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 12), shift in -100.0f64..100.0) {
        let a = softmax_slots(&logits, 4, 3);
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let b = softmax_slots(&shifted, 4, 3);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_pixels_never_matter(
        gt in prop::collection::vec(prop_oneof![Just(0.0f64), 0.5f64..9.0], 2..30),
        noise in prop::collection::vec(0.0f64..50.0, 30),
        seed in any::<u64>()
    ) {
        prop_assume!(gt.iter().any(|&g| g > 0.0));
        let n = gt.len();
        let mut rng = Rng::new(seed);
        let pred: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 9.0)).collect();
        let moved: Vec<f64> = pred.iter().zip(&gt).zip(&noise).map(|((&p, &g), &e)| if g > 0.0 { p } else { e }).collect();
        let gt = DepthGrid::new(1, n, gt).unwrap();
        for kind in [LossKind::L1, LossKind::SmoothL1, LossKind::L2] {
            let a = masked_loss(kind, &DepthGrid::new(1, n, pred.clone()).unwrap(), &gt).unwrap().0;
            let b = masked_loss(kind, &DepthGrid::new(1, n, moved.clone()).unwrap(), &gt).unwrap().0;
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn auxiliary_arithmetic(weight in 0.0f64..2.0, seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = Rng::new(seed);
        let mut grid = || DepthGrid::new(2, 3, (0..6).map(|_| rng.uniform(0.0, 5.0)).collect()).unwrap();
        let gt = grid();
        let last = grid();
        let inter: Vec<DepthGrid> = (0..steps).map(|_| grid()).collect();
        let r = loss_with_auxiliary(&last, &inter, &gt, weight, LossKind::L1).unwrap();
        let sum: f64 = r.auxiliary.iter().sum();
        prop_assert!((r.total - (r.main + weight * sum)).abs() <= 1e-12 * r.total.abs().max(1.0));
    }
}

#[test]
fn patch_graph_rejects_wrong_feature_length() {
    let g = random_graph(3, 2, 2, 2, 2, 2);
    let bad = Matrix::zeros(g.n_nodes(), g.feature_len() - 1);
    assert!(PatchGraph::new(g.layout, bad, g.positions.clone(), g.neighbors.clone(), g.intr).is_err());
}
