use nalgebra::DMatrix;
use proptest::prelude::*;
use transgc_core::harness::reproduce::ukb_fixture;
use transgc_core::harness::runner::column_stats;
use transgc_core::{
    correct_marginal, matrix_sqrt, merge_ld_blocks, shrinkage_derivative, shrinkage_path, theorem1_limit, BlockPartition,
    CovSource, CovarianceMatrix, ShrinkageParams,
};

fn psd(size: usize, entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_iterator(size, size, entries.iter().copied());
    &b * b.transpose() / size as f64
}

fn partition(cuts: &[usize], p: usize) -> BlockPartition {
    let mut c: Vec<usize> = cuts.iter().map(|x| 1 + x % (p - 1)).collect();
    c.sort_unstable();
    c.dedup();
    let mut ranges = Vec::new();
    let mut start = 1;
    for k in c {
        ranges.push((start, k));
        start = k + 1;
    }
    ranges.push((start, p));
    BlockPartition::new(ranges, "prop").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sqrt_squares_back(size in 1usize..12, seed in prop::collection::vec(-1.0f64..1.0, 144)) {
        let a = psd(size, &seed[..size * size]);
        let cov = CovarianceMatrix::from_blocks(BlockPartition::single(size).unwrap(), vec![a.clone()], CovSource::SyntheticBlock).unwrap();
        let r = matrix_sqrt(&cov).unwrap().to_dense().unwrap();
        let back = &r * &r;
        let scale = a.norm().max(1.0);
        prop_assert!((back - &a).norm() <= 1e-9 * scale);
        prop_assert!((&r - r.transpose()).norm() <= 1e-12 * scale);
    }

    #[test]
    fn merge_is_coarsest_common_refinement(a in prop::collection::vec(0usize..100, 0..8), b in prop::collection::vec(0usize..100, 0..8)) {
        let (pa, pb) = (partition(&a, 40), partition(&b, 40));
        let m = merge_ld_blocks(&pa, &pb).unwrap();
        prop_assert!(pa.refines(&m) && pb.refines(&m));
        let (ba, mm) = (merge_ld_blocks(&pb, &pa).unwrap(), merge_ld_blocks(&m, &m).unwrap());
        prop_assert_eq!(ba.ranges(), m.ranges());
        prop_assert_eq!(mm.ranges(), m.ranges());
        // every interior boundary of the merge is a boundary of both inputs
        let ends = |q: &BlockPartition| q.ranges().iter().map(|r| r.1).collect::<Vec<_>>();
        for e in ends(&m) {
            prop_assert!(ends(&pa).contains(&e) && ends(&pb).contains(&e));
        }
    }

    #[test]
    fn derivative_matches_finite_difference(omega in 1e-3f64..100.0, h2 in 0.05f64..1.0, t in 0.01f64..0.99) {
        let params = ShrinkageParams::new(omega, h2, ukb_fixture()).unwrap();
        let h = 1e-5;
        let fd = (shrinkage_path(t + h, &params).unwrap() - shrinkage_path(t - h, &params).unwrap()) / (2.0 * h);
        let d = shrinkage_derivative(t, &params, false).unwrap();
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1e-3));
    }

    #[test]
    fn correction_inverts_the_limit(phi in -1.0f64..1.0, h2b in 0.05f64..1.0, h2a in 0.05f64..1.0, omega in 0.0f64..50.0) {
        let m = ukb_fixture();
        let g = theorem1_limit(phi, h2b, h2a, omega, &m).unwrap();
        prop_assert!(g.abs() <= phi.abs() + 1e-12);
        let back = correct_marginal(g, h2b, h2a, omega, &m).unwrap().value;
        prop_assert!((back - phi).abs() <= 1e-10);
    }

    #[test]
    fn column_stats_match_one_pass(values in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let s = column_stats(values.iter().copied()).unwrap();
        // Welford
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, x) in values.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        prop_assert!((s.mean - mean).abs() <= 1e-10);
        match s.sd {
            Some(sd) => prop_assert!((sd - (m2 / (values.len() - 1) as f64).sqrt()).abs() <= 1e-10),
            None => prop_assert_eq!(values.len(), 1),
        }
    }
}
