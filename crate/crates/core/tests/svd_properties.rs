use emtrace_core::denoise::{
    denoise_batch, formula_cutting_point, svd_decompose, traditional_cutting_point, CuttingPoint,
};
use emtrace_core::signal::{Label, TraceMatrix};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = TraceMatrix> {
    (2usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        prop::collection::vec(-100.0f64..100.0, r * c).prop_map(move |d| {
            TraceMatrix::from_row_major(r, c, d, vec![Label::Benign; r]).unwrap()
        })
    })
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cp(v: usize) -> CuttingPoint {
    CuttingPoint::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_rank_reconstruction(m in matrix()) {
        let svd = svd_decompose(&m).unwrap();
        let rec = svd.reconstruct(cp(svd.rank().max(1)));
        let diff: Vec<f64> = rec.iter().zip(m.data()).map(|(a, b)| a - b).collect();
        prop_assert!(frob(&diff) <= 1e-8 * frob(m.data()).max(1e-300));
    }

    #[test]
    fn denoising_is_idempotent(m in matrix(), c in 1usize..6) {
        let once = denoise_batch(&m, cp(c)).unwrap();
        let twice = denoise_batch(&once, cp(c)).unwrap();
        let diff: Vec<f64> = once.data().iter().zip(twice.data()).map(|(a, b)| a - b).collect();
        prop_assert!(frob(&diff) <= 1e-8 * frob(m.data()).max(1.0));
    }

    #[test]
    fn energy_grows_with_cutting_point(m in matrix()) {
        let svd = svd_decompose(&m).unwrap();
        let r = svd.singular_values().len();
        let mut last = 0.0;
        for c in 1..=r {
            let e = frob(&svd.reconstruct(cp(c)));
            prop_assert!(e + 1e-9 * frob(m.data()) >= last);
            last = e;
        }
        let s = svd.singular_values();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn shape_and_labels_preserved(m in matrix(), c in 1usize..20) {
        let d = denoise_batch(&m, cp(c)).unwrap();
        prop_assert_eq!(d.shape(), m.shape());
        prop_assert_eq!(d.labels(), m.labels());
    }

    #[test]
    fn formula_is_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(formula_cutting_point(lo).unwrap() <= formula_cutting_point(hi).unwrap());
    }
}

#[test]
fn knee_on_rank_one_plus_noise() {
    let mut data = Vec::new();
    for i in 0..20 {
        for j in 0..30 {
            let signal = (j as f64 * 0.4).sin() * 10.0;
            let wobble = ((i * 31 + j * 17) % 13) as f64 * 0.01;
            data.push(signal + wobble);
        }
    }
    let m = TraceMatrix::from_row_major(20, 30, data, vec![Label::Benign; 20]).unwrap();
    let svd = svd_decompose(&m).unwrap();
    assert_eq!(traditional_cutting_point(svd.singular_values()).get(), 1);
}

#[test]
fn rank_deficient_rows() {
    let rows = vec![
        vec![1.0, 2.0, 3.0],
        vec![2.0, 4.0, 6.0],
        vec![-1.0, -2.0, -3.0],
    ];
    let m = TraceMatrix::from_rows(rows, vec![Label::Benign; 3]).unwrap();
    assert_eq!(svd_decompose(&m).unwrap().rank(), 1);
}
