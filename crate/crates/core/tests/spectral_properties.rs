use nalgebra::{DMatrix, DVector};
use ppkernel::config::PipelineConfig;
use ppkernel::kernel::gram_matrix;
use ppkernel::pipeline::FeaturePipeline;
use ppkernel::pointpat::{derive_seed, simulate_hppp, simulate_pcpp, Window};
use ppkernel::spectral::{project, reconstruct};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Squared H-distance from `beta` to its best approximation in the span of
/// the grid expansions whose coefficient vectors are the columns of `u`.
fn best_error(gram: &DMatrix<f64>, beta: &DVector<f64>, u: &DMatrix<f64>) -> f64 {
    let total = beta.dot(&(gram * beta));
    let b = u.transpose() * gram * beta;
    let m = u.transpose() * gram * u;
    let coef = m.cholesky().expect("restricted Gram is SPD").solve(&b);
    total - b.dot(&coef)
}

fn random_orthonormal(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

#[test]
fn eigen_truncation_beats_random_subspaces() {
    let pipe = FeaturePipeline::new(PipelineConfig::experiment()).unwrap();
    let gram = gram_matrix(pipe.grid().anchors(), pipe.kernel()).unwrap();
    let n = pipe.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let patterns = [
        simulate_hppp(60.0, Window::unit(), derive_seed(20, 0, 0)).unwrap(),
        simulate_hppp(120.0, Window::unit(), derive_seed(20, 0, 1)).unwrap(),
        simulate_pcpp(6.0, 6, 0.2, Window::unit(), derive_seed(20, 1, 0)).unwrap(),
    ];
    for r in [3, 7] {
        let bases: Vec<_> = (0..20).map(|_| random_orthonormal(n, r, &mut rng)).collect();
        for p in &patterns {
            let ge = pipe.smooth(p).unwrap();
            let beta = DVector::from_column_slice(ge.beta());
            let approx = reconstruct(&project(&ge, pipe.basis(), r).unwrap(), pipe.basis()).unwrap();
            let diff = &beta - DVector::from_column_slice(approx.beta());
            let eigen_err = diff.dot(&(&gram * &diff));
            // the truncation is itself the best approximation in its span
            let top = pipe.basis().eigenvectors().columns(0, r).into_owned();
            assert!((eigen_err - best_error(&gram, &beta, &top)).abs() <= 1e-8 * beta.dot(&(&gram * &beta)));
            for u in &bases {
                let e = best_error(&gram, &beta, u);
                assert!(eigen_err <= e, "r={r}: eigen {eigen_err} vs random {e}");
            }
        }
    }
}

#[test]
fn features_are_deterministic_across_pipelines() {
    let a = FeaturePipeline::new(PipelineConfig::experiment()).unwrap();
    let b = FeaturePipeline::new(PipelineConfig::experiment()).unwrap();
    let patterns: Vec<_> = (0..8)
        .map(|i| simulate_hppp(70.0, Window::unit(), derive_seed(3, 0, i)).unwrap())
        .collect();
    assert_eq!(a.features_all(&patterns).unwrap(), b.features_all(&patterns).unwrap());
    assert_eq!(a.basis().fingerprint(), b.basis().fingerprint());
}
