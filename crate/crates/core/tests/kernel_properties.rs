use std::sync::Arc;

use nalgebra::SymmetricEigen;
use ppkernel::kernel::{embed, evaluate, gram_matrix, inner_product, KernelConfig, KernelForm, RkhsElement, Smoother};
use ppkernel::pointpat::{make_grid, simulate_hppp, Point, Window};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gram_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for &n in &[1usize, 7, 50, 150, 400] {
        for sigma in [0.01, 0.05, 0.3] {
            let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.random(), rng.random())).collect();
            let k = gram_matrix(&pts, &KernelConfig::new(sigma).unwrap()).unwrap();
            let min = SymmetricEigen::new(k).eigenvalues.min();
            assert!(min >= -1e-8 * n as f64, "n={n} sigma={sigma}: min eigenvalue {min}");
        }
    }
}

#[test]
fn representer_residual_on_shipped_grids() {
    for (sigma, h) in [(0.05, 0.05), (0.02, 0.05)] {
        let grid = Arc::new(make_grid(Window::unit(), h).unwrap());
        let kernel = KernelConfig::new(sigma).unwrap();
        // smooth() itself enforces the residual bound and errors otherwise
        let smoother = Smoother::new(grid, kernel, 0.000127).unwrap();
        for seed in 0..5 {
            let p = simulate_hppp(80.0, Window::unit(), seed).unwrap();
            smoother.smooth(&embed(&p, &kernel)).unwrap();
        }
    }
}

#[test]
fn gaussian_forms_differ_by_bandwidth_rescaling() {
    let a = KernelConfig::with_form(0.1, KernelForm::GaussianNoHalf).unwrap();
    let b = KernelConfig::with_form(0.1 / 2f64.sqrt(), KernelForm::Gaussian).unwrap();
    let (x, y) = (Point::new(0.1, 0.2), Point::new(0.3, 0.25));
    assert!((a.eval(&x, &y) - b.eval(&x, &y)).abs() < 1e-15);
}

fn arb_point() -> impl Strategy<Value = Point> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| Point::new(x, y))
}

fn arb_element(cfg: KernelConfig) -> impl Strategy<Value = RkhsElement> {
    prop::collection::vec((arb_point(), -3.0f64..3.0), 0..15).prop_map(move |terms| {
        let (atoms, coeffs) = terms.into_iter().unzip();
        RkhsElement::new(atoms, coeffs, cfg).unwrap()
    })
}

fn cfg() -> KernelConfig {
    KernelConfig::new(0.1).unwrap()
}

fn concat(a: &RkhsElement, b: &RkhsElement, s: f64, t: f64) -> RkhsElement {
    use ppkernel::kernel::Expansion;
    let atoms = a.atoms().iter().chain(b.atoms()).copied().collect();
    let coeffs = a
        .coeffs()
        .iter()
        .map(|c| s * c)
        .chain(b.coeffs().iter().map(|c| t * c))
        .collect();
    RkhsElement::new(atoms, coeffs, *a.kernel()).unwrap()
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(x in arb_point(), y in arb_point(), sigma in 0.01f64..1.0) {
        let k = KernelConfig::new(sigma).unwrap();
        let v = k.eval(&x, &y);
        prop_assert_eq!(v, k.eval(&y, &x));
        prop_assert!(v > 0.0 || x.dist2(&y) > 0.0);
        prop_assert!(v <= 1.0);
        prop_assert_eq!(k.eval(&x, &x), 1.0);
    }

    #[test]
    fn inner_product_symmetric_bilinear_nonnegative(
        f in arb_element(cfg()),
        g in arb_element(cfg()),
        h in arb_element(cfg()),
        s in -2.0f64..2.0,
        t in -2.0f64..2.0,
    ) {
        let fg = inner_product(&f, &g).unwrap();
        prop_assert!((fg - inner_product(&g, &f).unwrap()).abs() <= 1e-12 * (1.0 + fg.abs()));
        prop_assert!(inner_product(&f, &f).unwrap() >= -1e-12);
        let lhs = inner_product(&concat(&f, &g, s, t), &h).unwrap();
        let rhs = s * inner_product(&f, &h).unwrap() + t * inner_product(&g, &h).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn evaluation_is_linear(f in arb_element(cfg()), g in arb_element(cfg()), x in arb_point(), s in -2.0f64..2.0) {
        let lhs = evaluate(&concat(&f, &g, s, 1.0), &x);
        let rhs = s * evaluate(&f, &x) + evaluate(&g, &x);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
