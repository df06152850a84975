use proptest::prelude::*;

use audible_core::geometry::{
    frequency_bound, gamma, gamma_pm, in_audible_zone, kappa, kappa_sigma, principal_symbol_b2, weyl_integrand,
    Branch, Mollifier, PatchSigma, PhasePoint, RegionOmega,
};
use audible_core::grid::AxisBox;
use audible_core::inversion::correlation;
use audible_core::linalg::singular_values;
use audible_core::observation::{assemble, SamplingScheme, SolverChoice};
use audible_core::spectral::counting_function;
use audible_core::wavefield::{GridSpec, PotentialQ};

fn patch() -> PatchSigma {
    PatchSigma::new(AxisBox::new(vec![-2.0], vec![2.0]).unwrap(), 0.25, 3.0).unwrap()
}

fn phase_point() -> impl Strategy<Value = PhasePoint> {
    (-3.0..3.0f64, 0.05..3.0f64, -10.0..10.0f64, -10.0..10.0f64)
        .prop_filter("eta_d != 0", |&(_, _, _, ed)| ed.abs() > 1e-3)
        .prop_map(|(y1, y2, e1, e2)| PhasePoint::new(vec![y1, y2], vec![e1, e2]).unwrap())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gamma_is_homogeneous_of_degree_zero(p in phase_point(), r in 1e-3..1e3f64) {
        let g = gamma(&p).unwrap();
        let scaled = PhasePoint::new(p.y.clone(), p.eta.iter().map(|e| r * e).collect()).unwrap();
        let gs = gamma(&scaled).unwrap();
        prop_assert!(close(g.t, gs.t), "{} vs {}", g.t, gs.t);
        prop_assert!(close(g.xprime[0], gs.xprime[0]));
    }

    #[test]
    fn audible_zone_is_conic_and_symmetric(p in phase_point(), r in 1e-3..1e3f64) {
        let sigma = patch();
        let scaled = PhasePoint::new(p.y.clone(), p.eta.iter().map(|e| r * e).collect()).unwrap();
        let flipped = PhasePoint::new(p.y.clone(), p.eta.iter().map(|e| -e).collect()).unwrap();
        let inside = in_audible_zone(&p, &sigma);
        // points within rounding of the patch boundary may flip under scaling
        let e = gamma(&p).unwrap();
        let margin = (e.t - sigma.t0).abs().min((e.t - sigma.t1).abs())
            .min((e.xprime[0] - sigma.space.min[0]).abs())
            .min((e.xprime[0] - sigma.space.max[0]).abs());
        prop_assume!(margin > 1e-9);
        prop_assert_eq!(inside, in_audible_zone(&scaled, &sigma));
        prop_assert_eq!(inside, in_audible_zone(&flipped, &sigma));
    }

    #[test]
    fn gamma_is_the_branch_with_the_sign_of_eta_d(p in phase_point()) {
        let branch = if p.eta_d() > 0.0 { Branch::Plus } else { Branch::Minus };
        prop_assert_eq!(gamma(&p).unwrap(), gamma_pm(&p, branch).unwrap());
    }

    #[test]
    fn kappa_is_sandwiched(p in phase_point(), delta in prop::sample::select(vec![0.0, 0.05, 0.1])) {
        let sigma = patch();
        let chi = Mollifier::new(sigma.clone(), delta).unwrap();
        let k = kappa(&p, &chi);
        prop_assert!(kappa_sigma(&p, &sigma) <= k);
        prop_assert!(k <= 1.0);
    }

    #[test]
    fn mollifier_stays_in_unit_interval(x in -3.0..3.0f64, t in -1.0..4.0f64) {
        let chi = Mollifier::with_default_width(patch()).unwrap();
        let e = audible_core::geometry::BoundaryEvent { xprime: vec![x], t };
        let v = chi.eval(&e);
        prop_assert!((0.0..=1.0).contains(&v));
        if chi.patch.contains(&e) {
            prop_assert_eq!(v, 1.0);
        }
        if t <= 0.0 || x.abs() >= 2.0 + chi.delta || t >= 3.0 + chi.delta {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn symbol_vanishes_on_grazing_rays(y1 in -1.0..1.0f64, y2 in 0.5..1.5f64, e1 in prop::sample::select(vec![-1.0, 1.0]), ed in 1e-6..0.1f64) {
        // hit time y_d |eta| / |eta_d| beyond t1 + delta leaves supp chi
        let chi = Mollifier::with_default_width(patch()).unwrap();
        let p = PhasePoint::new(vec![y1, y2], vec![e1, ed]).unwrap();
        prop_assume!(y2 * p.eta_norm() / ed > 3.0 + chi.delta);
        prop_assert_eq!(principal_symbol_b2(&p, &chi), 0.0);
    }

    #[test]
    fn integrand_vanishes_beyond_the_frequency_bound(
        y1 in -0.5..0.5f64, y2 in 0.75..1.25f64, theta in 0.0..std::f64::consts::TAU, excess in 1.0..50.0f64,
    ) {
        let omega = RegionOmega::new(AxisBox::new(vec![-0.5, 0.75], vec![0.5, 1.25]).unwrap()).unwrap();
        let sigma = patch();
        let r = frequency_bound(&omega, &sigma) * (1.0 + 1e-9) * excess;
        prop_assert!(!weyl_integrand(&[y1, y2], &[r * theta.cos(), r * theta.sin()], &sigma));
    }

    #[test]
    fn counting_function_is_a_nonincreasing_step(
        mut svals in prop::collection::vec(0.0..10.0f64, 1..60), l1 in 0.0..11.0f64, l2 in 0.0..11.0f64,
    ) {
        svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(counting_function(&svals, lo) >= counting_function(&svals, hi));
        for (i, &s) in svals.iter().enumerate() {
            if s > 0.0 {
                prop_assert!(counting_function(&svals, s * (1.0 - 1e-12)) > i);
            }
        }
    }

    #[test]
    fn correlation_is_bounded(a in prop::collection::vec(-1e3..1e3f64, 8), b in prop::collection::vec(-1e3..1e3f64, 8)) {
        let c = correlation(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&c), "{c}");
    }
}

#[test]
fn longer_time_window_cannot_lower_singular_values() {
    let h = 1.0 / 16.0;
    let omega = RegionOmega::new(AxisBox::new(vec![-0.25, 0.5], vec![0.25, 0.75]).unwrap()).unwrap();
    let grid = GridSpec::covering(h, h / 2.0, 1.5, &omega.bounds).unwrap();
    let svals_for = |t1: f64| {
        let sigma = PatchSigma::new(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), 0.25, t1).unwrap();
        let scheme = SamplingScheme::new(&omega, &sigma, h, h / 2.0).unwrap();
        let a = assemble(SolverChoice::ShiftInvariant, &PotentialQ::Zero, &grid, &scheme).unwrap();
        singular_values(&a.matrix).unwrap()
    };
    let short = svals_for(1.0);
    let long = svals_for(1.5);
    assert_eq!(short.len(), long.len());
    for (n, (s, l)) in short.iter().zip(&long).enumerate() {
        assert!(*l >= s * (1.0 - 1e-12), "s_{n}: {l} < {s}");
    }
}
