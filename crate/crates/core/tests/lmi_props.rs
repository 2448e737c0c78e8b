mod support;

use delaylq::lmi::{solve_feasibility, AffineLmiProblem, Constraint, Term, VarKind};
use nalgebra::DMatrix;
use proptest::prelude::*;
use support::*;

/// `[[P, AᵀP], [PA, P]] ≻ 0`, feasible exactly when `ρ(A) < 1`.
fn lyapunov(a: &DMatrix<f64>) -> AffineLmiProblem {
    let n = a.nrows();
    let mut prob = AffineLmiProblem::new("lyapunov");
    let p = prob.add_variable("P", VarKind::SymmetricPd, n, n);
    let mut c = Constraint::new("stability");
    let b0 = c.add_block("P", n);
    let b1 = c.add_block("P", n);
    c.push(b0, b0, Term::var(p, n, n, 1.0));
    c.push(b1, b1, Term::var(p, n, n, 1.0));
    c.push(
        b0,
        b1,
        Term::Product {
            var: p,
            left: a.transpose(),
            right: DMatrix::identity(n, n),
            transpose: false,
            scale: 1.0,
        },
    );
    prob.constraints.push(c);
    prob
}

fn with_radius(seed: u64, n: usize, rho: f64) -> DMatrix<f64> {
    let a = gaussian(&mut rng(seed), n, n);
    let r = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    a * (rho / r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn schur_stable_matrices_are_certified(seed in any::<u64>(), n in 1usize..=4) {
        let a = with_radius(seed, n, 0.8);
        let prob = lyapunov(&a);
        let res = solve_feasibility(&prob, 150).unwrap();
        prop_assert!(res.is_feasible(), "{}", res.message);
        prop_assert!(res.margin >= 0.9 * prob.epsilon);
        // Independent check of the returned P.
        let p = res.assignment.as_ref().unwrap().values[0].clone();
        let lyap = &p - a.transpose() * &p * &a;
        prop_assert!(lyap.symmetric_eigenvalues().min() > 0.0);
        prop_assert!(p.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn unstable_matrices_are_not_certified(seed in any::<u64>(), n in 1usize..=4) {
        let a = with_radius(seed, n, 1.2);
        let res = solve_feasibility(&lyapunov(&a), 150).unwrap();
        prop_assert!(!res.is_feasible());
    }
}
