use drotopo::elasticity::compliance_form;
use drotopo::material::{simp_scale, simp_scale_derivative};
use drotopo::oracle::{entropic_ot, fd_gradient, primal_supremum, DiscreteTransportProblem};
use drotopo::{DensityField, IsotropicHooke, Mesh2D, SimpParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Damped Newton's method on the concave dual
/// `Σ a_i f_i + Σ b_j g_j − ε Σ π0_ij e^{(f_i + g_j − c_ij)/ε} + ε`, gauge `g_K = 0`.
fn newton_dual(p: &DiscreteTransportProblem) -> f64 {
    let (n, k, eps) = (p.source.len(), p.target.len(), p.epsilon);
    let dim = n + k - 1;
    let mut x = DVector::<f64>::zeros(dim);
    let plan = |x: &DVector<f64>| -> Vec<f64> {
        let mut pi = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let g = if j < k - 1 { x[n + j] } else { 0.0 };
                pi[i * k + j] = p.reference[i * k + j] * ((x[i] + g - p.cost[i * k + j]) / eps).exp();
            }
        }
        pi
    };
    let dual = |x: &DVector<f64>| -> f64 {
        let pi = plan(x);
        let mut value = eps;
        for i in 0..n {
            value += p.source[i] * x[i];
        }
        for j in 0..k - 1 {
            value += p.target[j] * x[n + j];
        }
        value - eps * pi.iter().sum::<f64>()
    };
    for _ in 0..200 {
        let pi = plan(&x);
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            grad[i] = p.source[i] - (0..k).map(|j| pi[i * k + j]).sum::<f64>();
            hess[(i, i)] = (0..k).map(|j| pi[i * k + j]).sum::<f64>() / eps;
        }
        for j in 0..k - 1 {
            grad[n + j] = p.target[j] - (0..n).map(|i| pi[i * k + j]).sum::<f64>();
            hess[(n + j, n + j)] = (0..n).map(|i| pi[i * k + j]).sum::<f64>() / eps;
            for i in 0..n {
                hess[(i, n + j)] = pi[i * k + j] / eps;
                hess[(n + j, i)] = pi[i * k + j] / eps;
            }
        }
        if grad.norm() < 1e-14 {
            break;
        }
        let step = hess.cholesky().expect("positive definite").solve(&grad);
        let current = dual(&x);
        let mut t = 1.0;
        while dual(&(&x + t * &step)) < current && t > 1e-12 {
            t *= 0.5;
        }
        x += t * step;
    }
    dual(&x)
}

#[test]
fn sinkhorn_matches_newton_dual_on_random_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let source = simplex(&mut rng, 3);
        let target = simplex(&mut rng, 4);
        let mut reference = Vec::new();
        for a in &source {
            reference.extend(simplex(&mut rng, 4).iter().map(|v| v * a));
        }
        let cost: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..2.0)).collect();
        let p = DiscreteTransportProblem {
            source,
            target,
            cost,
            reference,
            epsilon: 0.1,
        };
        let plan = entropic_ot(&p).unwrap();
        let dual = newton_dual(&p);
        assert!((plan.value - dual).abs() <= 1e-10 * (1.0 + dual.abs()), "{} vs {dual}", plan.value);
        assert!((p.objective(&plan.coupling) - plan.value).abs() <= 1e-9);
        for j in 0..4 {
            let col: f64 = (0..3).map(|i| plan.coupling[i * 4 + j]).sum();
            assert!((col - p.target[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn huge_radius_gives_the_largest_cost() {
    let p = DiscreteTransportProblem {
        source: vec![1.0],
        target: vec![0.25; 4],
        cost: vec![0.0, 0.25, 1.0, 2.25],
        reference: vec![0.7, 0.2, 0.07, 0.03],
        epsilon: 0.05,
    };
    let f = [0.3, 1.0, 0.2, 0.9];
    let out = primal_supremum(&f, &p, 100.0, 40, 0).unwrap();
    assert!((out.value - 1.0).abs() < 1e-12);
    assert_eq!(out.weights.unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn primal_guards_the_atom_count() {
    let k = 7;
    let p = DiscreteTransportProblem {
        source: vec![1.0],
        target: vec![1.0 / k as f64; k],
        cost: vec![1.0; k],
        reference: vec![1.0 / k as f64; k],
        epsilon: 0.1,
    };
    assert!(primal_supremum(&vec![0.0; k], &p, 1.0, 10, 0).is_err());
}

#[test]
fn sinkhorn_rejects_bad_marginals() {
    let p = DiscreteTransportProblem {
        source: vec![0.5],
        target: vec![1.0],
        cost: vec![0.0],
        reference: vec![0.5],
        epsilon: 0.1,
    };
    assert!(entropic_ot(&p).is_err());
}

#[test]
fn compliance_gradient_matches_finite_differences() {
    let mesh = Mesh2D::bridge(10, 10).unwrap();
    let hooke = IsotropicHooke::default();
    let simp = SimpParams {
        p: 3.0,
        p_schedule: vec![],
        ..SimpParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h: Vec<f64> = (0..100).map(|_| rng.gen_range(0.2..1.0)).collect();
    let z = [0.3, -1.0];
    let compliance = |x: &[f64]| {
        let field = DensityField::new(&mesh, x.to_vec()).unwrap();
        compliance_form(&mesh, &hooke, &simp_scale(&field, &simp)).unwrap().compliance(z)
    };
    let fd = fd_gradient(compliance, &h, 1e-6);
    let field = DensityField::new(&mesh, h.clone()).unwrap();
    let form = compliance_form(&mesh, &hooke, &simp_scale(&field, &simp)).unwrap();
    let energy = form
        .gradient_fields([[z[0] * z[0], z[0] * z[1]], [z[1] * z[0], z[1] * z[1]]])
        .unwrap();
    let dscale = simp_scale_derivative(&field, &simp);
    let area = mesh.element_area();
    // the adjoint field is an L² density; per-element partials carry the element area
    let adjoint: Vec<f64> = energy.iter().zip(&dscale).map(|(g, d)| -d * g * area).collect();
    let err: f64 = adjoint.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm <= 1e-5, "relative error {}", err / norm);
}
