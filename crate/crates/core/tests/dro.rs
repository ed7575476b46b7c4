use drotopo::dro::{density_gradient, eval_dual, logsumexp, worst_case_limit};
use drotopo::elasticity::compliance_form;
use drotopo::material::simp_scale;
use drotopo::oracle::{fd_directional, primal_supremum, DiscreteTransportProblem};
use drotopo::uncertainty::{build_load_grid, ground_cost, reference_marginals, GridSpec};
use drotopo::{
    DensityField, DensityFilter, DroMode, DroParams, DualProblem, ElasticModel, IsotropicHooke,
    LoadSpaceDiscretization, Mesh2D, NominalLaw, ReferenceMarginals, SimpParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Toy {
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw,
    marginals: ReferenceMarginals,
}

impl Toy {
    fn line(points: &[f64], sample: f64, sigma: f64) -> Self {
        let nodes = points.iter().map(|&x| [x, 0.0]).collect();
        let radius = points.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let grid = LoadSpaceDiscretization::from_nodes(radius, 1.0, nodes).unwrap();
        let nominal = NominalLaw::snap(&grid, &[[sample, 0.0]]).unwrap();
        let marginals = reference_marginals(&grid, &nominal, sigma).unwrap();
        Toy {
            grid,
            nominal,
            marginals,
        }
    }

    fn problem(&self, params: DroParams) -> DualProblem<'_> {
        DualProblem::new(&self.grid, &self.nominal, &self.marginals, params).unwrap()
    }

    /// The same instance in the transport oracle's terms (one source atom),
    /// with the Gaussian reference normalized by hand.
    fn transport(&self, epsilon: f64, sigma: f64) -> DiscreteTransportProblem {
        let k = self.grid.len();
        let xi = self.nominal.samples()[0];
        let cost: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .map(|z| (z[0] - xi[0]).powi(2) + (z[1] - xi[1]).powi(2))
            .collect();
        let raw: Vec<f64> = cost.iter().map(|c| (-c / (2.0 * sigma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        DiscreteTransportProblem {
            source: vec![1.0],
            target: vec![1.0 / k as f64; k],
            cost,
            reference: raw.iter().map(|r| r / total).collect(),
            epsilon,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn toy_value_matches_direct_sum() {
    let toy = Toy::line(&[0.0, 1.0, 2.0], 0.0, 0.1);
    let (m, eps, lambda) = (0.3, 0.1, 1.0);
    let costs = [0.0, 1.0, 4.0];
    let value = toy.problem(DroParams::entropic(m, eps)).value(&costs, lambda).unwrap();
    let nu: Vec<f64> = [0.0f64, 1.0, 4.0].iter().map(|c| (-c / 0.2).exp()).collect();
    let z: f64 = nu.iter().sum();
    let mut s = 0.0;
    for j in 0..3 {
        let c = (j * j) as f64;
        s += nu[j] / z * ((costs[j] - lambda * c) / (lambda * eps)).exp();
    }
    let expected = lambda * m + lambda * eps * s.ln();
    assert!(rel(value, expected) < 1e-14);
}

#[test]
fn constant_cost_separates() {
    let toy = Toy::line(&[0.0, 0.5, 1.0, 1.5], 0.5, 0.2);
    let (eps, c0) = (0.05, 2.5);
    let costs = [c0; 4];
    let row = toy.marginals.weight_row(0);
    let log_mass: f64 = row
        .iter()
        .zip(toy.marginals.cost_row(0))
        .map(|(nu, c)| nu * (-c / eps).exp())
        .sum::<f64>()
        .ln();
    let m = -eps * log_mass + 0.1;
    let p = toy.problem(DroParams::entropic(m, eps));
    for lambda in [0.01, 0.3, 2.0] {
        let v = p.value(&costs, lambda).unwrap();
        assert!(rel(v, lambda * m + c0 + lambda * eps * log_mass) < 1e-12);
        let d = p.lambda_derivative(&p.evaluate(&costs, lambda).unwrap());
        assert!((d - (m + eps * log_mass)).abs() < 1e-10);
    }
    let min = p.minimize_lambda(&costs).unwrap();
    assert!((min.value - c0).abs() <= 1e-6 * (1.0 + c0));
    assert_eq!(min.lambda, p.params.lambda_bracket.0);
}

#[test]
fn value_and_derivative_are_affine_in_m() {
    let toy = Toy::line(&[0.0, 1.0, 2.0], 0.0, 0.1);
    let costs = [0.0, 1.0, 4.0];
    let lambda = 0.7;
    let a = toy.problem(DroParams::entropic(0.2, 0.1));
    let b = toy.problem(DroParams::entropic(0.9, 0.1));
    let (ea, eb) = (a.evaluate(&costs, lambda).unwrap(), b.evaluate(&costs, lambda).unwrap());
    assert!((eb.value - ea.value - lambda * 0.7).abs() < 1e-13);
    assert!((b.lambda_derivative(&eb) - a.lambda_derivative(&ea) - 0.7).abs() < 1e-13);
}

#[test]
fn lambda_derivative_matches_finite_differences() {
    let toy = Toy::line(&[0.0, 1.0, 2.0], 0.0, 0.1);
    let costs = [0.0, 1.0, 4.0];
    let p = toy.problem(DroParams::entropic(0.5, 0.1));
    for lambda in [0.1, 1.0, 10.0] {
        let h = 1e-5 * lambda;
        let fd = (p.value(&costs, lambda + h).unwrap() - p.value(&costs, lambda - h).unwrap()) / (2.0 * h);
        let exact = p.lambda_derivative(&p.evaluate(&costs, lambda).unwrap());
        assert!(rel(exact, fd) <= 1e-6, "lambda {lambda}: {exact} vs {fd}");
    }
}

#[test]
fn toy_minimum_matches_primal_supremum() {
    let toy = Toy::line(&[0.0, 1.0, 2.0], 0.0, 0.1);
    let costs = [0.0, 1.0, 4.0];
    let (m, eps) = (0.5, 0.1);
    let dual = toy.problem(DroParams::entropic(m, eps)).minimize_lambda(&costs).unwrap();
    let primal = primal_supremum(&costs, &toy.transport(eps, 0.1), m, 200, 3).unwrap();
    assert!(primal.value <= dual.value + 1e-9);
    assert!(rel(dual.value, primal.value) <= 1e-4, "{} vs {}", dual.value, primal.value);
}

#[test]
fn minimum_grows_with_m() {
    let toy = Toy::line(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 0.05);
    let costs = [1.0, 0.0, 0.25, 1.0, 4.0];
    let mut last = f64::NEG_INFINITY;
    for m in [0.1, 0.25, 0.5, 1.0, 2.0] {
        let v = toy.problem(DroParams::entropic(m, 0.1)).minimize_lambda(&costs).unwrap().value;
        assert!(v >= last - 1e-12);
        last = v;
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let spec = GridSpec {
        radius: 2.0,
        spacing: 0.2,
        refinement_centers: vec![[0.0, -1.0], [0.5, 0.5]],
        refinement_spacing: 0.05,
        refinement_radius: 0.3,
        max_nodes: 100_000,
    };
    let grid = build_load_grid(&spec).unwrap();
    let nominal = NominalLaw::snap(&grid, &spec.refinement_centers).unwrap();
    let marginals = reference_marginals(&grid, &nominal, 0.01).unwrap();
    let p = DualProblem::new(&grid, &nominal, &marginals, DroParams::entropic(0.4, 0.02)).unwrap();
    let costs: Vec<f64> = grid.nodes().iter().map(|z| 3.0 * z[0] * z[0] + z[1] * z[1]).collect();
    let eval = p.evaluate(&costs, 0.8).unwrap();
    for i in 0..2 {
        let row = eval.weight_row(i);
        assert!(row.iter().all(|w| *w >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    let min = p.minimize_lambda(&costs).unwrap();
    assert!(p.nominal_cost(&costs) <= min.value + 1e-6);
    assert!(min.value <= p.worst_case_limit(&costs) + 1e-8);
}

#[test]
fn worst_case_of_identity_form() {
    let spec = GridSpec {
        radius: 3.0,
        spacing: 0.05,
        refinement_centers: vec![],
        refinement_spacing: 0.01,
        refinement_radius: 0.0,
        max_nodes: 500_000,
    };
    let grid = build_load_grid(&spec).unwrap();
    let id: Vec<f64> = grid.nodes().iter().map(|z| z[0] * z[0] + z[1] * z[1]).collect();
    let top = id.iter().fold(0.0f64, |a, v| a.max(*v));
    assert!(top <= 9.0 * (1.0 + 1e-11) && top >= (3.0f64 - 0.05).powi(2));
    let diag: Vec<f64> = grid.nodes().iter().map(|z| 4.0 * z[0] * z[0] + z[1] * z[1]).collect();
    let (j, _) = diag.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, v)| if *v > b.1 { (j, *v) } else { b });
    let arg = grid.nodes()[j];
    assert!(arg[1].abs() < 1e-12 && (arg[0].abs() - 3.0).abs() < 1e-12);
}

#[test]
fn worst_case_matches_scan_for_random_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mesh = Mesh2D::bridge(6, 6).unwrap();
    let spec = GridSpec {
        radius: 2.0,
        spacing: 0.1,
        refinement_centers: vec![],
        refinement_spacing: 0.1,
        refinement_radius: 0.0,
        max_nodes: 100_000,
    };
    let grid = build_load_grid(&spec).unwrap();
    for _ in 0..5 {
        let scale: Vec<f64> = (0..36).map(|_| rng.gen_range(0.01..1.0)).collect();
        let form = compliance_form(&mesh, &IsotropicHooke::default(), &scale).unwrap();
        let m = form.matrix();
        let scan = grid
            .nodes()
            .iter()
            .map(|z| m[0][0] * z[0] * z[0] + 2.0 * m[0][1] * z[0] * z[1] + m[1][1] * z[1] * z[1])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(rel(worst_case_limit(&form, &grid), scan) < 1e-14);
    }
}

#[test]
fn hard_dual_limits() {
    let toy = Toy::line(&[-2.0, -1.0, 0.0, 1.0, 2.0], 0.0, 0.1);
    let costs = [4.0, 1.5, 0.2, 1.0, 3.0];
    let mut params = DroParams::entropic(0.0, 0.1);
    params.mode = DroMode::Hard;
    let p = toy.problem(params);
    assert!((p.hard_dual(&costs, 0.0).unwrap().value - 0.2).abs() < 1e-12);
    let big = p.hard_dual(&costs, 16.0 * 4.0).unwrap();
    assert!((big.value - 4.0).abs() < 1e-12);
}

/// `sup Σ f_j Q_j` over `Q` with `Σ_j Q_j c_j ≤ m` for a single source atom.
fn hard_primal(f: &[f64], c: &[f64], m: f64, resolution: usize) -> f64 {
    let k = f.len();
    let mut best = f64::NEG_INFINITY;
    let mut stack = vec![(0usize, resolution, 0.0f64, 0.0f64)];
    while let Some((j, left, value, cost)) = stack.pop() {
        if j == k - 1 {
            let q = left as f64 / resolution as f64;
            if cost + q * c[j] <= m + 1e-12 {
                best = best.max(value + q * f[j]);
            }
            continue;
        }
        for u in 0..=left {
            let q = u as f64 / resolution as f64;
            stack.push((j + 1, left - u, value + q * f[j], cost + q * c[j]));
        }
    }
    best
}

#[test]
fn hard_dual_matches_exhaustive_primal() {
    let toy = Toy::line(&[0.0, 1.0, 2.0, 3.0], 0.0, 0.1);
    let costs = [0.0, 1.0, 4.0, 5.0];
    let mut params = DroParams::entropic(0.0, 0.1);
    params.mode = DroMode::Hard;
    let p = toy.problem(params);
    let c: Vec<f64> = toy.grid.nodes().iter().map(|z| ground_cost([0.0, 0.0], *z)).collect();
    for m in [0.5, 1.0, 2.5, 6.0] {
        let dual = p.hard_dual(&costs, m).unwrap().value;
        let primal = hard_primal(&costs, &c, m, 400);
        assert!(primal <= dual + 1e-9);
        assert!(rel(dual, primal) < 2e-3, "m {m}: {dual} vs {primal}");
    }
}

#[test]
fn logsumexp_is_stable() {
    let v = logsumexp(&[0.0, 1000.0], &[0.5, 0.5]).unwrap();
    assert!((v - (1000.0 + 0.5f64.ln())).abs() <= 1e-12);
    let s = 1e6;
    let base = [0.3, -1.0, 2.0];
    let w = [0.2, 0.5, 0.3];
    let shifted: Vec<f64> = base.iter().map(|x| x + s).collect();
    let d = logsumexp(&shifted, &w).unwrap() - logsumexp(&base, &w).unwrap();
    assert!((d - s).abs() <= 1e-9);
}

struct Bridge {
    model: ElasticModel,
    simp: SimpParams,
    filter: DensityFilter,
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw,
    marginals: ReferenceMarginals,
}

impl Bridge {
    fn new(n: usize, sigma: f64) -> Self {
        let mesh = Mesh2D::bridge(n, n).unwrap();
        let spec = GridSpec {
            radius: 2.0,
            spacing: 0.2,
            refinement_centers: vec![[0.0, -1.0]],
            refinement_spacing: 0.05,
            refinement_radius: GridSpec::refinement_radius_for_sigma(sigma),
            max_nodes: 100_000,
        };
        let grid = build_load_grid(&spec).unwrap();
        let nominal = NominalLaw::snap(&grid, &[[0.0, -1.0]]).unwrap();
        let marginals = reference_marginals(&grid, &nominal, sigma).unwrap();
        let simp = SimpParams {
            p: 3.0,
            p_schedule: vec![],
            ..SimpParams::default()
        };
        Bridge {
            model: ElasticModel::new(&mesh, &IsotropicHooke::default()),
            filter: DensityFilter::for_mesh(&mesh, simp.filter_radius).unwrap(),
            simp,
            grid,
            nominal,
            marginals,
        }
    }

    fn problem(&self, m: f64, eps: f64) -> DualProblem<'_> {
        DualProblem::new(&self.grid, &self.nominal, &self.marginals, DroParams::entropic(m, eps)).unwrap()
    }

    fn value_and_gradient(&self, p: &DualProblem<'_>, h: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let physical = self.filter.apply(h);
        let field = DensityField::new(self.model.mesh(), physical.clone()).unwrap();
        let form = self.model.compliance_form(&simp_scale(&field, &self.simp)).unwrap();
        let eval = p.evaluate(&p.node_costs(&form), lambda).unwrap();
        let g = density_gradient(&eval.moments, &form, &self.simp, &physical, Some(&self.filter)).unwrap();
        (eval.value, g)
    }
}

#[test]
fn density_gradient_matches_directional_differences() {
    let b = Bridge::new(10, 0.01);
    let p = b.problem(0.3, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h: Vec<f64> = (0..100).map(|_| rng.gen_range(0.2..0.9)).collect();
    let lambda = 2.0;
    let (_, g) = b.value_and_gradient(&p, &h, lambda);
    assert!(g.iter().all(|v| *v <= 0.0));
    let area = b.model.mesh().element_area();
    for _ in 0..5 {
        let d: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fd = fd_directional(|x| b.value_and_gradient(&p, x, lambda).0, &h, &d, 1e-6);
        let exact: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() * area;
        assert!(rel(exact, fd) <= 1e-4, "{exact} vs {fd}");
    }
}

#[test]
fn moment_reduction_matches_per_node_sum() {
    let b = Bridge::new(8, 0.01);
    let p = b.problem(0.3, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h: Vec<f64> = (0..64).map(|_| rng.gen_range(0.1..1.0)).collect();
    let field = DensityField::new(b.model.mesh(), h.clone()).unwrap();
    let form = b.model.compliance_form(&simp_scale(&field, &b.simp)).unwrap();
    let eval = p.evaluate(&p.node_costs(&form), 1.5).unwrap();
    let reduced = density_gradient(&eval.moments, &form, &b.simp, &h, None).unwrap();
    let dscale = drotopo::material::simp_scale_derivative(&field, &b.simp);
    let mut naive = vec![0.0; 64];
    for (j, z) in b.grid.nodes().iter().enumerate() {
        let w = eval.weights[j];
        if w == 0.0 {
            continue;
        }
        let energy = b.model.energy_density(&form.displacement(*z));
        for e in 0..64 {
            naive[e] -= w * dscale[e] * energy[e];
        }
    }
    let top = naive.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (a, b) in reduced.iter().zip(&naive) {
        assert!((a - b).abs() <= 1e-10 * top);
    }
}

#[test]
fn gradient_at_unit_exponent_is_the_mean_moment_field() {
    let b = Bridge::new(6, 0.01);
    let p = b.problem(0.3, 0.05);
    let simp = b.simp.with_p(1.0);
    let h = vec![0.4; 36];
    let field = DensityField::new(b.model.mesh(), h.clone()).unwrap();
    let form = b.model.compliance_form(&simp_scale(&field, &simp)).unwrap();
    let eval = eval_dual(&form, &b.grid, &b.nominal, &b.marginals, p.params, 1.0).unwrap();
    let g = density_gradient(&eval.moments, &form, &simp, &h, None).unwrap();
    let s = eval.moments[0];
    let expected = form.gradient_fields(s).unwrap();
    for (a, e) in g.iter().zip(&expected) {
        assert!((a + (1.0 - simp.eta) * e).abs() <= 1e-14 * e.abs().max(1.0));
    }
}

#[test]
fn entropic_value_sits_between_nominal_and_worst_case() {
    let b = Bridge::new(10, 0.001);
    let h = vec![0.5; 100];
    let field = DensityField::new(b.model.mesh(), h).unwrap();
    let form = b.model.compliance_form(&simp_scale(&field, &b.simp)).unwrap();
    let p = b.problem(0.25, 0.01);
    let costs = p.node_costs(&form);
    let min = p.minimize_lambda(&costs).unwrap();
    assert!(!min.possibly_infeasible);
    assert!(p.nominal_cost(&costs) < min.value);
    assert!(min.value < p.worst_case_limit(&costs));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_is_convex_in_lambda(
        a in -4.0f64..1.0,
        b in -4.0f64..1.0,
        costs in prop::collection::vec(0.0f64..5.0, 5),
        m in 0.05f64..2.0,
    ) {
        let toy = Toy::line(&[-2.0, -1.0, 0.0, 1.0, 2.0], 0.0, 0.1);
        let p = toy.problem(DroParams::entropic(m, 0.1));
        let (l1, l2) = (10f64.powf(a.min(b)), 10f64.powf(a.max(b)) * 1.01);
        let mid = p.value(&costs, 0.5 * (l1 + l2)).unwrap();
        let chord = 0.5 * (p.value(&costs, l1).unwrap() + p.value(&costs, l2).unwrap());
        prop_assert!(mid <= chord + 1e-10 * (1.0 + chord.abs()));
    }

    #[test]
    fn minimum_is_monotone_in_m(costs in prop::collection::vec(0.0f64..5.0, 5)) {
        let toy = Toy::line(&[-2.0, -1.0, 0.0, 1.0, 2.0], 0.0, 0.1);
        let mut last = f64::NEG_INFINITY;
        for m in [0.1, 0.25, 0.5, 1.0] {
            let v = toy.problem(DroParams::entropic(m, 0.1)).minimize_lambda(&costs).unwrap().value;
            prop_assert!(v >= last - 1e-9);
            last = v;
        }
    }
}
