mod common;

use spechp::assembly::{build_trace, SolverOptions};
use spechp::basis::BasisType;
use spechp::collections::Strategy;
use spechp::explist::ExpList;
use spechp::meshio::{structured_mesh, MeshGraph};
use spechp::session::Expression;
use spechp::solvers::{
    coefficient_integral, project, project_cg, AdvectionSolver, ApeConfig, ApeSolver, OutputFormat, OutputWriter,
    RiemannKind,
};
use spechp::Error;

fn e(s: &str) -> Expression {
    Expression::parse(s).unwrap()
}

fn gaussian(x0: f64, w: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (-((x - x0).powi(2) + y * y) / (2.0 * w * w)).exp()
}

fn advection(mesh: &MeshGraph, p: usize, strategy: Strategy) -> AdvectionSolver {
    let list = ExpList::uniform(mesh, p, BasisType::ModifiedA).unwrap();
    AdvectionSolver::new(mesh, list, &[e("-y"), e("x")], &common::periodic(mesh), strategy).unwrap()
}

fn pulse_solver(mesh: &MeshGraph, riemann: RiemannKind) -> ApeSolver {
    let list = ExpList::uniform(mesh, 4, BasisType::ModifiedA).unwrap();
    ApeSolver::new(mesh, list, ApeConfig::quiescent(riemann), &common::walls(mesh), Strategy::SumFac).unwrap()
}

#[test]
fn advection_conserves_per_step_on_triangles_and_quads() {
    for tri in [false, true] {
        let mesh = structured_mesh(4, 4, [-1.0, 1.0], [-1.0, 1.0], tri).unwrap();
        let s = advection(&mesh, 4, Strategy::SumFac);
        let mut u = project(s.list(), gaussian(0.3, 0.2)).unwrap();
        let mut prev = coefficient_integral(s.list(), &u).unwrap();
        for k in 0..50 {
            s.step(&mut u, k as f64 * 0.005, 0.005, k).unwrap();
            let now = coefficient_integral(s.list(), &u).unwrap();
            assert!((now - prev).abs() < 1e-11, "tri={tri} step {k}: {:.2e}", now - prev);
            prev = now;
        }
    }
}

#[test]
fn ape_pressure_is_conserved_with_walls() {
    let mesh = structured_mesh(4, 4, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
    for riemann in [RiemannKind::Upwind, RiemannKind::LaxFriedrichs] {
        let s = pulse_solver(&mesh, riemann);
        let mut q = s.initial_state([&gaussian(0.2, 0.25), &|_, _| 0.0, &|_, _| 0.0]).unwrap();
        let nc = s.list().ncoeffs();
        let mut prev = coefficient_integral(s.list(), &q[..nc]).unwrap();
        for k in 0..50 {
            s.step(&mut q, k as f64 * 0.002, 0.002, k).unwrap();
            let now = coefficient_integral(s.list(), &q[..nc]).unwrap();
            assert!((now - prev).abs() < 1e-11, "{riemann:?} step {k}: {:.2e}", now - prev);
            prev = now;
        }
    }
}

#[test]
fn ape_energy_does_not_grow_with_walls() {
    let mesh = structured_mesh(4, 4, [-1.0, 1.0], [-1.0, 1.0], true).unwrap();
    let s = pulse_solver(&mesh, RiemannKind::Upwind);
    let mut q = s.initial_state([&gaussian(0.0, 0.25), &|_, _| 0.0, &|_, _| 0.0]).unwrap();
    let e0 = s.energy(&q).unwrap();
    let mut prev = e0;
    for k in 0..400 {
        s.step(&mut q, k as f64 * 0.002, 0.002, k).unwrap();
        let now = s.energy(&q).unwrap();
        assert!(now <= prev * (1.0 + 1e-12), "step {k}: energy grew {prev} -> {now}");
        prev = now;
    }
    assert!(prev < e0);
}

#[test]
fn unstable_time_step_reports_non_finite_state() {
    let mesh = structured_mesh(4, 4, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
    let s = advection(&mesh, 6, Strategy::SumFac);
    let mut u = project(s.list(), gaussian(0.3, 0.2)).unwrap();
    let err = (0..10_000)
        .find_map(|k| s.step(&mut u, k as f64 * 0.5, 0.5, k).err())
        .expect("divergence is detected");
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
}

#[test]
fn strategies_give_matching_solutions_and_runs_are_reproducible() {
    let mesh = structured_mesh(4, 4, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
    let run = |strategy| {
        let s = advection(&mesh, 5, strategy);
        let mut u = project(s.list(), gaussian(0.3, 0.2)).unwrap();
        for k in 0..20 {
            s.step(&mut u, k as f64 * 0.004, 0.004, k).unwrap();
        }
        u
    };
    let reference = run(Strategy::SumFac);
    assert_eq!(reference, run(Strategy::SumFac));
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for strategy in [Strategy::StdMat, Strategy::IterPerExp, Strategy::Auto] {
        let other = run(strategy);
        let diff = other.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-13 * scale, "{strategy:?}: {diff:.2e}");
    }
}

#[test]
fn output_filter_does_not_perturb_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = structured_mesh(3, 3, [-1.0, 1.0], [-1.0, 1.0], false).unwrap();
    let s = advection(&mesh, 4, Strategy::SumFac);
    let u0 = project(s.list(), gaussian(0.3, 0.2)).unwrap();
    let mut writer = OutputWriter::new(3, dir.path().join("snap"), OutputFormat::Nfj, None).unwrap();
    let (mut plain, mut observed) = (u0.clone(), u0);
    for k in 0..10 {
        let t = k as f64 * 0.01;
        s.step(&mut plain, t, 0.01, k).unwrap();
        s.step(&mut observed, t, 0.01, k).unwrap();
        writer.observe(k + 1, t + 0.01, &mesh, s.list(), &["u"], &[&observed]).unwrap();
    }
    assert_eq!(plain.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), observed.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(writer.written().len(), 3);
}

#[test]
fn cg_projection_is_continuous_across_elements() {
    let mesh = common::jittered(3, 3, true, 0.15, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7));
    for p in [4, 6] {
        let list = ExpList::uniform(&mesh, p, BasisType::ModifiedA).unwrap();
        let c = project_cg(&mesh, &list, |x, y| (3.0 * x).sin() * (2.0 * y).cos(), &SolverOptions::default()).unwrap();
        let traces = build_trace(&mesh, &list, &[]).unwrap();
        let mut jump = 0.0f64;
        for t in traces.traces.iter().filter(|t| !t.is_boundary()) {
            let r = t.right.as_ref().unwrap();
            let a = t.left.interp.matvec(&c[list.element(t.left.element).coeff_range()]);
            let b = r.interp.matvec(&c[list.element(r.element).coeff_range()]);
            jump = a.iter().zip(&b).fold(jump, |m, (x, y)| m.max((x - y).abs()));
        }
        assert!(jump < 1e-9, "P={p}: {jump:.2e}");
    }
}
