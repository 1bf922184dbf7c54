//! Command-line driver. `run` returns the process exit code: 0 on success,
//! 1 on usage errors, 2 on runtime errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::assembly::SolverOptions;
use crate::basis::BasisType;
use crate::collections::{Collection, OpType, Strategy};
use crate::error::{Error, Result};
use crate::explist::ExpList;
use crate::meshio::{build_dual_graph, extract_partition, partition, structured_mesh, write_canonical, MeshGraph};
use crate::session::{parse_param_overrides, Discretisation, Expression, Session};
use crate::solvers::{
    adapt_p, coefficient_integral, helmholtz, project, project_cg, AdvectionSolver, ApeConfig, ApeSolver,
    OutputWriter, Snapshot, APE_VARIABLES,
};
use crate::stdregions::ShapeType;

#[derive(Parser, Debug)]
#[command(name = "spechp", version, about = "Spectral/hp element kernel driver", arg_required_else_help = true)]
struct Cli {
    /// Worker threads for element-parallel kernels.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Progress messages on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SessionArgs {
    #[arg(long)]
    session: PathBuf,
    /// Override a session parameter.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Final field snapshot (NFJ).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Quad,
    Tri,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Galerkin projection of the session's initial condition.
    Project(SessionArgs),
    /// Continuous Galerkin Helmholtz solve.
    SolveHelmholtz(SessionArgs),
    /// Explicit DG linear advection.
    SolveAdvect(SessionArgs),
    /// Explicit DG acoustic perturbation equations.
    SolveApe(SessionArgs),
    /// Split a mesh into parts.
    Partition {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        parts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the collection strategies and report the autotuner's choice.
    BenchCollections {
        /// Mesh to benchmark on (default: structured unit square).
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, value_enum, default_value = "quad")]
        shape: ShapeArg,
        /// Elements per direction of the default mesh.
        #[arg(long, default_value_t = 8)]
        elements: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        warmups: usize,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entity counts of a mesh.
    MeshInfo {
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Convert an NFJ snapshot to legacy VTK.
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Visualisation points per element edge.
        #[arg(long)]
        resolution: Option<usize>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let verbose = cli.verbose;
    match pool.install(|| dispatch(cli.command, verbose)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            2
        }
    }
}

fn dispatch(cmd: Command, verbose: bool) -> Result<()> {
    let log = |msg: &str| {
        if verbose {
            eprintln!("[spechp] {msg}");
        }
    };
    match cmd {
        Command::Project(a) => cmd_project(&a, &log),
        Command::SolveHelmholtz(a) => cmd_helmholtz(&a, &log),
        Command::SolveAdvect(a) => cmd_advect(&a, &log),
        Command::SolveApe(a) => cmd_ape(&a, &log),
        Command::Partition { mesh, parts, out } => cmd_partition(&mesh, parts, &out),
        Command::BenchCollections {
            mesh,
            order,
            shape,
            elements,
            trials,
            warmups,
            out,
        } => cmd_bench(mesh.as_deref(), order, shape, elements, trials, warmups, out.as_deref(), &log),
        Command::MeshInfo { mesh } => cmd_mesh_info(&mesh),
        Command::Convert { input, out, resolution } => {
            Snapshot::read_nfj(&input)?.write_vtk(&out, resolution)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn load(a: &SessionArgs, log: &dyn Fn(&str)) -> Result<Session> {
    let s = Session::load_with(&a.session, &parse_param_overrides(&a.params)?)?;
    for (k, v) in &s.parameters {
        log(&format!("parameter {k} = {v}"));
    }
    Ok(s)
}

fn writers(s: &Session) -> Result<Vec<OutputWriter>> {
    s.filters
        .iter()
        .map(|f| OutputWriter::new(f.every, &f.path, f.format, f.resolution))
        .collect()
}

fn solver_options(s: &Session) -> SolverOptions {
    SolverOptions {
        tol: s.solver.tolerance,
        max_iter: s.solver.max_iterations,
        ..SolverOptions::default()
    }
}

fn exact_error(s: &Session, list: &ExpList, name: &str, coeffs: &[f64], t: f64) -> Result<Option<f64>> {
    match s.exact.get(name) {
        Some(e) => {
            let exact = list.evaluate(|x, y| e.eval(x, y, t));
            Ok(Some(list.l2_diff(&list.bwd_trans(coeffs)?, &exact)?))
        }
        None => Ok(None),
    }
}

fn write_final(path: &Option<PathBuf>, snap: Snapshot) -> Result<()> {
    if let Some(p) = path {
        snap.write_nfj(p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_project(a: &SessionArgs, log: &dyn Fn(&str)) -> Result<()> {
    let s = load(a, log)?;
    let mut ws = writers(&s)?;
    let (name, f) = s
        .initial
        .get_key_value("u")
        .or_else(|| s.initial.iter().next())
        .ok_or_else(|| Error::Session("projection needs an 'initial' expression".into()))?;
    let list = s.expansion_list()?;
    log(&format!("{} elements, {} coefficients", list.len(), list.ncoeffs()));
    let coeffs = match s.solver.discretisation {
        Discretisation::Dg => project(&list, |x, y| f.eval(x, y, 0.0))?,
        Discretisation::Cg => project_cg(&s.mesh, &list, |x, y| f.eval(x, y, 0.0), &solver_options(&s))?,
    };
    let integral = list.integral(&list.bwd_trans(&coeffs)?)?;
    println!("integral = {integral:.12}");
    if let Some(err) = exact_error(&s, &list, name, &coeffs, 0.0)? {
        println!("l2_error = {err:.6e}");
    }
    for w in &mut ws {
        w.observe(0, 0.0, &s.mesh, &list, &[name], &[&coeffs])?;
    }
    write_final(&a.out, Snapshot::new(&s.mesh, &list, &[name], &[&coeffs], 0.0, 0)?)
}

fn cmd_helmholtz(a: &SessionArgs, log: &dyn Fn(&str)) -> Result<()> {
    let s = load(a, log)?;
    let mut ws = writers(&s)?;
    let forcing = s
        .forcing
        .clone()
        .ok_or_else(|| Error::Session("Helmholtz solver needs a 'forcing' expression".into()))?;
    let list = s.expansion_list()?;
    log(&format!("{} elements, λ = {}", list.len(), s.solver.lambda));
    let sol = helmholtz(&s.mesh, &list, s.solver.lambda, &forcing, &s.boundary, &solver_options(&s))?;
    println!("iterations = {}", sol.iterations);
    println!("residual = {:.6e}", sol.residual);
    if let Some(err) = exact_error(&s, &list, "u", &sol.coeffs, 0.0)? {
        println!("l2_error = {err:.6e}");
    }
    for w in &mut ws {
        w.observe(0, 0.0, &s.mesh, &list, &["u"], &[&sol.coeffs])?;
    }
    write_final(&a.out, Snapshot::new(&s.mesh, &list, &["u"], &[&sol.coeffs], 0.0, 0)?)
}

fn cmd_advect(a: &SessionArgs, log: &dyn Fn(&str)) -> Result<()> {
    let s = load(a, log)?;
    let mut ws = writers(&s)?;
    let velocity = s
        .velocity
        .clone()
        .ok_or_else(|| Error::Session("advection solver needs a 'velocity' pair".into()))?;
    let init = s
        .initial
        .get("u")
        .ok_or_else(|| Error::Session("advection solver needs initial.u".into()))?;
    if let Some(ad) = &s.adaptivity {
        if ad.variable != "u" {
            return Err(Error::Session(format!(
                "adaptivity.variable '{}' is not an advection variable (expected 'u')",
                ad.variable
            )));
        }
    }
    let (dt, steps) = s.solver.time_stepping()?;
    let mut solver = AdvectionSolver::new(&s.mesh, s.expansion_list()?, &velocity, &s.boundary, s.collections)?;
    let mut u = project(solver.list(), |x, y| init.eval(x, y, 0.0))?;
    let i0 = coefficient_integral(solver.list(), &u)?;
    let start = Instant::now();
    let mut t = 0.0;
    for w in &mut ws {
        w.observe(0, t, &s.mesh, solver.list(), &["u"], &[&u])?;
    }
    for step in 1..=steps {
        solver.step(&mut u, t, dt, step)?;
        t = step as f64 * dt;
        if let Some(ad) = &s.adaptivity {
            if step % ad.n_steps.max(1) == 0 {
                let (list, mut fields, rep) = adapt_p(
                    &s.mesh,
                    solver.list(),
                    &[&u],
                    0,
                    ad.threshold_hi,
                    ad.threshold_lo,
                    ad.p_min,
                    ad.p_max,
                )?;
                log(&format!("step {step}: adapted, max sensor {:.3e}", rep.s.iter().fold(0.0f64, |m, v| m.max(*v))));
                u = fields.remove(0);
                solver = AdvectionSolver::new(&s.mesh, list, &velocity, &s.boundary, s.collections)?;
            }
        }
        for w in &mut ws {
            w.observe(step, t, &s.mesh, solver.list(), &["u"], &[&u])?;
        }
        if step % 100 == 0 {
            log(&format!("step {step}/{steps}, t = {t:.6}"));
        }
    }
    let i1 = coefficient_integral(solver.list(), &u)?;
    println!("steps = {steps}");
    println!("time = {t:.6}");
    println!("integral_initial = {i0:.15e}");
    println!("integral_final = {i1:.15e}");
    println!("integral_drift = {:.3e}", (i1 - i0).abs());
    if let Some(err) = exact_error(&s, solver.list(), "u", &u, t)? {
        println!("l2_error = {err:.6e}");
    }
    log(&format!("wall time {:.3} s", start.elapsed().as_secs_f64()));
    write_final(&a.out, Snapshot::new(&s.mesh, solver.list(), &["u"], &[&u], t, steps)?)
}

fn ape_config(s: &Session) -> Result<ApeConfig> {
    let mut cfg = ApeConfig::quiescent(s.solver.riemann);
    if let Some(b) = &s.base_flow {
        cfg.base = [b.u.clone(), b.v.clone(), b.rho.clone(), b.c2.clone()];
    }
    for (name, e) in &s.sources {
        let i = APE_VARIABLES.iter().position(|v| v == name).ok_or_else(|| {
            Error::Session(format!("sources.{name}: APE variables are p, u and v"))
        })?;
        cfg.sources[i] = Some(e.clone());
    }
    Ok(cfg)
}

fn cmd_ape(a: &SessionArgs, log: &dyn Fn(&str)) -> Result<()> {
    let s = load(a, log)?;
    let mut ws = writers(&s)?;
    let cfg = ape_config(&s)?;
    let sensor_var = match &s.adaptivity {
        Some(ad) => Some(APE_VARIABLES.iter().position(|v| *v == ad.variable).ok_or_else(|| {
            Error::Session(format!("adaptivity.variable '{}' is not one of p, u, v", ad.variable))
        })?),
        None => None,
    };
    let (dt, steps) = s.solver.time_stepping()?;
    let mut solver = ApeSolver::new(&s.mesh, s.expansion_list()?, cfg.clone(), &s.boundary, s.collections)?;
    let zero = Expression::constant(0.0);
    let init: Vec<&Expression> = APE_VARIABLES.iter().map(|v| s.initial.get(*v).unwrap_or(&zero)).collect();
    let mut q = solver.initial_state([
        &|x, y| init[0].eval(x, y, 0.0),
        &|x, y| init[1].eval(x, y, 0.0),
        &|x, y| init[2].eval(x, y, 0.0),
    ])?;
    let e0 = solver.energy(&q)?;
    let start = Instant::now();
    let mut t = 0.0;
    let observe = |ws: &mut Vec<OutputWriter>, solver: &ApeSolver, q: &[f64], step: usize, t: f64| -> Result<()> {
        let nc = solver.list().ncoeffs();
        let fields: Vec<&[f64]> = q.chunks(nc).collect();
        for w in ws.iter_mut() {
            w.observe(step, t, &s.mesh, solver.list(), &APE_VARIABLES, &fields)?;
        }
        Ok(())
    };
    observe(&mut ws, &solver, &q, 0, t)?;
    for step in 1..=steps {
        solver.step(&mut q, t, dt, step)?;
        t = step as f64 * dt;
        if let (Some(ad), Some(var)) = (&s.adaptivity, sensor_var) {
            if step % ad.n_steps.max(1) == 0 {
                let nc = solver.list().ncoeffs();
                let fields: Vec<&[f64]> = q.chunks(nc).collect();
                let (list, new, _) = adapt_p(
                    &s.mesh,
                    solver.list(),
                    &fields,
                    var,
                    ad.threshold_hi,
                    ad.threshold_lo,
                    ad.p_min,
                    ad.p_max,
                )?;
                q = new.concat();
                solver = ApeSolver::new(&s.mesh, list, cfg.clone(), &s.boundary, s.collections)?;
                log(&format!("step {step}: adapted to {} coefficients", solver.list().ncoeffs()));
            }
        }
        observe(&mut ws, &solver, &q, step, t)?;
        if step % 100 == 0 {
            log(&format!("step {step}/{steps}, t = {t:.6}"));
        }
    }
    let e1 = solver.energy(&q)?;
    println!("steps = {steps}");
    println!("time = {t:.6}");
    println!("energy_initial = {e0:.15e}");
    println!("energy_final = {e1:.15e}");
    if e0 > 0.0 {
        println!("energy_relative_change = {:.3e}", (e1 - e0) / e0);
    }
    log(&format!("wall time {:.3} s", start.elapsed().as_secs_f64()));
    let nc = solver.list().ncoeffs();
    let fields: Vec<&[f64]> = q.chunks(nc).collect();
    write_final(&a.out, Snapshot::new(&s.mesh, solver.list(), &APE_VARIABLES, &fields, t, steps)?)
}

fn cmd_partition(mesh_path: &Path, k: usize, out: &Path) -> Result<()> {
    let mesh = MeshGraph::read(mesh_path)?;
    let graph = build_dual_graph(&mesh)?;
    let part = partition(&graph, k)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for i in 0..k {
        extract_partition(&mesh, &graph, &part.parts, i)?.write(out.join(format!("part_{i}.nmj")))?;
    }
    let report = json!({
        "elements": part.parts.len(),
        "parts": k,
        "sizes": part.sizes,
        "edge_cut": part.edge_cut,
        "assignment": part.parts,
    });
    let mut text = String::new();
    write_canonical(&report, 0, &mut text);
    text.push('\n');
    let path = out.join("partition_report.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("{:>6} {:>10}", "part", "elements");
    for (i, n) in part.sizes.iter().enumerate() {
        println!("{i:>6} {n:>10}");
    }
    println!("edge_cut = {}", part.edge_cut);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    mesh_path: Option<&Path>,
    order: usize,
    shape: ShapeArg,
    elements: usize,
    trials: usize,
    warmups: usize,
    out: Option<&Path>,
    log: &dyn Fn(&str),
) -> Result<()> {
    let mesh = match mesh_path {
        Some(p) => MeshGraph::read(p)?,
        None => structured_mesh(elements, elements, [0.0, 1.0], [0.0, 1.0], matches!(shape, ShapeArg::Tri))?,
    };
    let list = ExpList::uniform(&mesh, order, BasisType::ModifiedA)?;
    let mut groups: BTreeMap<ShapeType, Vec<usize>> = BTreeMap::new();
    for (i, e) in list.elements().iter().enumerate() {
        groups.entry(e.id.0).or_default().push(i);
    }
    println!(
        "{:<6} {:<16} {:<11} {:>14} {:>7}",
        "shape", "operator", "strategy", "median [us]", "chosen"
    );
    let mut json_groups = Vec::new();
    for (shape, idx) in &groups {
        let mut ops = Vec::new();
        for op in OpType::ALL {
            log(&format!("timing {op:?} on {} {}s", idx.len(), shape.name()));
            let c = Collection::from_explist(&list, idx, op, Strategy::StdMat)?;
            let rep = c.autotune(&Strategy::CONCRETE, trials, warmups)?;
            for t in &rep.timings {
                println!(
                    "{:<6} {:<16} {:<11} {:>14.3} {:>7}",
                    shape.name(),
                    format!("{op:?}"),
                    t.strategy.name(),
                    t.median * 1e6,
                    if t.strategy == rep.chosen { "*" } else { "" }
                );
            }
            ops.push(serde_json::to_value(&rep)?);
        }
        json_groups.push(json!({ "shape": shape.name(), "elements": idx.len(), "operators": ops }));
    }
    if let Some(p) = out {
        let report = json!({ "order": order, "trials": trials, "warmups": warmups, "groups": json_groups });
        std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_mesh_info(path: &Path) -> Result<()> {
    let mesh = MeshGraph::read(path)?;
    mesh.validate()?;
    let (v, s, t, q) = mesh.counts();
    let mut line = format!("verts={v} segs={s}");
    if t > 0 {
        line += &format!(" tris={t}");
    }
    if q > 0 || t == 0 {
        line += &format!(" quads={q}");
    }
    println!("{line}");
    for (id, c) in &mesh.composites {
        println!("composite {id}: {} {}", c.ids.len(), c.kind.name());
    }
    for (name, ids) in &mesh.boundary {
        println!("boundary {name}: composites {ids:?}");
    }
    Ok(())
}
