use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;

use dmaop_core::dmaop::{affine_piece, discrete_jacobian, objective, Variant};
use dmaop_core::io::{write_json, MeshFile, ProblemConfig, SolutionFile};
use dmaop_core::potential::build_potential;
use dmaop_core::solver::solve;
use dmaop_core::transport::{
    assignment_oracle, convergence_study, cyclical_check, two_sided_cost, DiscreteMap, MAX_EXHAUSTIVE,
};
use dmaop_core::Mesh64;

use crate::render;
use crate::{Cli, Command, Global};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ITERATION_CAP: u8 = 2;
pub const EXIT_VERIFY_FAILED: u8 = 3;

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Mesh { config, h, out } => cmd_mesh(g, config, *h, out),
        Command::Solve {
            config,
            out,
            mesh_in,
            mesh_out,
            h,
        } => cmd_solve(g, config, out, mesh_in.as_deref(), mesh_out, *h),
        Command::Verify {
            solution,
            tol,
            max_len,
            trials,
        } => cmd_verify(g, solution, *tol, *max_len, *trials),
        Command::Study { config, h, out } => cmd_study(g, config, h, out),
        Command::Render {
            solution,
            times,
            prefix,
        } => cmd_render(g, solution, times, prefix),
        Command::Eval { solution, points, out } => cmd_eval(g, solution, points, out),
    }
}

/// Shortest round-trip text, in exponent form for very small or large values.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn output_path(g: &Global, p: &Path) -> Result<PathBuf> {
    fs::create_dir_all(&g.out_dir).with_context(|| format!("cannot create {}", g.out_dir.display()))?;
    Ok(g.out_dir.join(p))
}

fn write_output(g: &Global, p: &Path, contents: &str) -> Result<PathBuf> {
    let path = output_path(g, p)?;
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// Parses JSON, reporting the offending field path and position.
fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            anyhow!("{}: {}", path.display(), e.inner())
        } else {
            anyhow!("{}: field `{field}`: {}", path.display(), e.inner())
        }
    })?;
    de.end().map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(value)
}

fn load_config(path: &Path) -> Result<(ProblemConfig, PathBuf)> {
    let cfg: ProblemConfig = read_json(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn load_solution(path: &Path) -> Result<SolutionFile> {
    read_json(path)
}

fn mesh_size(cfg: &ProblemConfig, h: Option<f64>) -> Result<f64> {
    let h = h.unwrap_or(cfg.mesh.h);
    if !(h > 0.0 && h.is_finite()) {
        bail!("mesh size must be positive, got {h}");
    }
    Ok(h)
}

fn cmd_mesh(g: &Global, config: &Path, h: Option<f64>, out: &Path) -> Result<u8> {
    let (cfg, _) = load_config(config)?;
    let mesh = cfg.generate_mesh(mesh_size(&cfg, h)?)?;
    let q = mesh.quality(0.0)?;
    let path = write_output(g, out, &write_json(&MeshFile::from_mesh(&mesh))?)?;
    println!("vertices      {}", mesh.num_vertices());
    println!("simplices     {}", mesh.num_simplices());
    println!("h_max         {:.6e}", q.h_max);
    println!("r_min         {:.6e}", q.r_min);
    println!("min_volume    {:.6e}", q.min_volume);
    if let Some(gap) = q.coverage_gap {
        println!("coverage_gap  {gap:.6e}");
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_solve(g: &Global, config: &Path, out: &Path, mesh_in: Option<&Path>, mesh_out: &Path, h: Option<f64>) -> Result<u8> {
    let (cfg, base) = load_config(config)?;
    let mesh = match mesh_in {
        Some(p) => {
            let mf: MeshFile = read_json(p)?;
            mf.to_mesh().with_context(|| format!("invalid mesh {}", p.display()))?
        }
        None => {
            let mesh = cfg.generate_mesh(mesh_size(&cfg, h)?)?;
            let path = write_output(g, mesh_out, &write_json(&MeshFile::from_mesh(&mesh))?)?;
            println!("wrote {}", path.display());
            mesh
        }
    };
    let inst = cfg.instance(&base, Some(mesh))?;
    let mut opts = cfg.solver_options();
    opts.seed = g.seed;
    let (sol, report) = solve(&inst, &opts)?;
    let file = SolutionFile::new(&inst, &sol, &report, g.timings)?;
    let path = write_output(g, out, &file.to_json()?)?;
    println!("variant         {}", sol.variant);
    println!("N               {}", inst.mesh.num_vertices());
    println!("cost            {:.6e}", sol.cost);
    println!("initial cost    {:.6e}", report.initial_cost);
    println!("hyperplane_max  {:.6e}", report.residuals.hyperplane_max);
    println!("target_max      {:.6e}", report.residuals.target_max);
    println!("min_eig_h       {:.6e}", report.residuals.min_eig_h);
    println!(
        "iterations      outer {} newton {} subgradient {}",
        report.outer_iters, report.newton_iters, report.subgrad_iters
    );
    println!("stop reason     {:?}", report.reason);
    println!("wall time       {:.3} s", report.wall_time_s);
    println!("wrote {}", path.display());
    Ok(if report.converged { EXIT_OK } else { EXIT_ITERATION_CAP })
}

/// Largest `max_i affine_i(x_j) - ψ_j` and the vertex `j` attaining it.
fn worst_hyperplane(mesh: &Mesh64, psi: &[f64], eta: &[f64]) -> (f64, usize) {
    let n = psi.len();
    let d = mesh.dim();
    let mut worst = (f64::NEG_INFINITY, 0);
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            let v = affine_piece(psi[i], &eta[i * d..(i + 1) * d], mesh.vertex(i), mesh.vertex(j)) - psi[j];
            if v > worst.0 {
                worst = (v, j);
            }
        }
    }
    if n < 2 {
        worst.0 = 0.0;
    }
    worst
}

fn verify_report(file: &SolutionFile, tol: f64, max_len: usize, trials: usize, seed: u64) -> Result<(String, Vec<String>)> {
    let inst = file.instance()?;
    let dv = file.decision_vector()?;
    dv.check_against(&inst.mesh)?;
    let mesh = &inst.mesh;
    let mut out = String::new();
    let mut problems = Vec::new();
    writeln!(out, "variant          {}", file.variant)?;
    writeln!(out, "N                {}", dv.len())?;

    match objective(mesh, &dv.eta, &inst.f, &inst.g, file.variant) {
        Ok(c) => {
            writeln!(out, "cost             {:.6e} (recorded {:.6e})", c, file.cost)?;
            if (c - file.cost).abs() > 1e-9 * (1.0 + file.cost.abs()) {
                problems.push(format!("recorded cost {:e} does not match recomputed {:e}", file.cost, c));
            }
        }
        Err(e) => problems.push(format!("objective undefined: {e}")),
    }
    match two_sided_cost(mesh, &dv.eta, &inst.f, &inst.g) {
        Ok(c) => writeln!(out, "two_sided_cost   {c:.6e}")?,
        Err(e) => problems.push(format!("two-sided cost undefined: {e}")),
    }

    let (hp, hp_j) = worst_hyperplane(mesh, &dv.psi, &dv.eta);
    writeln!(out, "hyperplane_max   {hp:.6e} (vertex {hp_j})")?;
    if hp > tol {
        problems.push(format!("hyperplane constraint violated at vertex {hp_j} by {hp:e}"));
    }

    let (tv, tv_j) = (0..dv.len())
        .map(|j| (inst.target.violation(dv.eta_at(j)), j))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
    writeln!(out, "target_max       {tv:.6e} (vertex {tv_j})")?;
    if tv > tol {
        problems.push(format!(
            "eta of vertex {tv_j} = {:?} lies outside the target by {tv:e}",
            dv.eta_at(tv_j)
        ));
    }

    let mut eig = (f64::INFINITY, 0);
    for i in 0..mesh.num_simplices() {
        if let Ok(h) = discrete_jacobian(mesh, i, &dv.eta) {
            let e = h.min_eigenvalue();
            if e < eig.0 {
                eig = (e, i);
            }
        }
    }
    writeln!(out, "min_eig_h        {:.6e} (simplex {})", eig.0, eig.1)?;
    let eig_ok = match file.variant {
        Variant::Ldmaop => eig.0 > 0.0,
        Variant::Dmaop => eig.0 >= -tol,
    };
    if !eig_ok {
        problems.push(format!("H is not positive definite on simplex {}", eig.1));
    }

    let map = DiscreteMap::from_solution(mesh, &dv)?;
    let worst_cycle = cyclical_check(&map, max_len, trials, seed)?;
    writeln!(
        out,
        "cycle_check      {worst_cycle:.6e} (worst of {trials} cycles, length <= {max_len})"
    )?;
    if worst_cycle > tol * max_len as f64 {
        problems.push(format!("cycle sum {worst_cycle:e} is positive"));
    }

    if dv.len() <= MAX_EXHAUSTIVE {
        let v = assignment_oracle(&map)?;
        writeln!(
            out,
            "assignment       {} (identity {:.6e}, best {:.6e})",
            if v.optimal { "optimal" } else { "NOT optimal" },
            v.identity_cost,
            v.best_cost
        )?;
        if !v.optimal {
            problems.push("vertex-to-eta assignment is not optimal".into());
        }
    } else {
        writeln!(out, "assignment       skipped (N > {MAX_EXHAUSTIVE})")?;
    }
    Ok((out, problems))
}

fn cmd_verify(g: &Global, solution: &Path, tol: f64, max_len: usize, trials: usize) -> Result<u8> {
    let file = load_solution(solution)?;
    let (report, problems) = verify_report(&file, tol, max_len, trials, g.seed)?;
    print!("{report}");
    if problems.is_empty() {
        println!("verdict          ok");
        Ok(EXIT_OK)
    } else {
        println!("verdict          FAILED");
        for p in &problems {
            eprintln!("verify: {p}");
        }
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_study(g: &Global, config: &Path, hs: &[f64], out: &Path) -> Result<u8> {
    let (cfg, base) = load_config(config)?;
    let mut opts = cfg.solver_options();
    opts.seed = g.seed;
    let outcome = convergence_study(
        |h| cfg.instance(&base, Some(cfg.generate_mesh(h)?)),
        &opts,
        hs,
        cfg.reference.as_ref(),
    )?;
    let mut csv = String::from("N,h,cost,two_sided,sup_err,runtime_s\n");
    for r in &outcome.rows {
        let sup = r.sup_err.map(num).unwrap_or_default();
        let rt = if g.timings { num(r.runtime_s) } else { String::new() };
        writeln!(csv, "{},{},{},{},{},{}", r.n, num(r.h), num(r.cost), num(r.two_sided), sup, rt)?;
        println!(
            "N = {:5}  h = {:<8}  cost = {:.6e}  two_sided = {:.6e}  sup_err = {}  ({:.2} s)",
            r.n,
            r.h,
            r.cost,
            r.two_sided,
            r.sup_err.map_or("-".into(), |e| format!("{e:.6e}")),
            r.runtime_s
        );
    }
    match outcome.slope {
        Some(s) => {
            writeln!(csv, "# slope_cost_vs_N,{}", num(s))?;
            println!("log-log slope of cost vs N: {s:.4}");
        }
        None => {
            writeln!(csv, "# slope_cost_vs_N,")?;
            println!("log-log slope of cost vs N: undefined");
        }
    }
    let path = write_output(g, out, &csv)?;
    println!("wrote {}", path.display());
    if let Some(f) = outcome.failure {
        bail!("study stopped early: {f}");
    }
    Ok(EXIT_OK)
}

fn cmd_render(g: &Global, solution: &Path, times: &[f64], prefix: &str) -> Result<u8> {
    if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        bail!("render time {t} outside [0, 1]");
    }
    let file = load_solution(solution)?;
    let frames = render::frames(&file, times)?;
    for (k, svg) in frames.iter().enumerate() {
        let path = write_output(g, Path::new(&format!("{prefix}_{k}.svg")), svg)?;
        println!("t = {:.4}  {}", times[k], path.display());
    }
    Ok(EXIT_OK)
}

/// Reads `x,y` rows; blank lines, `#` comments and a header line are skipped.
fn read_points(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut pts = Vec::new();
    let mut first = true;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(p) if p.len() == dim && p.iter().all(|c| c.is_finite()) => pts.push(p),
            Ok(p) => bail!(
                "{}:{}: expected {dim} finite coordinates, found {}",
                path.display(),
                ln + 1,
                p.len()
            ),
            Err(_) if first => {}
            Err(e) => bail!("{}:{}: {e}", path.display(), ln + 1),
        }
        first = false;
    }
    Ok(pts)
}

fn cmd_eval(g: &Global, solution: &Path, points: &Path, out: &Path) -> Result<u8> {
    let file = load_solution(solution)?;
    let mesh = file.mesh.to_mesh()?;
    let dv = file.decision_vector()?;
    let phi = build_potential(&mesh, &dv)?;
    let dim = mesh.dim();
    let pts = read_points(points, dim)?;
    let mut csv = String::new();
    let names = |p: &str| (0..dim).map(|k| format!("{p}{k}")).collect::<Vec<_>>().join(",");
    writeln!(csv, "{},phi,selector,{}", names("x"), names("eta"))?;
    for x in &pts {
        let j = phi.selector(x);
        let join = |v: &[f64]| v.iter().map(|&c| num(c)).collect::<Vec<_>>().join(",");
        writeln!(csv, "{},{},{},{}", join(x), num(phi.eval(x)), j, join(phi.slope(j)))?;
    }
    let path = write_output(g, out, &csv)?;
    println!("evaluated {} points, wrote {}", pts.len(), path.display());
    Ok(EXIT_OK)
}
