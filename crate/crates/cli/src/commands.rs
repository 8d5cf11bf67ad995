use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use bregman_dc::con::{noise_kappa, ConProblem};
use bregman_dc::data::{gen_instance, load_csv_matrix, load_instance, save_instance, ProblemInstance};
use bregman_dc::methods::{run_timed, FistaInitializer, MethodOptions, MethodRegistry, ProblemSetup};
use bregman_dc::reg::RegProblem;
use nalgebra::DMatrix;

use crate::args::{BenchArgs, GenArgs, PlotArgs, PlotAxis, SolveArgs};
use crate::config::{
    output_path, read_json, BenchConfig, ProblemKind, SolveConfig, DEFAULT_LAMBDA, DEFAULT_MU, DEFAULT_NF,
};
use crate::report::{RunParams, RunReport};

pub const BENCH_HEADER: [&str; 9] = ["size", "method", "obj", "feas", "rec", "outer_iter", "ssn_iter", "time", "t0"];

pub fn cmd_gen(args: &GenArgs) -> anyhow::Result<PathBuf> {
    let inst = gen_instance(args.m, args.n, args.s, args.seed)?;
    let out = output_path(&args.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_instance(&inst, &out)?;
    Ok(out)
}

/// Builds the problem for `kind` on `a`, `inst.b` with parameters from `cfg`.
pub fn build_setup(
    kind: ProblemKind,
    a: Arc<DMatrix<f64>>,
    inst: &ProblemInstance,
    cfg: &SolveConfig,
) -> anyhow::Result<(ProblemSetup, RunParams)> {
    let max_iter = cfg.max_iter;
    match kind {
        ProblemKind::L12reg => {
            let lambda = match (cfg.lambda, cfg.lambda_c) {
                (Some(l), _) => l,
                (None, Some(c)) => c * a.tr_mul(&inst.b).amax(),
                (None, None) => DEFAULT_LAMBDA,
            };
            let p = RegProblem::new(a, inst.b.clone(), lambda)?;
            let setup = ProblemSetup::Reg(p);
            let params = RunParams {
                lambda: Some(lambda),
                mu: None,
                kappa: None,
                sigma: cfg.sigma,
                max_iter: max_iter.unwrap_or(setup.default_max_iter()),
            };
            Ok((setup, params))
        }
        ProblemKind::L12con => {
            let mu = cfg.mu.unwrap_or(DEFAULT_MU);
            let kappa = match (cfg.kappa, cfg.kappa_c, &inst.noise) {
                (Some(k), _, _) => k,
                (None, Some(c), _) => c * inst.b.norm(),
                (None, None, Some(noise)) => noise_kappa(noise, cfg.nf.unwrap_or(DEFAULT_NF)),
                (None, None, None) => bail!("instance has no noise vector; pass --kappa or --kappa-c"),
            };
            let p = ConProblem::new(a, inst.b.clone(), mu, kappa)?;
            let setup = ProblemSetup::Con(p);
            let params = RunParams {
                lambda: None,
                mu: Some(mu),
                kappa: Some(kappa),
                sigma: cfg.sigma,
                max_iter: max_iter.unwrap_or(setup.default_max_iter()),
            };
            Ok((setup, params))
        }
    }
}

fn method_options(cfg: &SolveConfig) -> MethodOptions {
    MethodOptions {
        max_iter: cfg.max_iter,
        sigma: cfg.sigma,
        ..Default::default()
    }
}

pub fn cmd_solve(args: &SolveArgs) -> anyhow::Result<RunReport> {
    let file_cfg = match &args.config {
        Some(path) => read_json::<SolveConfig>(path)?,
        None => SolveConfig::default(),
    };
    let cfg = file_cfg.merged(args.flag_config());
    let inst = match (&args.instance, &args.a_csv, &args.b_csv) {
        (Some(path), _, _) => load_instance(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(a), Some(b)) => load_csv_matrix(a, b)?,
        _ => bail!("pass --instance or both --a-csv and --b-csv"),
    };
    let kind = cfg.problem.unwrap_or(ProblemKind::L12reg);
    let registry = MethodRegistry::default();
    let method = registry.get(cfg.method.as_deref().unwrap_or("ibpdca-sc1"))?;
    let (setup, params) = build_setup(kind, Arc::new(inst.a.clone()), &inst, &cfg)?;
    let run = run_timed(method, &FistaInitializer::default(), &setup, &method_options(&cfg))?;
    let report = RunReport::new(kind, &inst, params, run, true);
    report.save(&output_path(&args.out))?;
    if let Some(path) = &args.trajectory {
        report.write_trajectory_csv(&output_path(path))?;
    }
    Ok(report)
}

#[derive(Default)]
struct Cell {
    obj: f64,
    feas: f64,
    rec: f64,
    rec_count: usize,
    outer: f64,
    ssn: f64,
    time: f64,
    t0: f64,
    ok: usize,
    failed: usize,
}

impl Cell {
    fn add(&mut self, r: &RunReport) {
        self.obj += r.obj;
        self.feas += r.feas;
        if let Some(rec) = r.rec {
            self.rec += rec;
            self.rec_count += 1;
        }
        self.outer += r.outer_iter as f64;
        self.ssn += r.ssn_iter as f64;
        self.time += r.time;
        self.t0 += r.t0;
        self.ok += 1;
    }

    fn record(&self, size: &str, method: &str) -> Vec<String> {
        let n = self.ok as f64;
        let avg = |v: f64| v / n;
        let mut label = method.to_string();
        if self.failed > 0 {
            let _ = write!(label, "|failed={}", self.failed);
        }
        if self.ok == 0 {
            let mut row = vec![size.to_string(), label];
            row.extend(std::iter::repeat_n(String::from("nan"), 7));
            return row;
        }
        vec![
            size.to_string(),
            label,
            format!("{:.6e}", avg(self.obj)),
            format!("{:.3e}", avg(self.feas)),
            if self.rec_count > 0 {
                format!("{:.3e}", self.rec / self.rec_count as f64)
            } else {
                String::new()
            },
            format!("{:.1}", avg(self.outer)),
            format!("{:.1}", avg(self.ssn)),
            format!("{:.3}", avg(self.time)),
            format!("{:.3}", avg(self.t0)),
        ]
    }
}

pub fn bench_config(args: &BenchArgs, registry: &MethodRegistry) -> anyhow::Result<BenchConfig> {
    let mut cfg = match (&args.config, args.problem) {
        (Some(path), _) => read_json::<BenchConfig>(path)?,
        (None, Some(problem)) => BenchConfig::new(problem),
        (None, None) => bail!("pass --config or --problem"),
    };
    if let Some(problem) = args.problem {
        cfg.problem = problem;
    }
    if !args.sizes.is_empty() {
        cfg.sizes = args.sizes.clone();
    }
    if !args.lambdas.is_empty() {
        cfg.lambdas = args.lambdas.clone();
    }
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    if !args.nfs.is_empty() {
        cfg.nfs = args.nfs.clone();
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.base_seed {
        cfg.base_seed = s;
    }
    if args.max_iter.is_some() {
        cfg.max_iter = args.max_iter;
    }
    cfg.finalize(registry)
}

/// Runs the grid; returns the path of the summary CSV. Failed runs are
/// reported on stderr and flagged in the method cell.
pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<PathBuf> {
    let registry = MethodRegistry::default();
    let cfg = bench_config(args, &registry)?;
    let out_dir = output_path(&args.out_dir);
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let params = cfg.params();
    let mut rows = Vec::new();
    for size in &cfg.sizes {
        let mut cells: Vec<Vec<Cell>> = params
            .iter()
            .map(|_| cfg.methods.iter().map(|_| Cell::default()).collect())
            .collect();
        for trial in 0..cfg.trials {
            let seed = cfg.base_seed.wrapping_add(trial as u64);
            let inst = gen_instance(size.m, size.n, size.s, seed)?;
            let a = Arc::new(inst.a.clone());
            for (pi, (plabel, value)) in params.iter().enumerate() {
                let solve_cfg = SolveConfig {
                    lambda: (cfg.problem == ProblemKind::L12reg).then_some(*value),
                    nf: (cfg.problem == ProblemKind::L12con).then_some(*value),
                    mu: Some(cfg.mu),
                    max_iter: cfg.max_iter,
                    ..Default::default()
                };
                let (setup, run_params) = build_setup(cfg.problem, a.clone(), &inst, &solve_cfg)?;
                for (mi, name) in cfg.methods.iter().enumerate() {
                    let method = registry.get(name)?;
                    let cell = &mut cells[pi][mi];
                    match run_timed(method, &FistaInitializer::default(), &setup, &method_options(&solve_cfg)) {
                        Ok(run) => {
                            let report = RunReport::new(cfg.problem, &inst, run_params.clone(), run, false);
                            report.save(&runs_dir.join(format!("{size}_{plabel}_{name}_seed{seed}.json")))?;
                            cell.add(&report);
                        }
                        Err(e) => {
                            eprintln!("{size} {plabel} {name} seed {seed}: {e}");
                            cell.failed += 1;
                        }
                    }
                }
            }
        }
        for (pi, (plabel, _)) in params.iter().enumerate() {
            for (mi, name) in cfg.methods.iter().enumerate() {
                rows.push(cells[pi][mi].record(&size.to_string(), &format!("{name}|{plabel}")));
            }
        }
    }
    let path = out_dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(BENCH_HEADER)?;
    for row in &rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

/// One normalized objective curve.
#[derive(Debug, Clone)]
pub struct Curve {
    pub label: String,
    /// `(x, (F - F_min) / (F_0 - F_min))`, starting at the initial point.
    pub points: Vec<(f64, f64)>,
}

/// Normalizes every report against the smallest terminating objective.
pub fn normalized_curves(reports: &[(String, RunReport)], axis: PlotAxis) -> anyhow::Result<Vec<Curve>> {
    if reports.is_empty() {
        return Err(bregman_dc::Error::EmptyInput.into());
    }
    let f_min = reports.iter().map(|(_, r)| r.obj).fold(f64::INFINITY, f64::min);
    Ok(reports
        .iter()
        .map(|(label, r)| {
            let scale = r.initial_obj - f_min;
            let norm = |f: f64| if scale > 0.0 { (f - f_min) / scale } else { 0.0 };
            let mut points = vec![(0.0, norm(r.initial_obj))];
            for t in &r.trajectory {
                let x = match axis {
                    PlotAxis::Time => t.elapsed,
                    PlotAxis::Iter => (t.k + 1) as f64,
                };
                points.push((x, norm(t.objective)));
            }
            Curve {
                label: label.clone(),
                points,
            }
        })
        .collect())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static SVG with a log-scale y axis over `[10^lo, 1]`.
pub fn render_svg(curves: &[Curve], axis: PlotAxis) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const L: f64 = 70.0;
    const R: f64 = 180.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let positive_min = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .filter(|v| *v > 0.0)
        .fold(1.0f64, f64::min);
    let lo = positive_min.max(1e-16).log10().floor().min(-1.0);
    let hi = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(1.0f64, f64::max)
        .log10()
        .ceil();
    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let px = |x: f64| L + (W - L - R) * x / x_max;
    let py = |v: f64| {
        let lv = if v > 0.0 { v.log10().max(lo) } else { lo };
        T + (H - T - B) * (hi - lv) / (hi - lo)
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (L, W - R, T, H - B);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    let mut e = hi as i32;
    while e as f64 >= lo {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
        e -= if hi - lo > 8.0 { 2 } else { 1 };
    }
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            px(xv),
            y1 + 16.0,
            if axis == PlotAxis::Time { format!("{xv:.2}") } else { format!("{xv:.0}") }
        );
    }
    let xlabel = match axis {
        PlotAxis::Time => "time (s)",
        PlotAxis::Iter => "iteration",
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">normalized objective</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, v)| format!("{:.2},{:.2}", px(x), py(v))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = T + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 36.0,
            ly + 4.0,
            xml_escape(&c.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the SVG and the normalized CSV; returns both paths.
pub fn cmd_plot(args: &PlotArgs) -> anyhow::Result<(PathBuf, PathBuf)> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
            RunReport::load(p).map(|r| (format!("{} ({stem})", r.method), r))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let curves = normalized_curves(&reports, args.x_axis)?;
    let svg_path = output_path(&args.out);
    let csv_path = output_path(&args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv")));
    if let Some(dir) = svg_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&svg_path, render_svg(&curves, args.x_axis))?;
    write_curves_csv(&csv_path, &curves, args.x_axis)?;
    Ok((svg_path, csv_path))
}

fn write_curves_csv(path: &Path, curves: &[Curve], axis: PlotAxis) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| anyhow!("writing {}: {e}", path.display()))?;
    let xname = match axis {
        PlotAxis::Time => "time",
        PlotAxis::Iter => "iter",
    };
    w.write_record(["series", "point", xname, "normalized"])?;
    for c in curves {
        for (i, (x, v)) in c.points.iter().enumerate() {
            w.write_record([c.label.clone(), i.to_string(), format!("{x:e}"), format!("{v:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
