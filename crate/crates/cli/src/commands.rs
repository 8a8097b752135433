use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use quasinls::divisors::{enumerate_zero_divisors_with, ProblemData};
use quasinls::lattice::Sector;
use quasinls::newton::{NewtonDriver, NewtonTrace, StopReason};
use quasinls::sweep::{self, ScanReport};
use quasinls::verify::{field_samples, theorem_report, write_gnuplot, SolutionPackage, TheoremReport, TraceSummary};
use quasinls::Execution;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::OutDir;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_EXCISED: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 5;

pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub seed: u64,
    pub trace: NewtonTrace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub seed: u64,
    pub report: TheoremReport,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

fn load(g: &Globals) -> Result<RunConfig, String> {
    let path = g.config.as_ref().ok_or("--config is required")?;
    RunConfig::load(path)
}

fn out_dir(g: &Globals, cfg: Option<&RunConfig>) -> OutDir {
    let dir = g
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    OutDir(dir)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn solve(g: &Globals) -> u8 {
    let cfg = match load(g) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match run_solve(g, &cfg) {
        Ok(code) => code,
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn run_solve(g: &Globals, cfg: &RunConfig) -> Result<u8, String> {
    let pt = cfg.point()?;
    let seed = g.seed.unwrap_or(cfg.seed);
    let out = out_dir(g, Some(cfg));
    let driver = NewtonDriver::new(cfg.solver, pt).map_err(|e| e.to_string())?;
    let (state, trace, pt) = driver.finish();

    out.write("trace.json", &json(&TraceFile { seed, trace: trace.clone() }))?;
    out.write("trace.csv", format!("# seed={seed}\n{}", trace.to_csv()).as_bytes())?;
    for s in &trace.stages {
        println!(
            "stage {}: residual {:.3e}, correction {:.3e}, support radius {}",
            s.stage, s.residual, s.correction, s.support_radius
        );
    }
    for f in &trace.flags {
        eprintln!("warning: {f}");
    }
    match trace.stop.clone().expect("finished run") {
        StopReason::Excised { stage, reason, detail } => {
            eprintln!("excised at stage {stage}: {reason} ({detail})");
            return Ok(EXIT_EXCISED);
        }
        StopReason::SolverFailure { stage, message } => {
            eprintln!("no convergence at stage {stage}: {message}");
            return Ok(EXIT_NO_CONVERGENCE);
        }
        StopReason::Converged | StopReason::MaxStage => {}
    }
    let mut sol = SolutionPackage::new(state, pt, TraceSummary::from_trace(&trace));
    sol.seed = Some(seed);
    out.write("solution.json", sol.to_json().as_bytes())?;
    let report = theorem_report(&sol, &cfg.verify, Execution::Parallel);
    out.write("report.json", &json(&ReportFile { seed, report: report.clone() }))?;
    if cfg.output.gnuplot {
        let rows = field_samples(&sol, &cfg.verify.grid.points(), Execution::Parallel);
        let mut buf = Vec::new();
        write_gnuplot(&mut buf, Some(seed), &rows).map_err(|e| e.to_string())?;
        out.write("field.dat", &buf)?;
    }
    println!(
        "omega = ({:.15}, {:.15}); pde residual {:.3e}; report {}",
        sol.pt.omega[0],
        sol.pt.omega[1],
        report.pde_residual,
        if report.passed { "pass" } else { "fail" }
    );
    if trace.converged() {
        println!("converged; artifacts in {}", out.0.display());
        Ok(EXIT_OK)
    } else {
        eprintln!("residual target not reached after {} stages", trace.stages.len() - 1);
        Ok(EXIT_NO_CONVERGENCE)
    }
}

pub fn scan(g: &Globals, samples: Option<usize>) -> u8 {
    let cfg = match load(g) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match run_scan(g, &cfg, samples) {
        Ok(code) => code,
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn run_scan(g: &Globals, cfg: &RunConfig, samples: Option<usize>) -> Result<u8, String> {
    let seed = g.seed.unwrap_or(cfg.seed);
    let out = out_dir(g, Some(cfg));
    let mut sc = cfg.scan_config(seed);
    if let Some(n) = samples {
        sc.samples = n;
    }
    let rep = sweep::scan(cfg.problem.data(), &sc, Execution::Parallel).map_err(|e| e.to_string())?;
    out.write("scan.json", &json(&rep))?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).map_err(|e| e.to_string())?;
    out.write("scan.csv", &csv)?;
    if let Some(h) = &cfg.heatmap {
        let base = cfg.point()?;
        let map = sweep::slice_heatmap(
            &base,
            h.axis_indices()?,
            h.ranges,
            h.resolution,
            &cfg.solver,
            Execution::Parallel,
        )
        .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        map.write_gnuplot(&mut buf, Some(seed)).map_err(|e| e.to_string())?;
        out.write("heatmap.dat", &buf)?;
    }
    println!("samples {}; good fraction {:.4}", rep.samples, rep.good_fraction);
    println!("surviving per stage: {:?}", rep.surviving);
    for (k, v) in &rep.verdicts {
        println!("  {k}: {v}");
    }
    Ok(EXIT_OK)
}

pub fn verify(g: &Globals, path: &Path, grid: Option<usize>, t_max: Option<f64>, x_max: Option<f64>) -> u8 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
    };
    let sol = match SolutionPackage::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
    };
    let cfg = match &g.config {
        Some(_) => match load(g) {
            Ok(c) => Some(c),
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => None,
    };
    let mut vc = cfg.as_ref().map(|c| c.verify).unwrap_or_default();
    if let Some(n) = grid {
        if n == 0 {
            return fail(EXIT_CONFIG, "--grid must be positive");
        }
        vc.grid.nt = n;
        vc.grid.nx = n;
    }
    if let Some(t) = t_max {
        vc.grid.t[1] = t;
    }
    if let Some(x) = x_max {
        vc.grid.x[1] = x;
    }
    let report = theorem_report(&sol, &vc, Execution::Parallel);
    let seed = g.seed.or(sol.seed).unwrap_or(0);
    let body = json(&ReportFile { seed, report: report.clone() });
    if g.out.is_some() || cfg.as_ref().is_some_and(|c| c.output.dir.is_some()) {
        if let Err(e) = out_dir(g, cfg.as_ref()).write("verify.json", &body) {
            return fail(EXIT_CONFIG, e);
        }
    }
    print!("{}", String::from_utf8_lossy(&body));
    if report.passed {
        println!("verify: pass");
        EXIT_OK
    } else {
        println!("verify: fail");
        EXIT_CHECK_FAILED
    }
}

pub fn divisors(g: &Globals, h1: [i32; 2], h2: [i32; 2], radius: i32) -> u8 {
    if h1 == [0, 0] || h2 == [0, 0] {
        return fail(EXIT_CONFIG, "modes must be nonzero");
    }
    if radius < 0 {
        return fail(EXIT_CONFIG, "--box must be nonnegative");
    }
    let seed = g.seed.unwrap_or(0);
    let parallel = h1[0] as i64 * h2[1] as i64 - h1[1] as i64 * h2[0] as i64 == 0;
    let data = ProblemData {
        h1,
        h2,
        a: [1.0, 1.0],
        delta: 0.0,
        p: 1,
    };
    let seeds = data.resonant_sites();
    let zeros = enumerate_zero_divisors_with(h1, h2, radius, Execution::Parallel);
    let mut text = format!(
        "# seed={seed} h1={},{} h2={},{} box={radius} columns: sector n1 n2 j1 j2 kind\n",
        h1[0], h1[1], h2[0], h2[1]
    );
    let mut extra = 0;
    for (s, k) in &zeros {
        let kind = if seeds.contains(&(*s, *k)) { "seed" } else { "extra" };
        if kind == "extra" {
            extra += 1;
        }
        let sign = if *s == Sector::Plus { "+" } else { "-" };
        let _ = writeln!(text, "{sign} {} {} {} {} {kind}", k.n1, k.n2, k.j1, k.j2);
    }
    if parallel {
        eprintln!(
            "warning: h1 and h2 are parallel, outside the non-parallel hypothesis; {extra} extra zero divisor(s) in the box"
        );
    }
    print!("{text}");
    if let Some(dir) = &g.out {
        if let Err(e) = OutDir(dir.clone()).write("divisors.txt", text.as_bytes()) {
            return fail(EXIT_CONFIG, e);
        }
    }
    EXIT_OK
}

fn count_csv_rows(text: &str) -> Result<usize, String> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut n = 0;
    for rec in r.records() {
        rec.map_err(|e| e.to_string())?;
        n += 1;
    }
    Ok(n)
}

fn count_data_lines(text: &str) -> Result<usize, String> {
    let mut n = 0;
    for line in text.lines() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        for tok in l.split_whitespace() {
            tok.parse::<f64>().map_err(|e| format!("{tok:?}: {e}"))?;
        }
        n += 1;
    }
    Ok(n)
}

pub fn report(g: &Globals, dir: Option<PathBuf>) -> u8 {
    let Some(dir) = dir.or_else(|| g.out.clone()) else {
        return fail(EXIT_CONFIG, "give a directory or --out");
    };
    match summarize(&dir) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn summarize(dir: &Path) -> Result<String, String> {
    let read = |name: &str| -> Option<Result<String, String>> {
        let p = dir.join(name);
        p.exists()
            .then(|| fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display())))
    };
    let ctx = |name: &str, e: String| format!("{}: {e}", dir.join(name).display());
    let mut out = String::new();
    let mut found = 0;

    let mut stages = None;
    if let Some(t) = read("trace.json") {
        let f: TraceFile = serde_json::from_str(&t?).map_err(|e| ctx("trace.json", e.to_string()))?;
        found += 1;
        stages = Some(f.trace.stages.len());
        let _ = writeln!(out, "trace (seed {}): {} stage record(s), stop {:?}", f.seed, f.trace.stages.len(), f.trace.stop);
        for s in &f.trace.stages {
            let _ = writeln!(
                out,
                "  r={} N={} residual={:.3e} correction={:.3e} support={}",
                s.stage, s.box_radius, s.residual, s.correction, s.support_radius
            );
        }
    }
    if let Some(t) = read("trace.csv") {
        let n = count_csv_rows(&t?).map_err(|e| ctx("trace.csv", e))?;
        found += 1;
        if stages.is_some_and(|s| s != n) {
            return Err(ctx("trace.csv", format!("{n} rows but trace.json has {} stages", stages.unwrap())));
        }
        let _ = writeln!(out, "trace.csv: {n} row(s)");
    }
    if let Some(t) = read("solution.json") {
        let s = SolutionPackage::from_json(&t?).map_err(|e| ctx("solution.json", e.to_string()))?;
        found += 1;
        let _ = writeln!(
            out,
            "solution: {} coefficient(s), support radius {}, omega = ({}, {}), converged {}",
            s.state.plus.len(),
            s.state.support_radius(),
            s.pt.omega[0],
            s.pt.omega[1],
            s.trace.converged
        );
    }
    for name in ["report.json", "verify.json"] {
        if let Some(t) = read(name) {
            let f: ReportFile = serde_json::from_str(&t?).map_err(|e| ctx(name, e.to_string()))?;
            found += 1;
            let _ = writeln!(
                out,
                "{name}: {} (pde residual {:.3e}, closeness {:.3e})",
                if f.report.passed { "pass" } else { "fail" },
                f.report.pde_residual,
                f.report.closeness.physical
            );
        }
    }
    let mut samples = None;
    if let Some(t) = read("scan.json") {
        let r: ScanReport = serde_json::from_str(&t?).map_err(|e| ctx("scan.json", e.to_string()))?;
        found += 1;
        samples = Some(r.samples);
        let _ = writeln!(
            out,
            "scan (seed {}): {} samples, good fraction {:.4}, surviving {:?}",
            r.seed, r.samples, r.good_fraction, r.surviving
        );
    }
    if let Some(t) = read("scan.csv") {
        let n = count_csv_rows(&t?).map_err(|e| ctx("scan.csv", e))?;
        found += 1;
        if samples.is_some_and(|s| s != n) {
            return Err(ctx("scan.csv", format!("{n} rows but scan.json has {} samples", samples.unwrap())));
        }
        let _ = writeln!(out, "scan.csv: {n} row(s)");
    }
    for name in ["field.dat", "heatmap.dat"] {
        if let Some(t) = read(name) {
            let n = count_data_lines(&t?).map_err(|e| ctx(name, e))?;
            found += 1;
            let _ = writeln!(out, "{name}: {n} data line(s)");
        }
    }
    if let Some(t) = read("divisors.txt") {
        let t = t?;
        found += 1;
        let n = t.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count();
        let _ = writeln!(out, "divisors.txt: {n} site(s)");
    }
    if found == 0 {
        return Err(format!("{}: no artifacts found", dir.display()));
    }
    Ok(out)
}
