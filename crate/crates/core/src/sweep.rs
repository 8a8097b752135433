//! Exploration of the `(λ1, λ2, m, M)` parameter space: per-sample stage
//! verdicts, surviving fractions and slice heatmaps.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divisors::{ExcisionReason, ParamError, ParamPoint, ProblemData};
use crate::exec::Execution;
use crate::newton::{NewtonConfig, NewtonDriver, NewtonError, StopReason};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("at least one sample is required")]
    NoSamples,
    #[error("range for {name} must satisfy 0 < lo <= hi < 2π, got [{lo}, {hi}]")]
    Range { name: &'static str, lo: f64, hi: f64 },
    #[error("heatmap resolution must be at least 2 per axis")]
    Resolution,
    #[error("heatmap axes must be two distinct coordinates in 0..4")]
    Axes,
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Newton(#[from] NewtonError),
}

pub const COORD_NAMES: [&str; 4] = ["lambda1", "lambda2", "m", "M"];

/// Closed intervals for `(λ1, λ2, m, M)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ranges {
    pub lambda1: [f64; 2],
    pub lambda2: [f64; 2],
    pub m: [f64; 2],
    #[serde(rename = "M")]
    pub big_m: [f64; 2],
}

impl Default for Ranges {
    fn default() -> Self {
        let r = [0.1, TAU - 0.1];
        Ranges {
            lambda1: r,
            lambda2: r,
            m: r,
            big_m: r,
        }
    }
}

impl Ranges {
    pub fn as_array(&self) -> [[f64; 2]; 4] {
        [self.lambda1, self.lambda2, self.m, self.big_m]
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        for (name, [lo, hi]) in COORD_NAMES.into_iter().zip(self.as_array()) {
            if !(lo > 0.0 && lo <= hi && hi < TAU) {
                return Err(SweepError::Range { name, lo, hi });
            }
        }
        Ok(())
    }

    /// Map a point of the unit cube into the box.
    pub fn place(&self, u: [f64; 4]) -> [f64; 4] {
        let r = self.as_array();
        std::array::from_fn(|i| r[i][0] + (r[i][1] - r[i][0]) * u[i])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Halton sequence in bases 2, 3, 5, 7 with a seeded random shift.
    #[default]
    Halton,
    Random,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `n` points of the unit 4-cube.
pub fn unit_samples(n: usize, seed: u64, sampling: Sampling) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sampling {
        Sampling::Halton => {
            let shift: [f64; 4] = std::array::from_fn(|_| rng.gen::<f64>());
            let bases = [2, 3, 5, 7];
            (1..=n as u64)
                .map(|i| std::array::from_fn(|d| (radical_inverse(i, bases[d]) + shift[d]).fract()))
                .collect()
        }
        Sampling::Random => (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect(),
    }
}

/// Final classification of one parameter point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Good,
    Excised { stage: u32, reason: ExcisionReason },
    SolverFailure { stage: u32 },
    /// Survived every gate without reaching the residual target.
    MaxStage,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Good => "good",
            Verdict::Excised { reason, .. } => reason.label(),
            Verdict::SolverFailure { .. } => "solver_failure",
            Verdict::MaxStage => "max_stage",
        }
    }

    /// Integer code for heatmaps: 0 good, 1..=6 excision reasons in
    /// [`ExcisionReason::ALL`] order, 7 solver failure, 8 max stage.
    pub fn code(&self) -> u8 {
        match self {
            Verdict::Good => 0,
            Verdict::Excised { reason, .. } => {
                1 + ExcisionReason::ALL.iter().position(|r| r == reason).expect("listed") as u8
            }
            Verdict::SolverFailure { .. } => 7,
            Verdict::MaxStage => 8,
        }
    }

    pub fn failed_stage(&self) -> Option<u32> {
        match self {
            Verdict::Excised { stage, .. } | Verdict::SolverFailure { stage } => Some(*stage),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub coords: [f64; 4],
    pub verdict: Verdict,
    /// Highest stage the point survived.
    pub stages_passed: u32,
    pub final_residual: f64,
}

/// Judge one point through every stage up to `cfg.max_stage`.
pub fn classify(pt: ParamPoint, cfg: &NewtonConfig) -> Result<(Verdict, u32, f64), NewtonError> {
    let (_, trace, _) = NewtonDriver::new(*cfg, pt)?.gate_after_convergence(true).finish();
    let passed = trace.stages.last().map_or(0, |s| s.stage);
    let residual = trace.final_residual();
    let verdict = match trace.stop.expect("finished run has a stop reason") {
        StopReason::Converged => Verdict::Good,
        StopReason::MaxStage => Verdict::MaxStage,
        StopReason::Excised { stage, reason, .. } => Verdict::Excised { stage, reason },
        StopReason::SolverFailure { stage, .. } => Verdict::SolverFailure { stage },
    };
    Ok((verdict, passed, residual))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: u32,
    pub entered: usize,
    pub survived: usize,
    pub lost: BTreeMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub log10_mean: f64,
}

impl ResidualStats {
    fn from_values(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let log10_mean = v.iter().map(|x| x.max(f64::MIN_POSITIVE).log10()).sum::<f64>() / n as f64;
        Some(ResidualStats {
            count: n,
            min: v[0],
            median,
            max: v[n - 1],
            log10_mean,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub samples: usize,
    pub seed: u64,
    pub sampling: Sampling,
    pub ranges: Ranges,
    pub newton: NewtonConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub samples: usize,
    pub seed: u64,
    pub sampling: Sampling,
    pub delta: f64,
    pub p: u32,
    pub max_stage: u32,
    /// Final verdict counts; they sum to `samples`.
    pub verdicts: BTreeMap<String, usize>,
    pub stages: Vec<StageCount>,
    /// Points surviving stage `r`, `r = 0..=max_stage`.
    pub surviving: Vec<usize>,
    pub good_fraction: f64,
    pub residuals: Option<ResidualStats>,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

/// Classify `cfg.samples` points drawn from `cfg.ranges`.
pub fn scan(data: ProblemData, cfg: &ScanConfig, exec: Execution) -> Result<ScanReport, SweepError> {
    if cfg.samples == 0 {
        return Err(SweepError::NoSamples);
    }
    cfg.ranges.validate()?;
    data.validate()?;
    cfg.newton.validate()?;
    let coords: Vec<[f64; 4]> = unit_samples(cfg.samples, cfg.seed, cfg.sampling)
        .into_iter()
        .map(|u| cfg.ranges.place(u))
        .collect();
    let out = exec.map(&coords, |c| {
        let pt = ParamPoint::new([c[0], c[1]], c[2], c[3], data)?;
        Ok::<_, SweepError>(classify(pt, &cfg.newton)?)
    });
    let mut records = Vec::with_capacity(coords.len());
    for (index, (c, r)) in coords.iter().zip(out).enumerate() {
        let (verdict, stages_passed, final_residual) = r?;
        records.push(SampleRecord {
            index,
            coords: *c,
            verdict,
            stages_passed,
            final_residual,
        });
    }
    Ok(summarize(data, cfg, records))
}

fn summarize(data: ProblemData, cfg: &ScanConfig, records: Vec<SampleRecord>) -> ScanReport {
    let max_stage = cfg.newton.max_stage;
    let mut verdicts = BTreeMap::new();
    for r in &records {
        *verdicts.entry(r.verdict.label().to_string()).or_insert(0) += 1;
    }
    let surviving: Vec<usize> = (0..=max_stage)
        .map(|s| records.iter().filter(|r| r.stages_passed >= s).count())
        .collect();
    let stages = (1..=max_stage)
        .map(|s| {
            let mut lost = BTreeMap::new();
            for r in records.iter().filter(|r| r.verdict.failed_stage() == Some(s)) {
                *lost.entry(r.verdict.label().to_string()).or_insert(0) += 1;
            }
            StageCount {
                stage: s,
                entered: surviving[s as usize - 1],
                survived: surviving[s as usize],
                lost,
            }
        })
        .collect();
    let good: Vec<f64> = records
        .iter()
        .filter(|r| r.verdict == Verdict::Good)
        .map(|r| r.final_residual)
        .collect();
    ScanReport {
        samples: records.len(),
        seed: cfg.seed,
        sampling: cfg.sampling,
        delta: data.delta,
        p: data.p,
        max_stage,
        verdicts,
        stages,
        surviving,
        good_fraction: good.len() as f64 / records.len() as f64,
        residuals: ResidualStats::from_values(good),
        records,
    }
}

impl ScanReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Per-sample CSV preceded by a `# seed=` comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "index",
            "lambda1",
            "lambda2",
            "m",
            "M",
            "verdict",
            "failed_stage",
            "stages_passed",
            "final_residual",
        ])?;
        for r in &self.records {
            c.write_record([
                r.index.to_string(),
                format!("{:.17e}", r.coords[0]),
                format!("{:.17e}", r.coords[1]),
                format!("{:.17e}", r.coords[2]),
                format!("{:.17e}", r.coords[3]),
                r.verdict.label().to_string(),
                r.verdict.failed_stage().map_or(String::new(), |s| s.to_string()),
                r.stages_passed.to_string(),
                format!("{:e}", r.final_residual),
            ])?;
        }
        c.flush()
    }
}

/// Verdict codes on a 2-D slice; the other two coordinates come from `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub axes: [usize; 2],
    pub ranges: [[f64; 2]; 2],
    pub resolution: [usize; 2],
    pub base: [f64; 4],
    /// `codes[iy][ix]`.
    pub codes: Vec<Vec<u8>>,
}

impl Heatmap {
    /// Coordinates of cell `(ix, iy)`.
    pub fn cell(&self, ix: usize, iy: usize) -> [f64; 4] {
        let at = |a: usize, i: usize| {
            let [lo, hi] = self.ranges[a];
            lo + (hi - lo) * i as f64 / (self.resolution[a] - 1) as f64
        };
        let mut c = self.base;
        c[self.axes[0]] = at(0, ix);
        c[self.axes[1]] = at(1, iy);
        c
    }

    /// Gnuplot `matrix` layout with one header comment line.
    pub fn write_gnuplot<W: Write>(&self, mut w: W, seed: Option<u64>) -> io::Result<()> {
        let seed = seed.map_or("none".to_string(), |s| s.to_string());
        writeln!(
            w,
            "# seed={seed} rows={} ({} in [{}, {}]) cols={} ({} in [{}, {}]) codes: 0 good, 1-6 excision, 7 solver, 8 max_stage",
            self.resolution[1],
            COORD_NAMES[self.axes[1]],
            self.ranges[1][0],
            self.ranges[1][1],
            self.resolution[0],
            COORD_NAMES[self.axes[0]],
            self.ranges[0][0],
            self.ranges[0][1],
        )?;
        for row in &self.codes {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn slice_heatmap(
    base: &ParamPoint,
    axes: [usize; 2],
    ranges: [[f64; 2]; 2],
    resolution: [usize; 2],
    cfg: &NewtonConfig,
    exec: Execution,
) -> Result<Heatmap, SweepError> {
    if resolution[0] < 2 || resolution[1] < 2 {
        return Err(SweepError::Resolution);
    }
    if axes[0] == axes[1] || axes[0] > 3 || axes[1] > 3 {
        return Err(SweepError::Axes);
    }
    for (a, [lo, hi]) in axes.iter().zip(ranges) {
        if !(lo > 0.0 && lo <= hi && hi < TAU) {
            return Err(SweepError::Range {
                name: COORD_NAMES[*a],
                lo,
                hi,
            });
        }
    }
    cfg.validate()?;
    let mut map = Heatmap {
        axes,
        ranges,
        resolution,
        base: base.coords(),
        codes: Vec::new(),
    };
    let cells: Vec<(usize, usize)> = (0..resolution[1])
        .flat_map(|iy| (0..resolution[0]).map(move |ix| (ix, iy)))
        .collect();
    let codes = exec.map(&cells, |&(ix, iy)| {
        let pt = base.with_coords(map.cell(ix, iy));
        classify(pt, cfg).map(|v| v.0.code())
    });
    let codes = codes.into_iter().collect::<Result<Vec<u8>, _>>()?;
    map.codes = codes.chunks(resolution[0]).map(|c| c.to_vec()).collect();
    Ok(map)
}

/// Largest `ε` in `eps` (tried in decreasing order) such that every
/// `±ε` offset along each coordinate is still good. `None` if the point
/// itself is not good or no offset survives.
pub fn stability_radius(pt: &ParamPoint, eps: &[f64], cfg: &NewtonConfig) -> Result<Option<f64>, SweepError> {
    if classify(*pt, cfg)?.0 != Verdict::Good {
        return Ok(None);
    }
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    'outer: for e in eps {
        for i in 0..4 {
            for s in [-1.0, 1.0] {
                let mut c = pt.coords();
                c[i] += s * e;
                if !(c[i] > 0.0 && c[i] < TAU) || classify(pt.with_coords(c), cfg)?.0 != Verdict::Good {
                    continue 'outer;
                }
            }
        }
        return Ok(Some(e));
    }
    Ok(None)
}
