use std::path::{Path, PathBuf};

use quasinls::divisors::{ParamPoint, ProblemData};
use quasinls::newton::NewtonConfig;
use quasinls::sweep::{Ranges, Sampling, ScanConfig, COORD_NAMES};
use quasinls::verify::VerifyConfig;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub p: u32,
    pub delta: f64,
    pub a1: f64,
    pub a2: f64,
    pub h1: [i32; 2],
    pub h2: [i32; 2],
}

impl Problem {
    pub fn data(&self) -> ProblemData {
        ProblemData {
            h1: self.h1,
            h2: self.h2,
            a: [self.a1, self.a2],
            delta: self.delta,
            p: self.p,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub lambda: [f64; 2],
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub samples: usize,
    pub sampling: Sampling,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            samples: 1000,
            sampling: Sampling::Halton,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: Option<PathBuf>,
    /// Also write gnuplot data files.
    pub gnuplot: bool,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: None, gnuplot: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heatmap {
    /// Two of `lambda1`, `lambda2`, `m`, `M`.
    pub axes: [String; 2],
    pub ranges: [[f64; 2]; 2],
    pub resolution: [usize; 2],
}

impl Heatmap {
    pub fn axis_indices(&self) -> Result<[usize; 2], String> {
        let find = |a: &str| {
            COORD_NAMES
                .iter()
                .position(|n| *n == a)
                .ok_or_else(|| format!("unknown heatmap axis {a:?}; expected one of {COORD_NAMES:?}"))
        };
        Ok([find(&self.axes[0])?, find(&self.axes[1])?])
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: Problem,
    pub parameters: Option<Parameters>,
    #[serde(default)]
    pub ranges: Ranges,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub solver: NewtonConfig,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub verify: VerifyConfig,
    pub heatmap: Option<Heatmap>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn validate(&self) -> Result<(), String> {
        self.problem.data().validate().map_err(|e| e.to_string())?;
        if let Some(p) = &self.parameters {
            ParamPoint::new(p.lambda, p.m, p.big_m, self.problem.data()).map_err(|e| e.to_string())?;
        }
        self.solver.validate().map_err(|e| e.to_string())?;
        self.ranges.validate().map_err(|e| e.to_string())?;
        if self.scan.samples == 0 {
            return Err("scan.samples must be at least 1".into());
        }
        if let Some(h) = &self.heatmap {
            let ax = h.axis_indices()?;
            if ax[0] == ax[1] {
                return Err("heatmap axes must differ".into());
            }
            if h.resolution.iter().any(|r| *r < 2) {
                return Err("heatmap resolution must be at least 2 per axis".into());
            }
        }
        let g = &self.verify.grid;
        if g.nt == 0 || g.nx == 0 {
            return Err("verify.grid needs at least one point per axis".into());
        }
        Ok(())
    }

    pub fn point(&self) -> Result<ParamPoint, String> {
        let p = self
            .parameters
            .ok_or("the [parameters] section (lambda, m, M) is required")?;
        ParamPoint::new(p.lambda, p.m, p.big_m, self.problem.data()).map_err(|e| e.to_string())
    }

    pub fn scan_config(&self, seed: u64) -> ScanConfig {
        ScanConfig {
            samples: self.scan.samples,
            seed,
            sampling: self.scan.sampling,
            ranges: self.ranges,
            newton: self.solver,
        }
    }
}
