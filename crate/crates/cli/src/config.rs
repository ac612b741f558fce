//! Experiment configuration: built-in profiles overridden by a flat
//! `key = value` file.
//!
//! Keys (lists are comma separated):
//!
//! | key | meaning |
//! |---|---|
//! | `experiment` | `grid-posterior`, `strength-sweep` or `crf` |
//! | `rows`, `cols` | grid shape |
//! | `models` | parameter draws per grid experiment |
//! | `param_variance` | variance of the spin parameters in the grid experiment |
//! | `n_list` | data sizes of the grid experiment |
//! | `sweep_d`, `sweep_epsilon` | interval law of the strength sweep |
//! | `sweep_bias` | spin bias of every node in the strength sweep |
//! | `sweep_n` | data size of the strength sweep |
//! | `set_size`, `set_count` | sample sets per cell |
//! | `methods` | subset of `bl-mp, bl-bp, lv-cd, mc-bp` |
//! | `ground_truth` | `hmc-exact` (MRF) or `mh-exact` |
//! | `prior_variance` | isotropic prior variance |
//! | `seed` | master seed |
//! | `out` | output directory |
//! | `gt_chains` | restarts of every MCMC method |
//! | `mpsrf_threshold`, `mpsrf_extensions` | convergence gate |
//! | `hmc_step`, `hmc_leapfrog` | ground-truth HMC |
//! | `sampler_iterations` | stored states per chain of the baseline samplers |
//! | `mh_scale` | MH proposal scale relative to `2.38/√F` |
//! | `lv_step` | Langevin step relative to the smallest posterior standard deviation |
//! | `cd_sweeps` | Gibbs sweeps per contrastive divergence gradient |
//! | `bp_max_iters`, `bp_damping`, `bp_tol` | loopy BP |
//! | `crf_width` | features per line `A` |
//! | `crf_corpus` | sequence file; a synthetic corpus is generated when unset |
//! | `crf_n_list` | training subset sizes |
//! | `crf_sequences`, `crf_test`, `crf_length`, `crf_density`, `crf_weight_sd` | synthetic corpus |
//! | `crf_vote_samples` | posterior samples used by the vote and super-graph predictors |
//! | `crf_folds` | cross-validation folds on an ingested corpus |
//! | `max_length` | lines kept per sequence |

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::io::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentKind {
    GridPosterior,
    StrengthSweep,
    Crf,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GridPosterior => "grid-posterior",
            ExperimentKind::StrengthSweep => "strength-sweep",
            ExperimentKind::Crf => "crf",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grid-posterior" => Ok(ExperimentKind::GridPosterior),
            "strength-sweep" => Ok(ExperimentKind::StrengthSweep),
            "crf" => Ok(ExperimentKind::Crf),
            other => Err(format!("unknown experiment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    BlMp,
    BlBp,
    LvCd,
    McBp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::BlMp, Method::BlBp, Method::LvCd, Method::McBp];

    pub fn name(self) -> &'static str {
        match self {
            Method::BlMp => "bl-mp",
            Method::BlBp => "bl-bp",
            Method::LvCd => "lv-cd",
            Method::McBp => "mc-bp",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    HmcExact,
    MhExact,
}

impl FromStr for GroundTruth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hmc-exact" => Ok(GroundTruth::HmcExact),
            "mh-exact" => Ok(GroundTruth::MhExact),
            other => Err(format!("unknown ground truth `{other}`")),
        }
    }
}

impl GroundTruth {
    pub fn name(self) -> &'static str {
        match self {
            GroundTruth::HmcExact => "hmc-exact",
            GroundTruth::MhExact => "mh-exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Smoke,
    Paper,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smoke" => Ok(Profile::Smoke),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub rows: usize,
    pub cols: usize,
    pub models: usize,
    pub param_variance: f64,
    pub n_list: Vec<usize>,
    pub sweep_d: Vec<f64>,
    pub sweep_epsilon: f64,
    pub sweep_bias: f64,
    pub sweep_n: usize,
    pub set_size: usize,
    pub set_count: usize,
    pub methods: Vec<Method>,
    pub ground_truth: GroundTruth,
    pub prior_variance: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub gt_chains: usize,
    pub mpsrf_threshold: f64,
    pub mpsrf_extensions: usize,
    pub hmc_step: f64,
    pub hmc_leapfrog: usize,
    pub sampler_iterations: usize,
    pub mh_scale: f64,
    pub lv_step: f64,
    pub cd_sweeps: usize,
    pub bp_max_iters: usize,
    pub bp_damping: f64,
    pub bp_tol: f64,
    pub crf_width: usize,
    pub crf_corpus: Option<PathBuf>,
    pub crf_n_list: Vec<usize>,
    pub crf_sequences: usize,
    pub crf_test: usize,
    pub crf_length: usize,
    pub crf_density: f64,
    pub crf_weight_sd: f64,
    pub crf_vote_samples: usize,
    pub crf_folds: usize,
    pub max_length: usize,
}

impl ExperimentConfig {
    /// Small sizes that finish in seconds.
    pub fn smoke(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            rows: 3,
            cols: 3,
            models: 1,
            param_variance: 0.25,
            n_list: vec![50, 500],
            sweep_d: vec![0.025, 0.125, 0.25, 0.375, 0.5],
            sweep_epsilon: 0.025,
            sweep_bias: 0.0,
            sweep_n: 500,
            set_size: 500,
            set_count: 2,
            methods: match kind {
                ExperimentKind::Crf => vec![Method::BlMp, Method::LvCd],
                _ => Method::ALL.to_vec(),
            },
            ground_truth: match kind {
                ExperimentKind::Crf => GroundTruth::MhExact,
                _ => GroundTruth::HmcExact,
            },
            prior_variance: 1.0,
            seed: 1,
            out: PathBuf::from("results"),
            gt_chains: 5,
            mpsrf_threshold: 1.1,
            mpsrf_extensions: 2,
            hmc_step: 0.5,
            hmc_leapfrog: 8,
            sampler_iterations: 2000,
            mh_scale: 1.0,
            lv_step: 0.3,
            cd_sweeps: 1,
            bp_max_iters: 2000,
            bp_damping: 0.5,
            bp_tol: 1e-10,
            crf_width: 4,
            crf_corpus: None,
            crf_n_list: vec![8, 16],
            crf_sequences: 16,
            crf_test: 16,
            crf_length: 20,
            crf_density: 0.3,
            crf_weight_sd: 1.0,
            crf_vote_samples: 5,
            crf_folds: 4,
            max_length: crate::io::default_max_length(),
        }
    }

    /// The published protocol sizes.
    pub fn paper(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            rows: 5,
            cols: 5,
            models: 5,
            n_list: vec![10, 50, 100, 500, 1000, 5000],
            set_size: 10_000,
            set_count: 10,
            sampler_iterations: 50_000,
            crf_width: 24,
            crf_n_list: vec![10, 20, 30, 40, 48],
            crf_sequences: 48,
            crf_test: 48,
            crf_length: 100,
            crf_vote_samples: 10,
            ..Self::smoke(kind)
        }
    }

    pub fn for_profile(kind: ExperimentKind, profile: Profile) -> Self {
        match profile {
            Profile::Smoke => Self::smoke(kind),
            Profile::Paper => Self::paper(kind),
        }
    }

    /// Applies `key = value` overrides from `text`.
    pub fn apply(&mut self, text: &str) -> Result<(), FormatError> {
        let mut seen = BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| FormatError::Line {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(FormatError::Line {
                    line,
                    message: format!("repeated key `{key}`"),
                });
            }
            self.set(key, value)
                .map_err(|message| FormatError::Line { line, message })?;
        }
        Ok(())
    }

    pub fn load(path: &Path, kind: ExperimentKind, profile: Profile) -> Result<Self, FormatError> {
        let mut cfg = Self::for_profile(kind, profile);
        cfg.apply(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "experiment" => {
                let kind: ExperimentKind = parse(key, value)?;
                if kind != self.kind {
                    return Err(format!(
                        "config is for `{}`, command runs `{}`",
                        kind.name(),
                        self.kind.name()
                    ));
                }
            }
            "rows" => self.rows = parse(key, value)?,
            "cols" => self.cols = parse(key, value)?,
            "models" => self.models = parse(key, value)?,
            "param_variance" => self.param_variance = parse(key, value)?,
            "n_list" => self.n_list = parse_list(key, value)?,
            "sweep_d" => self.sweep_d = parse_list(key, value)?,
            "sweep_epsilon" => self.sweep_epsilon = parse(key, value)?,
            "sweep_bias" => self.sweep_bias = parse(key, value)?,
            "sweep_n" => self.sweep_n = parse(key, value)?,
            "set_size" => self.set_size = parse(key, value)?,
            "set_count" => self.set_count = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "ground_truth" => self.ground_truth = parse(key, value)?,
            "prior_variance" => self.prior_variance = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "gt_chains" => self.gt_chains = parse(key, value)?,
            "mpsrf_threshold" => self.mpsrf_threshold = parse(key, value)?,
            "mpsrf_extensions" => self.mpsrf_extensions = parse(key, value)?,
            "hmc_step" => self.hmc_step = parse(key, value)?,
            "hmc_leapfrog" => self.hmc_leapfrog = parse(key, value)?,
            "sampler_iterations" => self.sampler_iterations = parse(key, value)?,
            "mh_scale" => self.mh_scale = parse(key, value)?,
            "lv_step" => self.lv_step = parse(key, value)?,
            "cd_sweeps" => self.cd_sweeps = parse(key, value)?,
            "bp_max_iters" => self.bp_max_iters = parse(key, value)?,
            "bp_damping" => self.bp_damping = parse(key, value)?,
            "bp_tol" => self.bp_tol = parse(key, value)?,
            "crf_width" => self.crf_width = parse(key, value)?,
            "crf_corpus" => self.crf_corpus = Some(PathBuf::from(value)),
            "crf_n_list" => self.crf_n_list = parse_list(key, value)?,
            "crf_sequences" => self.crf_sequences = parse(key, value)?,
            "crf_test" => self.crf_test = parse(key, value)?,
            "crf_length" => self.crf_length = parse(key, value)?,
            "crf_density" => self.crf_density = parse(key, value)?,
            "crf_weight_sd" => self.crf_weight_sd = parse(key, value)?,
            "crf_vote_samples" => self.crf_vote_samples = parse(key, value)?,
            "crf_folds" => self.crf_folds = parse(key, value)?,
            "max_length" => self.max_length = parse(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("models", self.models),
            ("sweep_n", self.sweep_n),
            ("set_size", self.set_size),
            ("set_count", self.set_count),
            ("hmc_leapfrog", self.hmc_leapfrog),
            ("sampler_iterations", self.sampler_iterations),
            ("cd_sweeps", self.cd_sweeps),
            ("bp_max_iters", self.bp_max_iters),
            ("crf_width", self.crf_width),
            ("crf_sequences", self.crf_sequences),
            ("crf_length", self.crf_length),
            ("crf_vote_samples", self.crf_vote_samples),
            ("max_length", self.max_length),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("`{k}` must be positive"));
        }
        if self.gt_chains < 2 {
            return Err("`gt_chains` must be at least 2 for the convergence gate".into());
        }
        if self.crf_folds < 2 {
            return Err("`crf_folds` must be at least 2".into());
        }
        if self.sampler_iterations * self.gt_chains < self.set_size * self.set_count {
            return Err(
                "`sampler_iterations` x `gt_chains` must cover `set_size` x `set_count`".into(),
            );
        }
        if self.methods.is_empty() {
            return Err("`methods` must not be empty".into());
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err("`n_list` must hold positive sizes".into());
        }
        if self.crf_n_list.is_empty() || self.crf_n_list.contains(&0) {
            return Err("`crf_n_list` must hold positive sizes".into());
        }
        if self.sweep_d.is_empty() || self.sweep_d.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err("`sweep_d` values must be positive: d = 0 leaves an empty interval".into());
        }
        let reals = [
            ("param_variance", self.param_variance),
            ("sweep_epsilon", self.sweep_epsilon),
            ("prior_variance", self.prior_variance),
            ("hmc_step", self.hmc_step),
            ("mh_scale", self.mh_scale),
            ("lv_step", self.lv_step),
            ("bp_tol", self.bp_tol),
            ("crf_weight_sd", self.crf_weight_sd),
        ];
        if let Some((k, _)) = reals.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(format!("`{k}` must be positive and finite"));
        }
        if !self.sweep_bias.is_finite() {
            return Err("`sweep_bias` must be finite".into());
        }
        if !(self.mpsrf_threshold > 1.0) {
            return Err("`mpsrf_threshold` must exceed 1".into());
        }
        if !(0.0..1.0).contains(&self.bp_damping) {
            return Err("`bp_damping` must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.crf_density) {
            return Err("`crf_density` must lie in [0, 1]".into());
        }
        match self.kind {
            ExperimentKind::Crf => {
                if self.ground_truth != GroundTruth::MhExact {
                    return Err("the CRF experiment uses `mh-exact` ground truth".into());
                }
                if self
                    .methods
                    .iter()
                    .any(|m| matches!(m, Method::BlBp | Method::McBp))
                {
                    return Err("CRF inference is exact: only `bl-mp` and `lv-cd` apply".into());
                }
                if self.crf_corpus.is_none()
                    && self.crf_n_list.iter().any(|&n| n > self.crf_sequences)
                {
                    return Err("`crf_n_list` exceeds `crf_sequences`".into());
                }
            }
            _ => {
                if self.rows.min(self.cols) > bethe_core::exact::GRID_WIDTH_LIMIT {
                    return Err("grid too large for exact ground truth".into());
                }
            }
        }
        Ok(())
    }

    /// Settings echoed at the top of every report.
    pub fn describe(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let shape = match self.kind {
            ExperimentKind::Crf => match &self.crf_corpus {
                Some(p) => format!("corpus={}", p.display()),
                None => format!("width={} length={}", self.crf_width, self.crf_length),
            },
            _ => format!("grid={}x{} models={}", self.rows, self.cols, self.models),
        };
        format!(
            "experiment={} {shape} sets={}x{} methods={} ground_truth={} seed={}",
            self.kind.name(),
            self.set_count,
            self.set_size,
            methods.join(","),
            self.ground_truth.name(),
            self.seed
        )
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for kind in [ExperimentKind::GridPosterior, ExperimentKind::StrengthSweep] {
            ExperimentConfig::smoke(kind).validate().unwrap();
            ExperimentConfig::paper(kind).validate().unwrap();
        }
        ExperimentConfig::smoke(ExperimentKind::Crf)
            .validate()
            .unwrap();
        ExperimentConfig::paper(ExperimentKind::Crf)
            .validate()
            .unwrap();
    }

    #[test]
    fn overrides_and_lists() {
        let mut c = ExperimentConfig::smoke(ExperimentKind::GridPosterior);
        c.apply("# comment\nrows = 4  # trailing\nn_list = 10, 20\nmethods = bl-mp,BL-BP\n")
            .unwrap();
        assert_eq!(c.rows, 4);
        assert_eq!(c.n_list, vec![10, 20]);
        assert_eq!(c.methods, vec![Method::BlMp, Method::BlBp]);
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = ExperimentConfig::smoke(ExperimentKind::GridPosterior);
        let e = c.apply("rows = 3\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.starts_with("line 2") && e.contains("unknown key"), "{e}");
        let e = c.apply("rows = x\n").unwrap_err().to_string();
        assert!(e.starts_with("line 1"), "{e}");
        let e = c.apply("rows = 3\nrows = 4\n").unwrap_err().to_string();
        assert!(e.contains("repeated"), "{e}");
        assert!(c.apply("experiment = crf\n").is_err());
        assert!(c.apply("no equals sign\n").is_err());
    }

    #[test]
    fn degenerate_values_rejected() {
        let mut c = ExperimentConfig::smoke(ExperimentKind::StrengthSweep);
        c.sweep_d = vec![0.0, 0.1];
        assert!(c.validate().unwrap_err().contains("empty interval"));
        let mut c = ExperimentConfig::smoke(ExperimentKind::GridPosterior);
        c.methods.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke(ExperimentKind::GridPosterior);
        c.set_size = 0;
        assert!(c.validate().is_err());
    }
}
