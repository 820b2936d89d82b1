//! Run configuration: a JSON file merged with command-line flags, flags
//! winning. Relative paths in a file are resolved against its directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use krusco_core::{ActivationInit, KcscConfig, RebalanceRule, SolveBudget, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::model_io::{read_json, ModelFiles};

/// Inclusive rank range written `LO..HI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RankRange {
    pub lo: usize,
    pub hi: usize,
}

impl RankRange {
    pub fn ranks(&self) -> Vec<usize> {
        (self.lo..=self.hi).collect()
    }
}

impl FromStr for RankRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once("..")
            .ok_or_else(|| format!("rank range '{s}' is not of the form LO..HI"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| format!("rank range '{s}': {e}"))
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo == 0 || hi < lo {
            return Err(format!("rank range '{s}' must satisfy 1 <= LO <= HI"));
        }
        Ok(Self { lo, hi })
    }
}

impl TryFrom<String> for RankRange {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<RankRange> for String {
    fn from(r: RankRange) -> String {
        r.to_string()
    }
}

impl fmt::Display for RankRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Rebalance {
    UnitNorm,
    Balanced,
}

impl From<Rebalance> for RebalanceRule {
    fn from(r: Rebalance) -> Self {
        match r {
            Rebalance::UnitNorm => RebalanceRule::UnitNorm,
            Rebalance::Balanced => RebalanceRule::Balanced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Random,
    DenseCp,
}

impl From<Init> for ActivationInit {
    fn from(i: Init) -> Self {
        match i {
            Init::Random => ActivationInit::Random,
            Init::DenseCp => ActivationInit::DenseCp,
        }
    }
}

/// Parameters of `fit`. Every field is optional so that a file and the
/// flags can each supply part of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub atoms: Option<usize>,
    pub rank: Option<usize>,
    pub atom_shape: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    /// Read `alpha` as fractions of the `alpha_max` at the starting state.
    pub relative_alpha: Option<bool>,
    pub loops: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub baseline: Option<bool>,
    pub rank_sweep: Option<RankRange>,
    pub init_dict: Option<PathBuf>,
    pub update_dictionary: Option<bool>,
    pub mode_iters: Option<usize>,
    pub mode_tol: Option<f64>,
    pub dict_iters: Option<usize>,
    pub dict_tol: Option<f64>,
    pub rebalance: Option<Rebalance>,
    pub init: Option<Init>,
}

macro_rules! overlay {
    ($base:ident, $over:ident, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        let root = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.input,
            &mut cfg.manifest,
            &mut cfg.out,
            &mut cfg.init_dict,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Field-wise merge where `over` wins.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base,
            over,
            input,
            manifest,
            out,
            atoms,
            rank,
            atom_shape,
            alpha,
            beta,
            relative_alpha,
            loops,
            tol,
            seed,
            baseline,
            rank_sweep,
            init_dict,
            update_dictionary,
            mode_iters,
            mode_tol,
            dict_iters,
            dict_tol,
            rebalance,
            init
        )
    }
}

/// `manifest.json` written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub signal: String,
    pub signal_shape: Vec<usize>,
    pub atom_shape: Vec<usize>,
    pub atoms: usize,
    pub rank: usize,
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub model: ModelFiles,
}

/// Parameters of `synth`; absent fields take the reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub signal_shape: Option<Vec<usize>>,
    pub atom_shape: Option<Vec<usize>>,
    pub atoms: Option<usize>,
    pub rank: Option<usize>,
    pub density: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl SynthConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let mut cfg: SynthConfig = read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(p) = cfg.out.as_mut() {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn overlay(self, over: SynthConfig) -> SynthConfig {
        SynthConfig {
            signal_shape: over.signal_shape.or(self.signal_shape),
            atom_shape: over.atom_shape.or(self.atom_shape),
            atoms: over.atoms.or(self.atoms),
            rank: over.rank.or(self.rank),
            density: over.density.or(self.density),
            noise_sigma: over.noise_sigma.or(self.noise_sigma),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        let r = SyntheticSpec::reference();
        let mut spec = SyntheticSpec::new(
            self.signal_shape.clone().unwrap_or(r.signal_shape),
            self.atom_shape.clone().unwrap_or(r.atom_shape),
            self.atoms.unwrap_or(r.atoms),
            self.rank.unwrap_or(r.rank),
        );
        spec.density = self.density.unwrap_or(r.density);
        spec.noise_sigma = self.noise_sigma.unwrap_or(r.noise_sigma);
        spec
    }
}

/// A fit request with every required value present.
#[derive(Debug, Clone)]
pub struct FitPlan {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Ranks to fit; a single entry unless sweeping.
    pub ranks: Vec<usize>,
    pub baseline: bool,
    pub relative_alpha: bool,
    pub init_dict: Option<PathBuf>,
    /// Configuration for `ranks[0]`; `alpha` may still be relative.
    pub kcsc: KcscConfig,
    /// Mismatches between the flags and the manifest.
    pub warnings: Vec<String>,
}

fn broadcast(name: &str, v: &[f64], order: usize) -> CliResult<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; order]),
        n if n == order => Ok(v.to_vec()),
        n => Err(CliError::Config(format!(
            "--{name} has {n} values; give 1 or one per mode ({order})"
        ))),
    }
}

impl RunConfig {
    /// Fill gaps from the manifest, check required values and build the
    /// solver configuration for a signal of the given order.
    pub fn plan(&self, signal_order: impl FnOnce(&Path) -> CliResult<usize>) -> CliResult<FitPlan> {
        let manifest = match &self.manifest {
            Some(p) => Some((
                read_json::<SynthManifest>(p)?,
                p.parent().unwrap_or(Path::new(".")).to_path_buf(),
            )),
            None => None,
        };
        let mut warnings = Vec::new();
        let from_manifest = manifest.as_ref();
        let input = match (&self.input, from_manifest) {
            (Some(i), Some((m, root))) => {
                if *i != root.join(&m.signal) {
                    warnings.push(format!(
                        "input {} differs from the manifest signal {}",
                        i.display(),
                        root.join(&m.signal).display()
                    ));
                }
                i.clone()
            }
            (Some(i), None) => i.clone(),
            (None, Some((m, root))) => root.join(&m.signal),
            (None, None) => {
                return Err(CliError::Config(
                    "no input: give --input or --manifest".into(),
                ))
            }
        };
        let out = self
            .out
            .clone()
            .ok_or_else(|| CliError::Config("no output directory: give --out".into()))?;
        let atoms = match (self.atoms, from_manifest) {
            (Some(k), Some((m, _))) => {
                if k != m.atoms {
                    warnings.push(format!(
                        "--atoms {k} differs from the manifest ({})",
                        m.atoms
                    ));
                }
                k
            }
            (Some(k), None) => k,
            (None, Some((m, _))) => m.atoms,
            (None, None) => return Err(CliError::Config("missing --atoms".into())),
        };
        let atom_shape = match (&self.atom_shape, from_manifest) {
            (Some(w), Some((m, _))) => {
                if *w != m.atom_shape {
                    warnings.push(format!(
                        "--atom-shape {w:?} differs from the manifest ({:?})",
                        m.atom_shape
                    ));
                }
                w.clone()
            }
            (Some(w), None) => w.clone(),
            (None, Some((m, _))) => m.atom_shape.clone(),
            (None, None) => return Err(CliError::Config("missing --atom-shape".into())),
        };
        let baseline = self.baseline.unwrap_or(false);
        let ranks = match (self.rank_sweep, self.rank) {
            (Some(_), _) if baseline => {
                return Err(CliError::Config(
                    "--rank-sweep and --baseline cannot be combined".into(),
                ))
            }
            (Some(r), _) => r.ranks(),
            (None, Some(r)) => vec![r],
            (None, None) => match from_manifest {
                Some((m, _)) => vec![m.rank],
                None if baseline => vec![1],
                None => return Err(CliError::Config("missing --rank".into())),
            },
        };
        let alpha = self
            .alpha
            .clone()
            .ok_or_else(|| CliError::Config("missing --alpha".into()))?;
        if alpha
            .iter()
            .chain(self.beta.iter().flatten())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(CliError::Config(
                "penalty weights must be finite and >= 0".into(),
            ));
        }
        if atom_shape.is_empty() {
            return Err(CliError::Config("--atom-shape is empty".into()));
        }
        let order = atom_shape.len();
        let actual = signal_order(&input)?;
        if actual != order {
            return Err(CliError::Config(format!(
                "signal has {actual} modes but --atom-shape has {order}"
            )));
        }
        let alpha = broadcast("alpha", &alpha, order)?;
        let beta = broadcast("beta", self.beta.as_deref().unwrap_or(&[0.0]), order)?;

        let mut kcsc = KcscConfig::new(atoms, ranks[0], atom_shape, alpha);
        kcsc.beta = beta;
        if let Some(n) = self.loops {
            kcsc.outer_loops = n;
        }
        if let Some(t) = self.tol {
            kcsc.outer_tol = t;
        }
        if let Some(s) = self.seed {
            kcsc.seed = s;
        }
        if let Some(u) = self.update_dictionary {
            kcsc.update_dictionary = u;
        }
        kcsc.mode_budget = SolveBudget::new(
            self.mode_iters.unwrap_or(kcsc.mode_budget.max_iter),
            self.mode_tol.unwrap_or(kcsc.mode_budget.tol),
        );
        kcsc.dict_budget = SolveBudget::new(
            self.dict_iters.unwrap_or(kcsc.dict_budget.max_iter),
            self.dict_tol.unwrap_or(kcsc.dict_budget.tol),
        );
        if let Some(r) = self.rebalance {
            kcsc.rebalance = r.into();
        }
        if let Some(i) = self.init {
            kcsc.activation_init = i.into();
        }
        Ok(FitPlan {
            input,
            out,
            ranks,
            baseline,
            relative_alpha: self.relative_alpha.unwrap_or(false),
            init_dict: self.init_dict.clone(),
            kcsc,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_range_parsing() {
        assert_eq!(
            "1..6".parse::<RankRange>().unwrap().ranks(),
            vec![1, 2, 3, 4, 5, 6]
        );
        assert_eq!("3..3".parse::<RankRange>().unwrap().ranks(), vec![3]);
        assert!("0..2".parse::<RankRange>().is_err());
        assert!("4..2".parse::<RankRange>().is_err());
        assert!("4".parse::<RankRange>().is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let file = RunConfig {
            rank: Some(2),
            alpha: Some(vec![0.1]),
            loops: Some(5),
            ..Default::default()
        };
        let flags = RunConfig {
            rank: Some(3),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.rank, Some(3));
        assert_eq!(merged.loops, Some(5));
        assert_eq!(merged.alpha, Some(vec![0.1]));
    }

    #[test]
    fn plan_broadcasts_penalties() {
        let cfg = RunConfig {
            input: Some("y.npy".into()),
            out: Some("out".into()),
            atoms: Some(2),
            rank: Some(1),
            atom_shape: Some(vec![2, 3]),
            alpha: Some(vec![0.5]),
            ..Default::default()
        };
        let plan = cfg.plan(|_| Ok(2)).unwrap();
        assert_eq!(plan.kcsc.alpha, vec![0.5, 0.5]);
        assert_eq!(plan.kcsc.beta, vec![0.0, 0.0]);
        assert!(plan.warnings.is_empty());
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        let good = RunConfig {
            input: Some("y.npy".into()),
            out: Some("out".into()),
            atoms: Some(2),
            rank: Some(1),
            atom_shape: Some(vec![2, 3]),
            alpha: Some(vec![0.5]),
            ..Default::default()
        };
        let order_mismatch = good.plan(|_| Ok(3)).unwrap_err();
        assert_eq!(order_mismatch.exit_code(), 2);
        let mut bad = good.clone();
        bad.alpha = Some(vec![0.1, 0.2, 0.3]);
        assert!(bad.plan(|_| Ok(2)).is_err());
        let mut bad = good.clone();
        bad.alpha = None;
        assert!(bad.plan(|_| Ok(2)).is_err());
        let mut bad = good;
        bad.baseline = Some(true);
        bad.rank_sweep = Some("1..2".parse().unwrap());
        assert!(bad.plan(|_| Ok(2)).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = RunConfig {
            rank_sweep: Some("1..4".parse().unwrap()),
            rebalance: Some(Rebalance::UnitNorm),
            init: Some(Init::DenseCp),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(
            text.contains("\"1..4\"") && text.contains("\"unit-norm\""),
            "{text}"
        );
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<RunConfig>("{\"rnak\": 2}").is_err());
    }
}
