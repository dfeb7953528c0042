//! Flags shared by the subcommands and their TOML mirror.
//!
//! Every flag has a key of the same name in the config file:
//!
//! ```toml
//! patch-size = 9
//! branching = 5
//! layers = 4
//! subsample = "all"
//! steps = 2
//! binarise = true
//! min-component = "2:20"
//! centres = 2
//! ```
//!
//! Values given on the command line win over the file.

use std::path::Path;
use std::str::FromStr;

use clap::Args;
use dictseg::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubsampleRepr", into = "SubsampleRepr")]
pub struct SubsampleArg(pub Subsample);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubsampleRepr {
    Count(u64),
    Rate(f64),
    Text(String),
}

impl FromStr for SubsampleArg {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Invalid(format!("subsample '{s}': expected 'all', a count or a fraction"));
        if s.eq_ignore_ascii_case("all") {
            return Ok(SubsampleArg(Subsample::All));
        }
        if s.contains('.') {
            return s.parse().map(|r| SubsampleArg(Subsample::Rate(r))).map_err(|_| bad());
        }
        s.parse().map(|c| SubsampleArg(Subsample::Count(c))).map_err(|_| bad())
    }
}

impl TryFrom<SubsampleRepr> for SubsampleArg {
    type Error = CliError;

    fn try_from(r: SubsampleRepr) -> Result<Self> {
        match r {
            SubsampleRepr::Count(c) => Ok(SubsampleArg(Subsample::Count(c as usize))),
            SubsampleRepr::Rate(r) => Ok(SubsampleArg(Subsample::Rate(r))),
            SubsampleRepr::Text(s) => s.parse(),
        }
    }
}

impl From<SubsampleArg> for SubsampleRepr {
    fn from(s: SubsampleArg) -> Self {
        match s.0 {
            Subsample::All => SubsampleRepr::Text("all".into()),
            Subsample::Count(c) => SubsampleRepr::Count(c as u64),
            Subsample::Rate(r) => SubsampleRepr::Rate(r),
        }
    }
}

/// `CLASS:SIZE`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MinComponent {
    pub class: u16,
    pub size: usize,
}

impl FromStr for MinComponent {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let parsed = s
            .split_once(':')
            .and_then(|(c, n)| Some((c.trim().parse().ok()?, n.trim().parse().ok()?)));
        match parsed {
            Some((class, size)) if class > 0 => Ok(MinComponent { class, size }),
            _ => Err(CliError::Invalid(format!("min-component '{s}': expected CLASS:SIZE"))),
        }
    }
}

impl TryFrom<String> for MinComponent {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MinComponent> for String {
    fn from(m: MinComponent) -> Self {
        format!("{}:{}", m.class, m.size)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Odd patch side length M.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Children per tree node.
    #[arg(long)]
    pub branching: Option<usize>,
    /// Tree layers below the root.
    #[arg(long)]
    pub layers: Option<usize>,
    /// k-means iterations per node.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training patches: `all`, a count, or a fraction in (0, 1].
    #[arg(long)]
    pub subsample: Option<SubsampleArg>,
    /// `intensity-patch` or `multichannel-patch`.
    #[arg(long)]
    pub extractor: Option<ExtractorKind>,
    /// Number of classes; defaults to the largest class in the marks (at least 2).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Diffusion steps, 1 or 2.
    #[arg(long)]
    pub steps: Option<u8>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub binarise: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub overwrite: Option<bool>,
    /// Tie tolerance for binarisation and segmentation.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Merge components of CLASS smaller than SIZE voxels into their surroundings.
    #[arg(long, value_name = "CLASS:SIZE")]
    pub min_component: Option<MinComponent>,
    /// Detect centres on this class's probability layer.
    #[arg(long, value_name = "CLASS")]
    pub centres: Option<u16>,
    #[arg(long)]
    pub centre_window: Option<usize>,
    #[arg(long)]
    pub centre_distance: Option<f64>,
    #[arg(long)]
    pub centre_threshold: Option<f64>,
}

macro_rules! merge {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Settings { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Settings {
    /// Field-wise `self` where set, else `fallback`.
    pub fn or(self, fallback: Settings) -> Settings {
        merge!(self, fallback; patch_size, branching, layers, iterations, seed, subsample,
            extractor, classes, steps, binarise, overwrite, epsilon, min_component, centres,
            centre_window, centre_distance, centre_threshold)
    }

    pub fn from_toml(text: &str) -> Result<Settings> {
        toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Command-line values over the optional config file.
    pub fn resolve(self, config: Option<&Path>) -> Result<Settings> {
        match config {
            Some(p) => Ok(self.or(Settings::read(p)?)),
            None => Ok(self),
        }
    }

    pub fn dictionary(&self) -> DictionaryConfig {
        let d = DictionaryConfig::default();
        DictionaryConfig {
            patch_size: self.patch_size.unwrap_or(d.patch_size),
            extractor: self.extractor.unwrap_or(d.extractor),
            tree: TreeParams {
                branching: self.branching.unwrap_or(d.tree.branching),
                layers: self.layers.unwrap_or(d.tree.layers),
                iterations: self.iterations.unwrap_or(d.tree.iterations),
                seed: self.seed.unwrap_or(d.tree.seed),
            },
            subsample: self.subsample.map_or(d.subsample, |s| s.0),
        }
    }

    pub fn update_options(&self) -> Result<UpdateOptions> {
        let d = UpdateOptions::default();
        let opts = UpdateOptions {
            steps: self.steps.unwrap_or(d.steps),
            binarise: self.binarise.unwrap_or(d.binarise),
            overwrite: self.overwrite.unwrap_or(d.overwrite),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn centre_options(&self) -> CentreOptions {
        let d = CentreOptions::default();
        CentreOptions {
            window_radius: self.centre_window.unwrap_or(d.window_radius),
            min_distance: self.centre_distance.unwrap_or(d.min_distance),
            threshold: self.centre_threshold.unwrap_or(d.threshold),
        }
    }

    pub fn stack_options(&self) -> StackOptions {
        StackOptions {
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
            min_component: self.min_component.map(|m| (m.class, m.size)),
            centres: self.centres.map(|c| (c, self.centre_options())),
            max_workers: 0,
        }
    }
}
