//! RunConfig resolution: named profile, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use csmn::config::{AblationFlags, ImageMode, RunConfig, SplitMode, Task};

use crate::Conflict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Caption,
    Hashtag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    #[value(name = "by_users")]
    ByUsers,
    #[value(name = "by_posts")]
    ByPosts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageArg {
    Pool5,
    Res5c,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    #[value(name = "no_cnn")]
    NoCnn,
    #[value(name = "no_uc")]
    NoUc,
    #[value(name = "no_wo")]
    NoWo,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Caption => Task::Caption,
            TaskArg::Hashtag => Task::Hashtag,
        }
    }
}

impl From<ImageArg> for ImageMode {
    fn from(m: ImageArg) -> Self {
        match m {
            ImageArg::Pool5 => ImageMode::Pool5,
            ImageArg::Res5c => ImageMode::Res5c,
        }
    }
}

/// Flags shared by every subcommand that needs a run configuration.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// TOML file with a full or partial run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long, value_enum)]
    pub image_mode: Option<ImageArg>,
    /// Ablations to apply; may be repeated.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Context memory size D.
    #[arg(long)]
    pub d_context: Option<usize>,
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Conflict(format!("{}: {e}", path.display())).into())
}

impl ConfigArgs {
    /// Profile defaults, overlaid by `fallback` (when `--config` is absent) or `--config`, then by flags.
    pub fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let file = match (&self.config, fallback) {
            (Some(p), _) => Some(read_table(p)?),
            (None, Some(p)) if p.exists() => Some(read_table(p)?),
            _ => None,
        };
        let profile_name = |t: &toml::Table| t.get("profile").and_then(|v| v.as_str()).map(str::to_owned);
        let profile = match (self.profile, file.as_ref().and_then(profile_name)) {
            (Some(Profile::Paper), _) => "paper".to_string(),
            (Some(Profile::Desk), _) => "desk".to_string(),
            (None, Some(name)) => name,
            (None, None) => "desk".to_string(),
        };
        let file_task = file.as_ref().and_then(|t| t.get("task")).and_then(|v| v.as_str()).map(str::to_owned);
        let task = match (self.task, file_task.as_deref()) {
            (Some(t), _) => t.into(),
            (None, Some("hashtag")) => Task::Hashtag,
            _ => Task::Caption,
        };
        let mut cfg = RunConfig::named(&profile, task)?;
        if let Some(mut overlay) = file {
            let mut base = toml::Table::try_from(&cfg).context("serializing base configuration")?;
            overlay.remove("profile");
            overlay.remove("task");
            merge(&mut base, overlay);
            cfg = base.try_into().map_err(|e| Conflict(format!("configuration file: {e}")))?;
            cfg.profile = profile;
            cfg.task = task;
        }
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(split) = self.split {
            cfg.split = match split {
                SplitArg::ByUsers => SplitMode::ByUsers,
                SplitArg::ByPosts => SplitMode::ByPosts,
            };
        }
        if let Some(mode) = self.image_mode {
            cfg.model.image_mode = mode.into();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(d) = self.d_context {
            cfg.model.d_context = d;
        }
        if !self.ablate.is_empty() {
            cfg.flags = AblationFlags {
                no_cnn: self.ablate.contains(&Ablation::NoCnn),
                no_user_context: self.ablate.contains(&Ablation::NoUc),
                no_word_output: self.ablate.contains(&Ablation::NoWo),
            };
        }
    }
}

/// Writes the resolved configuration next to a command's outputs.
pub fn persist(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("config.toml");
    let text = toml::to_string(cfg).context("serializing configuration")?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
