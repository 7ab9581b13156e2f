//! Run configuration: sectioned `key = value` text. Every key is optional and
//! falls back to the default shown by `termcast --help`; unknown sections
//! and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;
use termcast_core::model::{FusionMode, ModelConfig, Variant};
use termcast_core::training::{SynthParams, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub interval_seconds: u32,
    /// Series range in epoch seconds; derived from the data when absent.
    pub start: Option<u64>,
    pub end: Option<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            lon_min: 0.0,
            lon_max: 1.0,
            lat_min: 0.0,
            lat_max: 1.0,
            interval_seconds: 3600,
            start: None,
            end: None,
        }
    }
}

/// Model settings that do not depend on the data; grid size and day length
/// are filled in from the series.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub relation_dim: usize,
    pub conv_filters: usize,
    pub conv_layers: usize,
    pub transformer_depth: usize,
    pub heads: usize,
    pub g_hidden: Vec<usize>,
    pub mlp_r_hidden: Vec<usize>,
    pub mlp_extra_hidden: Vec<usize>,
    pub variant: Variant,
    pub fusion: FusionMode,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 24);
        Self {
            relation_dim: m.relation_dim,
            conv_filters: m.conv_filters,
            conv_layers: m.conv_layers,
            transformer_depth: m.transformer_depth,
            heads: m.heads,
            g_hidden: m.g_hidden,
            mlp_r_hidden: m.mlp_r_hidden,
            mlp_extra_hidden: m.mlp_extra_hidden,
            variant: m.variant,
            fusion: m.fusion,
            alpha: m.alpha,
            beta: m.beta,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, height: usize, width: usize, intervals_per_day: usize) -> ModelConfig {
        ModelConfig {
            relation_dim: self.relation_dim,
            conv_filters: self.conv_filters,
            conv_layers: self.conv_layers,
            transformer_depth: self.transformer_depth,
            heads: self.heads,
            g_hidden: self.g_hidden.clone(),
            mlp_r_hidden: self.mlp_r_hidden.clone(),
            mlp_extra_hidden: self.mlp_extra_hidden.clone(),
            variant: self.variant,
            fusion: self.fusion,
            alpha: self.alpha,
            beta: self.beta,
            ..ModelConfig::new(height, width, intervals_per_day)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub grid: GridSection,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            train_fraction: 0.8,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            grid: GridSection::default(),
            synth: SynthParams::desk(0),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("[{section}] {key} = {value:?}: {e}"))
}

fn parse_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).context("config is not valid key = value text")?;
        let mut c = RunConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                c.set(section, key, value.trim())?;
            }
        }
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let s = section;
        match (section, key) {
            ("data", "path") => self.data_path = Some(PathBuf::from(v)),
            ("data", "train_fraction") => self.train_fraction = parse(s, key, v)?,

            ("model", "relation_dim") => self.model.relation_dim = parse(s, key, v)?,
            ("model", "conv_filters") => self.model.conv_filters = parse(s, key, v)?,
            ("model", "conv_layers") => self.model.conv_layers = parse(s, key, v)?,
            ("model", "transformer_depth") => self.model.transformer_depth = parse(s, key, v)?,
            ("model", "heads") => self.model.heads = parse(s, key, v)?,
            ("model", "g_hidden") => self.model.g_hidden = parse_list(s, key, v)?,
            ("model", "mlp_r_hidden") => self.model.mlp_r_hidden = parse_list(s, key, v)?,
            ("model", "mlp_extra_hidden") => self.model.mlp_extra_hidden = parse_list(s, key, v)?,
            ("model", "variant") => self.model.variant = parse(s, key, v)?,
            ("model", "fusion") => self.model.fusion = parse(s, key, v)?,
            ("model", "alpha") => self.model.alpha = parse(s, key, v)?,
            ("model", "beta") => self.model.beta = parse(s, key, v)?,

            ("train", "epochs") => self.train.epochs = parse(s, key, v)?,
            ("train", "batch_size") => self.train.batch_size = parse(s, key, v)?,
            ("train", "lr") => self.train.lr = parse(s, key, v)?,
            ("train", "seed") => self.train.seed = parse(s, key, v)?,
            ("train", "early_stop_patience") => self.train.early_stop_patience = parse(s, key, v)?,
            ("train", "validation_fraction") => self.train.validation_fraction = parse(s, key, v)?,
            ("train", "seeds") => self.seeds = parse_list(s, key, v)?,

            ("grid", "rows") => self.grid.rows = parse(s, key, v)?,
            ("grid", "cols") => self.grid.cols = parse(s, key, v)?,
            ("grid", "lon_min") => self.grid.lon_min = parse(s, key, v)?,
            ("grid", "lon_max") => self.grid.lon_max = parse(s, key, v)?,
            ("grid", "lat_min") => self.grid.lat_min = parse(s, key, v)?,
            ("grid", "lat_max") => self.grid.lat_max = parse(s, key, v)?,
            ("grid", "interval_seconds") => self.grid.interval_seconds = parse(s, key, v)?,
            ("grid", "start") => self.grid.start = Some(parse(s, key, v)?),
            ("grid", "end") => self.grid.end = Some(parse(s, key, v)?),

            ("synth", "seed") => self.synth.seed = parse(s, key, v)?,
            ("synth", "height") => self.synth.height = parse(s, key, v)?,
            ("synth", "width") => self.synth.width = parse(s, key, v)?,
            ("synth", "weeks") => self.synth.weeks = parse(s, key, v)?,
            ("synth", "interval_hours") => self.synth.interval_hours = parse(s, key, v)?,
            ("synth", "daily_amp") => self.synth.daily_amp = parse(s, key, v)?,
            ("synth", "weekly_amp") => self.synth.weekly_amp = parse(s, key, v)?,
            ("synth", "noise_std") => self.synth.noise_std = parse(s, key, v)?,
            ("synth", "noise_corr") => self.synth.noise_corr = parse(s, key, v)?,

            ("data" | "model" | "train" | "grid" | "synth", _) => bail!("unknown key {key:?} in [{section}]"),
            ("", _) => bail!("key {key:?} is outside any section"),
            _ => bail!("unknown section [{section}]"),
        }
        Ok(())
    }

    /// Every key with its effective value, in the same format `from_str` reads.
    pub fn to_text(&self) -> String {
        let mut sections: Vec<(&str, BTreeMap<&str, String>)> = Vec::new();
        let mut data = BTreeMap::new();
        if let Some(p) = &self.data_path {
            data.insert("path", p.display().to_string());
        }
        data.insert("train_fraction", self.train_fraction.to_string());
        sections.push(("data", data));

        let m = &self.model;
        sections.push((
            "model",
            BTreeMap::from([
                ("relation_dim", m.relation_dim.to_string()),
                ("conv_filters", m.conv_filters.to_string()),
                ("conv_layers", m.conv_layers.to_string()),
                ("transformer_depth", m.transformer_depth.to_string()),
                ("heads", m.heads.to_string()),
                ("g_hidden", join(&m.g_hidden)),
                ("mlp_r_hidden", join(&m.mlp_r_hidden)),
                ("mlp_extra_hidden", join(&m.mlp_extra_hidden)),
                ("variant", m.variant.to_string()),
                ("fusion", m.fusion.to_string()),
                ("alpha", m.alpha.to_string()),
                ("beta", m.beta.to_string()),
            ]),
        ));
        let t = &self.train;
        sections.push((
            "train",
            BTreeMap::from([
                ("epochs", t.epochs.to_string()),
                ("batch_size", t.batch_size.to_string()),
                ("lr", t.lr.to_string()),
                ("seed", t.seed.to_string()),
                ("early_stop_patience", t.early_stop_patience.to_string()),
                ("validation_fraction", t.validation_fraction.to_string()),
                ("seeds", join(&self.seeds)),
            ]),
        ));
        let g = &self.grid;
        let mut grid = BTreeMap::from([
            ("rows", g.rows.to_string()),
            ("cols", g.cols.to_string()),
            ("lon_min", g.lon_min.to_string()),
            ("lon_max", g.lon_max.to_string()),
            ("lat_min", g.lat_min.to_string()),
            ("lat_max", g.lat_max.to_string()),
            ("interval_seconds", g.interval_seconds.to_string()),
        ]);
        if let Some(s) = g.start {
            grid.insert("start", s.to_string());
        }
        if let Some(e) = g.end {
            grid.insert("end", e.to_string());
        }
        sections.push(("grid", grid));
        let p = &self.synth;
        sections.push((
            "synth",
            BTreeMap::from([
                ("seed", p.seed.to_string()),
                ("height", p.height.to_string()),
                ("width", p.width.to_string()),
                ("weeks", p.weeks.to_string()),
                ("interval_hours", p.interval_hours.to_string()),
                ("daily_amp", p.daily_amp.to_string()),
                ("weekly_amp", p.weekly_amp.to_string()),
                ("noise_std", p.noise_std.to_string()),
                ("noise_corr", p.noise_corr.to_string()),
            ]),
        ));

        let mut out = String::new();
        for (i, (name, keys)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "[{name}]").unwrap();
            for (k, v) in keys {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn reads_values() {
        let c = RunConfig::from_str(
            "[model]\nrelation_dim = 64\nfusion = c2\ng_hidden = 32, 16\n[train]\nseeds = 7,8\n[data]\npath = x.ufs\n",
        )
        .unwrap();
        assert_eq!(c.model.relation_dim, 64);
        assert_eq!(c.model.fusion, FusionMode::C2);
        assert_eq!(c.model.g_hidden, vec![32, 16]);
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.data_path, Some(PathBuf::from("x.ufs")));
        assert_eq!(RunConfig::from_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_str("[model]\nrelation_dims = 3\n").is_err());
        assert!(RunConfig::from_str("[modle]\nrelation_dim = 3\n").is_err());
        assert!(RunConfig::from_str("relation_dim = 3\n").is_err());
        assert!(RunConfig::from_str("[model]\nfusion = c7\n").is_err());
    }
}
