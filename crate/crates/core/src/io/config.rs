//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error so
//! that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::MwcnnConfig;
use crate::train::TrainConfig;

pub type KvMap = BTreeMap<String, String>;

pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_owned(), v.trim().to_owned()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key {k:?}",
                n + 1
            )));
        }
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}

/// Model and training settings from one file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: MwcnnConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut widths_given = false;
        for (k, v) in map {
            let (m, t) = (&mut c.model, &mut c.train);
            match k.as_str() {
                "in_channels" => m.in_channels = parse(k, v)?,
                "levels" => m.levels = parse(k, v)?,
                "block_depth" => m.block_depth = parse(k, v)?,
                "widths" => {
                    m.widths = v
                        .split(',')
                        .map(|s| parse(k, s.trim()))
                        .collect::<Result<Vec<usize>>>()?;
                    widths_given = true;
                }
                "bank" => m.bank = v.parse()?,
                "bank_expand" => m.bank_expand = v.parse()?,
                "allow_mixed_banks" => m.allow_mixed_banks = parse_bool(k, v)?,
                "downsampler" => m.downsampler = v.parse()?,
                "global_residual" => m.global_residual = parse_bool(k, v)?,
                "chain_depth" => m.chain_depth = parse(k, v)?,
                "chain_dilation" => m.chain_dilation = parse(k, v)?,
                "sigma" => t.sigma = parse(k, v)?,
                "patch" => t.patch = parse(k, v)?,
                "batch" => t.batch = parse(k, v)?,
                "epochs" => t.epochs = parse(k, v)?,
                "steps_per_epoch" => t.steps_per_epoch = parse(k, v)?,
                "lr_start" | "alpha" => t.lr_start = parse(k, v)?,
                "lr_end" => t.lr_end = parse(k, v)?,
                "augment" => t.augment = parse_bool(k, v)?,
                "seed" => t.seed = parse(k, v)?,
                "val_images" => t.val_images = parse(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if map.contains_key("alpha") && map.contains_key("lr_start") {
            return Err(Error::Config(
                "alpha and lr_start name the same setting".into(),
            ));
        }
        if !map.contains_key("bank_expand") && map.contains_key("bank") {
            c.model.bank_expand = c.model.bank;
        }
        if !widths_given && c.model.widths.len() != c.model.levels {
            // default widths double per level from 16
            c.model.widths = (0..c.model.levels).map(|l| 16 << l).collect();
        }
        c.model.validate()?;
        c.train.validate(&c.model)?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&parse_kv(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; [`RunConfig::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let widths: Vec<String> = m.widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("in_channels", m.in_channels.to_string());
        put("levels", m.levels.to_string());
        put("block_depth", m.block_depth.to_string());
        put("widths", widths.join(","));
        put("bank", m.bank.to_string());
        put("bank_expand", m.bank_expand.to_string());
        put("allow_mixed_banks", m.allow_mixed_banks.to_string());
        put("downsampler", m.downsampler.to_string());
        put("global_residual", m.global_residual.to_string());
        put("chain_depth", m.chain_depth.to_string());
        put("chain_dilation", m.chain_dilation.to_string());
        // `{:?}` keeps full round-trip precision for floats
        put("sigma", format!("{:?}", t.sigma));
        put("patch", t.patch.to_string());
        put("batch", t.batch.to_string());
        put("epochs", t.epochs.to_string());
        put("steps_per_epoch", t.steps_per_epoch.to_string());
        put("lr_start", format!("{:?}", t.lr_start));
        put("lr_end", format!("{:?}", t.lr_end));
        put("augment", t.augment.to_string());
        put("seed", t.seed.to_string());
        put("val_images", t.val_images.to_string());
        s
    }
}
