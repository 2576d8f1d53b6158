//! `key = value` configuration files for [`TrainConfig`].
//!
//! One setting per line; `#` starts a comment. Keys match the field names
//! (`lambda`, `learning_rate`, `epochs`, `batch_size`, `patches_per_epoch`,
//! `sample_m`, `seed`, `reduction`, `precision`, `widths`, `mode`,
//! `patch_size`, `augment`, `validation_images`, `eval_stride`).

use std::path::Path;
use std::str::FromStr;

use crate::data::patches::Augment;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

pub fn parse_widths(value: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = value
        .split([',', '/'])
        .map(|p| parse("widths", p.trim()))
        .collect::<Result<_>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| Error::Config(format!("widths: expected three counts, got `{value}`")))
}

/// `none` or a comma list of `hflip`, `vflip`, `rot90`.
pub fn parse_augment(value: &str) -> Result<Augment> {
    let mut a = Augment::default();
    if value.trim() == "none" || value.trim().is_empty() {
        return Ok(a);
    }
    for flag in value.split(',').map(str::trim) {
        match flag {
            "hflip" => a.hflip = true,
            "vflip" => a.vflip = true,
            "rot90" => a.rot90 = true,
            other => return Err(Error::Config(format!("augment: unknown flag `{other}`"))),
        }
    }
    Ok(a)
}

fn format_augment(a: &Augment) -> String {
    let flags: Vec<&str> = [(a.hflip, "hflip"), (a.vflip, "vflip"), (a.rot90, "rot90")]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
    if flags.is_empty() {
        "none".into()
    } else {
        flags.join(",")
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patches_per_epoch" => self.patches_per_epoch = parse(key, value)?,
            "sample_m" => self.sample_m = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "reduction" => self.reduction = value.parse()?,
            "precision" => self.precision = value.parse()?,
            "widths" => self.widths = parse_widths(value)?,
            "mode" => self.input_mode = value.parse()?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "augment" => self.augment = parse_augment(value)?,
            "validation_images" => self.validation_images = parse(key, value)?,
            "eval_stride" => self.eval_stride = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Serialize in the same format [`apply_text`](Self::apply_text) reads.
    pub fn to_kv(&self) -> String {
        let [a, b, c] = self.widths;
        [
            format!("lambda = {}", self.lambda),
            format!("learning_rate = {}", self.learning_rate),
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("patches_per_epoch = {}", self.patches_per_epoch),
            format!("sample_m = {}", self.sample_m),
            format!("seed = {}", self.seed),
            format!("reduction = {}", self.reduction),
            format!("precision = {}", self.precision),
            format!("widths = {a},{b},{c}"),
            format!("mode = {}", self.input_mode),
            format!("patch_size = {}", self.patch_size),
            format!("augment = {}", format_augment(&self.augment)),
            format!("validation_images = {}", self.validation_images),
            format!("eval_stride = {}", self.eval_stride),
        ]
        .join("\n")
            + "\n"
    }
}
