//! Flat `key = value` config files with optional `[section]` headers.
//!
//! Keys before any header, or under `[global]`, apply to every subcommand;
//! a section named after a subcommand applies to that subcommand only.

use std::collections::HashMap;
use std::path::Path;

use ini::Ini;

use crate::CliError;

const GLOBAL_KEYS: &[&str] = &[
    "seeds",
    "seed_list",
    "mode",
    "out",
    "threads",
    "allow_divergence",
];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "global" => &[],
        "bench" => &[
            "problem",
            "scenario",
            "optimizers",
            "steps",
            "noise_std",
            "baseline",
            "export_data",
        ],
        "ablation-injection" => &["steps", "injection"],
        "sweep" => &["param", "grid", "problem", "scenario", "steps"],
        "verify" => &["json"],
        _ => return None,
    })
}

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    global: HashMap<String, String>,
    sections: HashMap<String, HashMap<String, String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let ini = Ini::load_from_str(text).map_err(|e| e.to_string())?;
        let mut cfg = ConfigFile::default();
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("global");
            let allowed = section_keys(name).ok_or_else(|| format!("unknown section [{name}]"))?;
            for (k, v) in props.iter() {
                let key = k.replace('-', "_");
                let target = if GLOBAL_KEYS.contains(&key.as_str()) {
                    if name == "global" {
                        &mut cfg.global
                    } else {
                        cfg.sections.entry(name.to_string()).or_default()
                    }
                } else if allowed.contains(&key.as_str()) {
                    cfg.sections.entry(name.to_string()).or_default()
                } else {
                    return Err(format!("unknown key `{k}` in [{name}]"));
                };
                target.insert(key, v.trim().to_string());
            }
        }
        Ok(cfg)
    }

    /// Value for `key`, preferring the subcommand's section.
    pub fn get(&self, subcommand: &str, key: &str) -> Option<&str> {
        self.sections
            .get(subcommand)
            .and_then(|s| s.get(key))
            .or_else(|| self.global.get(key))
            .map(String::as_str)
    }

    /// Parsed value for `key`, or a usage error naming the key.
    pub fn parsed<T: std::str::FromStr>(
        &self,
        subcommand: &str,
        key: &str,
    ) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(subcommand, key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("config key `{key}` = `{v}`: {e}")))
            })
            .transpose()
    }
}
