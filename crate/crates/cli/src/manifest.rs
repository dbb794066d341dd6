//! Run manifests and config-file layering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tiledit_core::guidance::GuidanceConfig;
use tiledit_core::schedule::ScheduleParams;
use tiledit_core::tiling::TilePlan;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub latent_factor: usize,
    pub tiles: usize,
}

impl PlanSummary {
    pub fn of(plan: &TilePlan) -> Self {
        Self {
            canvas_height: plan.canvas_height,
            canvas_width: plan.canvas_width,
            tile_height: plan.tile_height,
            tile_width: plan.tile_width,
            latent_factor: plan.latent_factor,
            tiles: plan.len(),
        }
    }
}

/// Written next to every command output. `run` holds the fully resolved
/// arguments; `tiledit rerun` replays them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSummary>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub info: BTreeMap<String, toml::Value>,
    pub run: toml::Table,
}

impl RunManifest {
    pub fn new<R: Serialize>(command: &str, seed: u64, run: &R) -> CliResult<Self> {
        Ok(Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            backend: None,
            codec: None,
            schedule: None,
            guidance: None,
            plan: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            info: BTreeMap::new(),
            run: to_table(run)?,
        })
    }

    pub fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.insert(key.into(), path.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.insert(key.into(), path.display().to_string());
        self
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::runtime("manifest", e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::input_not_found(path));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::usage("bad-manifest", format!("{}: {e}", path.display())))
    }

    pub fn run_as<R: DeserializeOwned>(&self) -> CliResult<R> {
        self.run
            .clone()
            .try_into()
            .map_err(|e| CliError::usage("bad-manifest", e.to_string()))
    }
}

/// `<output>.manifest.toml`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

fn to_table<R: Serialize>(run: &R) -> CliResult<toml::Table> {
    toml::Table::try_from(run).map_err(|e| CliError::runtime("manifest", e.to_string()))
}

/// Overlays flags on the command's section of the config file: a flag that
/// was given wins, otherwise the config value, otherwise `None` (and the
/// caller's built-in default).
pub fn layered<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&toml::Table>) -> CliResult<A> {
    let Some(config) = config else {
        return deserialize(to_table(flags)?);
    };
    let mut merged = config.clone();
    merged.extend(to_table(flags)?);
    deserialize(merged)
}

fn deserialize<A: DeserializeOwned>(table: toml::Table) -> CliResult<A> {
    table
        .try_into()
        .map_err(|e| CliError::usage("bad-config", e.to_string()))
}

/// Reads a config file and returns its `[section]` table.
pub fn config_section(path: Option<&Path>, section: &str) -> CliResult<Option<toml::Table>> {
    let Some(path) = path else { return Ok(None) };
    if !path.exists() {
        return Err(CliError::input_not_found(path));
    }
    let text = std::fs::read_to_string(path)?;
    let mut doc: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::usage("bad-config", format!("{}: {e}", path.display())))?;
    match doc.remove(section) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(CliError::usage("bad-config", format!("[{section}] must be a table"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Flags {
        a: Option<f64>,
        b: Option<String>,
        c: Option<bool>,
    }

    #[test]
    fn flags_beat_config_beat_defaults() {
        let flags = Flags {
            a: Some(1.0),
            b: None,
            c: None,
        };
        let config: toml::Table = toml::from_str("a = 9.0\nb = \"cfg\"").unwrap();
        let merged = layered(&flags, Some(&config)).unwrap();
        assert_eq!(
            merged,
            Flags {
                a: Some(1.0),
                b: Some("cfg".into()),
                c: None
            }
        );
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = RunManifest::new(
            "edit",
            7,
            &Flags {
                a: Some(0.5),
                b: None,
                c: Some(true),
            },
        )
        .unwrap();
        m.output("image", Path::new("out.png"));
        m.schedule = Some(ScheduleParams::stable_diffusion(50));
        let text = toml::to_string(&m).unwrap();
        let back: RunManifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
        let run: Flags = back.run_as().unwrap();
        assert_eq!(run.a, Some(0.5));
        assert_eq!(
            manifest_path(Path::new("x/out.png")),
            PathBuf::from("x/out.png.manifest.toml")
        );
    }
}
