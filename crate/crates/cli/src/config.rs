//! Run configuration: defaults, then a TOML file, then `SUPERCURVE_*` variables, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rel_tol: f64,
    /// Grid resolution for detection and inequality sups.
    pub grid: usize,
    pub eps0: f64,
    pub eps_count: usize,
    pub nu0: f64,
    pub count: usize,
    pub search_tol: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { rel_tol: 1e-8, grid: 21, eps0: 0.4, eps_count: 4, nu0: 625.0, count: 5, search_tol: 1e-4, seed: 42 }
    }
}

pub const ENV_PREFIX: &str = "SUPERCURVE_";

impl RunConfig {
    /// Layers the optional file and the environment over the defaults.
    pub fn load(file: Option<&Path>, env: &[(String, String)]) -> Result<Self, String> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| e.to_string())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let file_table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
            for (k, v) in file_table {
                if !table.contains_key(&k) {
                    return Err(format!("{}: unknown key `{k}`", path.display()));
                }
                table.insert(k, v);
            }
        }
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            if !table.contains_key(&key) {
                continue;
            }
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .ok_or_else(|| format!("{name}: cannot parse `{raw}`"))?;
            table.insert(key, value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rel_tol > 0.0) || !(self.search_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if !(self.eps0 > 0.0) || !(self.nu0 > 0.0) {
            return Err("ladder origins must be positive".into());
        }
        if self.count < 3 || self.eps_count < 3 {
            return Err("ladder counts must be at least 3".into());
        }
        if self.grid < 2 {
            return Err("grid must have at least 2 points per side".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "rel_tol = 1e-6\ncount = 4\n").unwrap();
        let env = vec![("SUPERCURVE_COUNT".to_string(), "6".to_string()), ("OTHER".to_string(), "1".to_string())];
        let cfg = RunConfig::load(Some(&path), &env).unwrap();
        assert_eq!(cfg.rel_tol, 1e-6);
        assert_eq!(cfg.count, 6);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn rejects_short_ladders() {
        let env = vec![("SUPERCURVE_COUNT".to_string(), "2".to_string())];
        assert!(RunConfig::load(None, &env).is_err());
    }
}
