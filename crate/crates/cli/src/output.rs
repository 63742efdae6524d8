//! Output files shared by all experiments.

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

/// Writes `<output>/meta.json`: the resolved config, its hash, the toolkit
/// version and whatever the experiment adds.
pub fn write_meta(cfg: &ExperimentConfig, extra: Value) -> Result<()> {
    let mut meta = json!({
        "experiment": cfg.experiment,
        "config": cfg,
        "config_sha256": cfg.hash(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Some(m), Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let path = cfg.output.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
