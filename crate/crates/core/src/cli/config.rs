//! Experiment configuration. A run is specified by a TOML file; every
//! omitted field is filled with a default and the fully resolved result is
//! written back as `config.snapshot`, so re-parsing a snapshot reproduces
//! the in-memory config exactly.

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, TransformKind};
use crate::optim::AdamConfig;
use crate::tasks::diagnostics::SliceSpec;
use crate::tasks::fit::FitParams;
use crate::tasks::{ImageContent, ImageTask, SdfShape, SdfTask, StripeTask, Task};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

/// Parse layer: every field optional, unknown keys rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub task: Option<RawTask>,
    pub model: Option<RawModel>,
    pub optim: Option<RawOptim>,
    pub slice: Option<RawSlice>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTask {
    pub kind: Option<String>,
    pub size: Option<usize>,
    pub sampling_factor: Option<usize>,
    pub band_width: Option<usize>,
    pub shape: Option<String>,
    pub content: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub kind: Option<String>,
    pub feature_width: Option<usize>,
    pub num_levels: Option<usize>,
    pub log2_table_size: Option<u32>,
    pub base_resolution: Option<usize>,
    pub growth_factor: Option<f64>,
    pub pe_num_freqs: Option<usize>,
    pub transform_num_freqs: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub siren_w0: Option<f64>,
    pub transform: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOptim {
    pub lr: Option<f64>,
    pub table_lr: Option<f64>,
    pub iters: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_interval: Option<usize>,
    pub cosine_decay: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSlice {
    pub dim_x: Option<usize>,
    pub dim_y: Option<usize>,
    pub fixed: Option<Vec<f64>>,
    pub samples: Option<usize>,
}

/// Fully resolved configuration; serializing it yields the snapshot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub seed: u64,
    pub output_dir: String,
    pub task: TaskSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<SliceSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSection {
    pub kind: String,
    /// Points for stripe, square side for image, eval-grid side for sdf.
    pub size: usize,
    pub sampling_factor: usize,
    pub band_width: usize,
    pub shape: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSection {
    pub kind: String,
    pub feature_width: usize,
    pub num_levels: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub pe_num_freqs: usize,
    pub transform_num_freqs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub siren_w0: f64,
    pub transform: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimSection {
    pub lr: f64,
    pub table_lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub cosine_decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceSection {
    pub dim_x: usize,
    pub dim_y: usize,
    /// Pinned values for unswept trunk inputs; empty means all zeros.
    pub fixed: Vec<f64>,
    pub samples: usize,
}

/// Reads, overrides, resolves and validates a config file.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse(&text, overrides)
}

/// Parses config text, applying dotted-path overrides before validation.
pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Config> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    for (key, value) in overrides {
        apply_override(&mut table, key, value)?;
    }
    let raw: RawConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("config field error: {e}")))?;
    resolve(raw)
}

/// Sets `key` (a dotted path like `optim.lr`) to `value`, creating
/// intermediate tables as needed. Values parse as integer, float, bool or
/// string, in that order.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override '{key}' descends into a non-table value"))
            })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(value));
    Ok(())
}

/// Largest frequency count whose top frequency 2^(L-1)*pi stays strictly
/// below the Nyquist rate pi*nodes of a training lattice with that many
/// nodes per unit interval.
fn band_limit(nodes: usize, cap: usize) -> usize {
    (nodes.max(2).ilog2() as usize).min(cap)
}

fn parse_override_value(s: &str) -> toml::Value {
    if let Ok(v) = s.parse::<i64>() {
        toml::Value::Integer(v)
    } else if let Ok(v) = s.parse::<f64>() {
        toml::Value::Float(v)
    } else if let Ok(v) = s.parse::<bool>() {
        toml::Value::Boolean(v)
    } else {
        toml::Value::String(s.to_string())
    }
}

fn resolve(raw: RawConfig) -> Result<Config> {
    let mut missing = Vec::new();
    if raw.seed.is_none() {
        missing.push("seed");
    }
    if raw.output_dir.is_none() {
        missing.push("output_dir");
    }
    let task_kind = raw.task.as_ref().and_then(|t| t.kind.clone());
    if task_kind.is_none() {
        missing.push("task.kind");
    }
    let model_kind = raw.model.as_ref().and_then(|m| m.kind.clone());
    if model_kind.is_none() {
        missing.push("model.kind");
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing required config fields: {}",
            missing.join(", ")
        )));
    }
    let task_kind = task_kind.unwrap();
    let rt = raw.task.unwrap_or_default();
    let rm = raw.model.unwrap_or_default();
    let ro = raw.optim.unwrap_or_default();

    let (size, batch_size, eval_interval) = match task_kind.as_str() {
        "stripe" => (256, 0, 100),
        "image" => (64, 0, 100),
        "sdf" => (64, 10_000, 500),
        other => {
            return Err(Error::Config(format!(
                "unknown task kind '{other}' (expected stripe, image, sdf)"
            )))
        }
    };

    let task = TaskSection {
        kind: task_kind,
        size: rt.size.unwrap_or(size),
        sampling_factor: rt.sampling_factor.unwrap_or(4),
        band_width: rt.band_width.unwrap_or(32),
        shape: rt.shape.unwrap_or_else(|| "sphere".into()),
        content: rt.content.unwrap_or_else(|| "procedural".into()),
    };
    match task.shape.as_str() {
        "sphere" | "torus" => {}
        other => {
            return Err(Error::Config(format!(
                "unknown sdf shape '{other}' (expected sphere, torus)"
            )))
        }
    }
    match task.content.as_str() {
        "procedural" | "constant" => {}
        other => {
            return Err(Error::Config(format!(
                "unknown image content '{other}' (expected procedural, constant)"
            )))
        }
    }

    let defaults = ModelConfig::default();
    // Positional-encoding band capped at the training lattice's Nyquist
    // rate: a frequency 2^j*pi with 2^j >= lattice nodes aliases to a
    // constant on every training point yet flips sign on held-out points,
    // so it memorizes without constraining interpolation. The SDF task
    // trains on continuous random points and keeps the full band.
    let pe_default = match task.kind.as_str() {
        "stripe" => band_limit(task.size / 2, defaults.pe_num_freqs),
        "image" => {
            let stride = ((task.sampling_factor as f64).sqrt().round() as usize).max(1);
            band_limit(task.size / stride, defaults.pe_num_freqs)
        }
        _ => defaults.pe_num_freqs,
    };
    // The T branch sits well below even that: it is a smooth coordinate
    // reparameterization, and any frequency that can bend between adjacent
    // training points lets T memorize the train split instead of ordering
    // it. Detail is the hash features' job.
    let transform_default = pe_default.saturating_sub(4).max(1);
    let model = ModelSection {
        kind: model_kind.unwrap(),
        feature_width: rm.feature_width.unwrap_or(defaults.feature_width),
        num_levels: rm.num_levels.unwrap_or(defaults.num_levels),
        log2_table_size: rm.log2_table_size.unwrap_or(defaults.log2_table_size),
        base_resolution: rm.base_resolution.unwrap_or(defaults.base_resolution),
        growth_factor: rm.growth_factor.unwrap_or(defaults.growth_factor),
        pe_num_freqs: rm.pe_num_freqs.unwrap_or(pe_default),
        transform_num_freqs: rm.transform_num_freqs.unwrap_or(transform_default),
        hidden_layers: rm.hidden_layers.unwrap_or(defaults.hidden_layers),
        hidden_width: rm.hidden_width.unwrap_or(defaults.hidden_width),
        siren_w0: rm.siren_w0.unwrap_or(defaults.siren_w0),
        transform: rm.transform.unwrap_or_else(|| defaults.transform.to_string()),
    };
    ModelKind::from_str(&model.kind)?;
    TransformKind::from_str(&model.transform)?;

    let adam = AdamConfig::default();
    let optim = OptimSection {
        lr: ro.lr.unwrap_or(adam.lr),
        table_lr: ro.table_lr.unwrap_or(adam.table_lr),
        iters: ro.iters.unwrap_or(3000),
        batch_size: ro.batch_size.unwrap_or(batch_size),
        eval_interval: ro.eval_interval.unwrap_or(eval_interval),
        cosine_decay: ro.cosine_decay.unwrap_or(false),
    };
    if optim.iters == 0 {
        return Err(Error::Config("optim.iters must be at least 1".into()));
    }
    if !(optim.lr > 0.0) || !(optim.table_lr > 0.0) {
        return Err(Error::Config("learning rates must be positive".into()));
    }
    if task.kind == "sdf" && optim.batch_size < 2 {
        return Err(Error::Config("sdf training needs optim.batch_size >= 2".into()));
    }

    let slice = raw.slice.map(|rs| SliceSection {
        dim_x: rs.dim_x.unwrap_or(0),
        dim_y: rs.dim_y.unwrap_or(1),
        fixed: rs.fixed.unwrap_or_default(),
        samples: rs.samples.unwrap_or(128),
    });
    if let Some(s) = &slice {
        if s.samples < 2 {
            return Err(Error::Config("slice.samples must be at least 2".into()));
        }
        if s.dim_x == s.dim_y {
            return Err(Error::Config("slice.dim_x and slice.dim_y must differ".into()));
        }
    }

    Ok(Config {
        seed: raw.seed.unwrap(),
        output_dir: raw.output_dir.unwrap(),
        task,
        model,
        optim,
        slice,
    })
}

/// The resolved config as TOML; this is the `config.snapshot` artifact.
pub fn snapshot(cfg: &Config) -> String {
    toml::to_string(cfg).expect("config serializes")
}

impl Config {
    pub fn build_task(&self) -> Result<Task> {
        match self.task.kind.as_str() {
            "stripe" => Ok(Task::Stripe(StripeTask::new(self.task.size, self.task.band_width)?)),
            "image" => {
                let content = match self.task.content.as_str() {
                    "constant" => ImageContent::Constant,
                    _ => ImageContent::Procedural,
                };
                Ok(Task::Image(ImageTask::with_content(
                    content,
                    self.task.size,
                    self.task.size,
                    self.task.sampling_factor,
                )?))
            }
            "sdf" => {
                let shape = match self.task.shape.as_str() {
                    "torus" => SdfShape::torus(),
                    _ => SdfShape::sphere(),
                };
                Ok(Task::Sdf(SdfTask::new(shape, self.task.size, self.optim.batch_size)?))
            }
            other => Err(Error::Config(format!("unknown task kind '{other}'"))),
        }
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::from_str(&self.model.kind)
    }

    pub fn model_config(&self, task: &Task) -> Result<ModelConfig> {
        Ok(ModelConfig {
            feature_width: self.model.feature_width,
            table_resolution: task.table_resolution(),
            num_levels: self.model.num_levels,
            log2_table_size: self.model.log2_table_size,
            base_resolution: self.model.base_resolution,
            growth_factor: self.model.growth_factor,
            pe_num_freqs: self.model.pe_num_freqs,
            transform_num_freqs: self.model.transform_num_freqs,
            hidden_layers: self.model.hidden_layers,
            hidden_width: self.model.hidden_width,
            siren_w0: self.model.siren_w0,
            transform: TransformKind::from_str(&self.model.transform)?,
        })
    }

    pub fn fit_params(&self) -> FitParams {
        FitParams {
            iters: self.optim.iters,
            batch_size: self.optim.batch_size,
            eval_interval: self.optim.eval_interval,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.optim.lr,
                table_lr: self.optim.table_lr,
                cosine_decay: self.optim.cosine_decay,
                total_iters: self.optim.iters,
                ..AdamConfig::default()
            },
            config_snapshot: snapshot(self),
        }
    }

    /// The slice section as a runtime spec, widened to the trunk width.
    pub fn slice_spec(&self, trunk_width: usize) -> Result<Option<(SliceSpec, usize)>> {
        let Some(s) = &self.slice else { return Ok(None) };
        let fixed = if s.fixed.is_empty() {
            vec![0.0; trunk_width]
        } else if s.fixed.len() == trunk_width {
            s.fixed.clone()
        } else {
            return Err(Error::Config(format!(
                "slice.fixed has {} values but the trunk takes {trunk_width}",
                s.fixed.len()
            )));
        };
        Ok(Some((SliceSpec { dim_x: s.dim_x, dim_y: s.dim_y, fixed }, s.samples)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        output_dir = "out/x"
        [task]
        kind = "stripe"
        [model]
        kind = "diner"
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.task.size, 256);
        assert_eq!(cfg.task.band_width, 32);
        assert_eq!(cfg.optim.iters, 3000);
        assert_eq!(cfg.optim.batch_size, 0);
        assert_eq!(cfg.optim.eval_interval, 100);
        assert_eq!(cfg.model.feature_width, 2);
        assert!(cfg.slice.is_none());
    }

    #[test]
    fn sdf_defaults_differ() {
        let cfg = parse(
            "seed = 1\noutput_dir = \"o\"\n[task]\nkind = \"sdf\"\n[model]\nkind = \"rhino_ngp\"",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.optim.batch_size, 10_000);
        assert_eq!(cfg.optim.eval_interval, 500);
        assert_eq!(cfg.task.size, 64);
    }

    #[test]
    fn missing_fields_are_listed_together() {
        let err = parse("[task]\nsize = 8", &[]).unwrap_err();
        let msg = err.to_string();
        for field in ["seed", "output_dir", "task.kind", "model.kind"] {
            assert!(msg.contains(field), "{msg} missing {field}");
        }
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let cfg = parse(MINIMAL, &[("optim.lr".into(), "0.005".into())]).unwrap();
        let snap = snapshot(&cfg);
        let reparsed = parse(&snap, &[]).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(snap, snapshot(&reparsed));
    }

    #[test]
    fn overrides_take_precedence_and_parse_types() {
        let overrides = vec![
            ("seed".to_string(), "99".to_string()),
            ("optim.cosine_decay".to_string(), "true".to_string()),
            ("optim.lr".to_string(), "0.5".to_string()),
            ("model.transform".to_string(), "identity".to_string()),
            ("slice.samples".to_string(), "16".to_string()),
        ];
        let cfg = parse(MINIMAL, &overrides).unwrap();
        assert_eq!(cfg.seed, 99);
        assert!(cfg.optim.cosine_decay);
        assert_eq!(cfg.optim.lr, 0.5);
        assert_eq!(cfg.model.transform, "identity");
        assert_eq!(cfg.slice.as_ref().unwrap().samples, 16);
        assert_eq!(cfg.slice.as_ref().unwrap().dim_x, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(&format!("{MINIMAL}\n[optim]\nlearning_rate = 0.1"), &[]).unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn bad_kinds_are_rejected() {
        for (key, value) in [
            ("task.kind", "video"),
            ("model.kind", "nerf"),
            ("model.transform", "conv"),
            ("task.shape", "cube"),
            ("task.content", "photo"),
        ] {
            let err = parse(MINIMAL, &[(key.into(), value.into())]).unwrap_err();
            assert_eq!(err.kind(), "config", "{key}={value}");
        }
    }

    #[test]
    fn zero_iters_is_rejected() {
        let err = parse(MINIMAL, &[("optim.iters".into(), "0".into())]).unwrap_err();
        assert!(err.to_string().contains("iters"));
    }

    #[test]
    fn sdf_zero_batch_is_rejected() {
        let err = parse(
            "seed = 1\noutput_dir = \"o\"\n[task]\nkind = \"sdf\"\n[model]\nkind = \"ngp\"\n[optim]\nbatch_size = 0",
            &[],
        )
        .unwrap_err();
        assert!(err.to_string().contains("batch_size"));
    }

    #[test]
    fn build_task_matches_kind() {
        let cfg = parse(MINIMAL, &[]).unwrap();
        let task = cfg.build_task().unwrap();
        assert_eq!(task.kind_name(), "stripe");
        assert_eq!(task.table_resolution(), vec![129]);
        let cfg = parse(MINIMAL, &[("task.kind".into(), "image".into())]).unwrap();
        assert_eq!(cfg.build_task().unwrap().table_resolution(), vec![33, 33]);
    }
}
