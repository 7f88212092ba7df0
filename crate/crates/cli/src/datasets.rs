//! Dataset resolution: built-in schemas for the UCI files, synthetic stand-ins,
//! and the cached windowed form.

use std::path::{Path, PathBuf};

use scvae_core::data::{
    ingest_csv, load_windows, make_windows, save_windows, standardize, synth_cnc, Schema,
};
use scvae_core::{RawSeries, WindowedDataset};
use serde::{Deserialize, Serialize};

use crate::config::{content_hash, sha256_hex, RunConfig};
use crate::error::{CliError, CliResult, ExitKind, ResultExt};

pub const OCCUPANCY_SCHEMA: &str = include_str!("../schemas/occupancy.schema");
pub const OZONE_SCHEMA: &str = include_str!("../schemas/ozone.schema");

/// Parameters of a synthetic CNC-style series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub features: usize,
    pub ratio: f64,
    pub seed: u64,
}

/// Stand-ins for the private CNC machine datasets, plus an occupancy-shaped
/// series for hardware benchmarks when the UCI file is absent.
pub fn synthetic(name: &str) -> Option<SynthSpec> {
    let spec = |rows, features, seed| SynthSpec {
        rows,
        features,
        ratio: 0.05,
        seed,
    };
    match name {
        "cnc_a" => Some(spec(2000, 31, 101)),
        "cnc_b" => Some(spec(2000, 43, 102)),
        "cnc_c" => Some(spec(2000, 43, 103)),
        "cnc_d" => Some(spec(2000, 37, 104)),
        "synthetic_occupancy" => Some(SynthSpec {
            rows: 8143,
            features: 5,
            ratio: 0.2123,
            seed: 7,
        }),
        _ => None,
    }
}

pub fn builtin_schema(name: &str) -> Option<&'static str> {
    match name {
        "occupancy" => Some(OCCUPANCY_SCHEMA),
        "ozone" => Some(OZONE_SCHEMA),
        _ => None,
    }
}

/// `$SCVAE_DATA_DIR`, or `data/` relative to the working directory.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SCVAE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn default_file(name: &str) -> Option<PathBuf> {
    match name {
        "occupancy" => Some(data_dir().join("occupancy").join("datatraining.txt")),
        "ozone" => Some(data_dir().join("ozone").join("onehr.data")),
        _ => None,
    }
}

/// Where a dataset comes from, resolved and fingerprinted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Source {
    File {
        path: PathBuf,
        schema: String,
        sha256: String,
    },
    Synthetic(SynthSpec),
}

pub fn resolve(cfg: &RunConfig) -> CliResult<Source> {
    if cfg.data_path.is_none() && cfg.schema.is_none() {
        if let Some(spec) = synthetic(&cfg.dataset) {
            return Ok(Source::Synthetic(spec));
        }
    }
    let schema = match (&cfg.schema, builtin_schema(&cfg.dataset)) {
        (Some(p), _) => std::fs::read_to_string(p)
            .or_kind(ExitKind::Io, format!("reading schema {}", p.display()))?,
        (None, Some(s)) => s.to_string(),
        (None, None) => {
            return Err(CliError::usage(format!(
                "dataset `{}` has no built-in schema; pass `schema` and `data_path` in the config",
                cfg.dataset
            )))
        }
    };
    let path = match (&cfg.data_path, default_file(&cfg.dataset)) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => {
            return Err(CliError::usage(format!(
                "dataset `{}` needs `data_path`",
                cfg.dataset
            )))
        }
    };
    let bytes = std::fs::read(&path).map_err(|e| {
        CliError::new(
            ExitKind::Io,
            anyhow::Error::new(e).context(format!(
                "dataset `{}` not found at {} (set SCVAE_DATA_DIR or `data_path`)",
                cfg.dataset,
                path.display()
            )),
        )
    })?;
    Ok(Source::File {
        path,
        schema,
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_series(source: &Source) -> CliResult<RawSeries> {
    match source {
        Source::File { path, schema, .. } => {
            let schema = Schema::parse(schema)?;
            Ok(ingest_csv(path, &schema)?)
        }
        Source::Synthetic(s) => Ok(synth_cnc(s.rows, s.features, s.ratio, s.seed)?.0),
    }
}

/// Standardized, stride-1 windows.
pub fn build_windows(source: &Source, name: &str, tw: usize) -> CliResult<WindowedDataset> {
    let series = load_series(source)?;
    let (z, params) = standardize(&series)?;
    let mut ds = make_windows(&z, tw, 1)?;
    ds.standardization = Some(params);
    ds.provenance = match source {
        Source::File { path, sha256, .. } => {
            format!("{name}: {} (sha256 {sha256})", path.display())
        }
        Source::Synthetic(s) => format!(
            "{name}: synthetic rows={} features={} ratio={} seed={}",
            s.rows, s.features, s.ratio, s.seed
        ),
    };
    Ok(ds)
}

#[derive(Debug, Clone, Serialize)]
struct CacheKey<'a> {
    dataset: &'a str,
    source: &'a Source,
    tw: usize,
}

pub struct Prepared {
    pub dataset: WindowedDataset,
    pub cache_path: PathBuf,
    pub cache_hit: bool,
}

/// Windows for `cfg`, cached under `<out>/windows/<content hash>.bin`.
pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let source = resolve(cfg)?;
    let key = content_hash(&CacheKey {
        dataset: &cfg.dataset,
        source: &source,
        tw: cfg.tw,
    });
    let cache_path = cfg.out.join("windows").join(format!("{key}.bin"));
    if cache_path.exists() {
        match load_windows(&cache_path) {
            Ok(dataset) => {
                log::info!("window cache hit: {}", cache_path.display());
                return Ok(Prepared {
                    dataset,
                    cache_path,
                    cache_hit: true,
                });
            }
            Err(e) => log::warn!(
                "ignoring unreadable window cache {}: {e}",
                cache_path.display()
            ),
        }
    }
    let dataset = build_windows(&source, &cfg.dataset, cfg.tw)?;
    create_parent(&cache_path)?;
    save_windows(&dataset, &cache_path)?;
    Ok(Prepared {
        dataset,
        cache_path,
        cache_hit: false,
    })
}

pub fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .or_kind(ExitKind::Io, format!("creating {}", dir.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_parse_to_expected_feature_counts() {
        let occ = Schema::parse(OCCUPANCY_SCHEMA).unwrap();
        assert_eq!(occ.columns.len(), 8);
        assert_eq!(occ.feature_names().len(), 5);
        let oz = Schema::parse(OZONE_SCHEMA).unwrap();
        assert_eq!(oz.columns.len(), 74);
        assert_eq!(oz.feature_names().len(), 72);
    }

    #[test]
    fn occupancy_layout_ingests() {
        let text = "\"date\",\"Temperature\",\"Humidity\",\"Light\",\"CO2\",\"HumidityRatio\",\"Occupancy\"\n\
                    \"1\",\"2015-02-04 17:51:00\",23.18,27.272,426,721.25,0.00479298817650529,1\n\
                    \"2\",\"2015-02-04 17:51:59\",23.15,27.2675,429.5,714,0.00478344094931065,1\n";
        let s =
            scvae_core::data::ingest_str(text, &Schema::parse(OCCUPANCY_SCHEMA).unwrap()).unwrap();
        assert_eq!(s.num_rows(), 2);
        assert_eq!(
            s.row(0),
            &[23.18, 27.272, 426.0, 721.25, 0.00479298817650529]
        );
        assert_eq!(s.labels, Some(vec![1, 1]));
    }

    #[test]
    fn ozone_layout_forward_fills() {
        let row = |date: &str, first: &str, label: &str| {
            let mut cells = vec![date.to_string(), first.to_string()];
            cells.extend((0..71).map(|i| format!("{}", i as f64 * 0.5)));
            cells.push(label.into());
            cells.join(",")
        };
        let text = [row("1/1/1998", "0.8", "0.0"), row("1/2/1998", "?", "1.0")].join("\n");
        let s = scvae_core::data::ingest_str(&text, &Schema::parse(OZONE_SCHEMA).unwrap()).unwrap();
        assert_eq!(s.num_features(), 72);
        assert_eq!(s.row(1)[0], 0.8);
        assert_eq!(s.filled_cells, 1);
        assert_eq!(s.labels, Some(vec![0, 1]));
    }
}
