//! Subcommand implementations shared by the binary and the test suites.

use crate::bridge::{BridgeEnvironment, BridgeSpec};
use crate::config::{config_hash, load_config, EnvConfig, FeatureSource, RunConfig};
use crate::error::CliError;
use crate::reports;
use crate::snapshot_io::{read_snapshot, write_snapshot};
use beamopt::locenv::{EnvSnapshot, LocalizationEnv};
use beamopt::search::{
    epsilon_greedy_search, exhaustive_search, random_search, Environment, FeatureProvider,
    IdFeatures, SearchResult, TableFeatures,
};
use beamopt::space::equidistant_ids;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

const SNAPSHOT_FILE: &str = "snapshot.bin";

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Wall-clock sidecar; every data file stays timestamp-free so identical
/// runs stay byte-identical.
fn write_run_meta(out: &Path, command: &str) -> Result<(), CliError> {
    let timestamp = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "unix_time": timestamp,
        "tool_version": reports::tool_version(),
    });
    write_file(&out.join("run_meta.json"), &format!("{meta:#}\n"))
}

/// Builds the frozen environment snapshot plus its beam-statistics CSV.
pub fn cmd_gen_env(config_path: &Path, out: &Path) -> Result<String, CliError> {
    let config = load_config(config_path)?;
    let hash = config_hash(&config);
    let EnvConfig::BuiltinLoc(loc) = &config.env else {
        return Err(CliError::Config(
            "gen-env needs a builtin-loc environment (a bridge has no snapshot)".into(),
        ));
    };
    let space = config.space.to_space()?;
    let params = loc.to_snapshot_params(space);
    let snapshot = EnvSnapshot::build(params)?;
    std::fs::create_dir_all(out)?;
    write_snapshot(&out.join(SNAPSHOT_FILE), &snapshot)?;
    write_file(
        &out.join("beam_stats.csv"),
        &reports::with_provenance(&reports::stats_csv(&snapshot.stats), &hash),
    )?;
    if loc.export_map_csv {
        write_file(
            &out.join("map_cloud.csv"),
            &reports::with_provenance(&reports::map_csv(&snapshot.map.cloud), &hash),
        )?;
        // one full-resolution evaluation scan for visual inspection
        if let Some(case) = snapshot.cases.first() {
            write_file(
                &out.join("sample_scan.csv"),
                &reports::with_provenance(&reports::cloud_csv(&case.scan), &hash),
            )?;
        }
    }
    let meta = serde_json::json!({
        "tool_version": reports::tool_version(),
        "config_hash": hash,
        "snapshot_hash": snapshot.content_hash(),
        "map_points": snapshot.map.cloud.len(),
        "eval_poses": snapshot.cases.len(),
        "beams": snapshot.params.scanner.num_beams,
    });
    write_file(&out.join("snapshot_meta.json"), &format!("{meta:#}\n"))?;
    write_run_meta(out, "gen-env")?;
    println!(
        "snapshot {} ({} map points, {} eval poses) -> {}",
        snapshot.content_hash(),
        snapshot.map.cloud.len(),
        snapshot.cases.len(),
        out.join(SNAPSHOT_FILE).display()
    );
    Ok(snapshot.content_hash().to_string())
}

enum Backend {
    Builtin(Arc<EnvSnapshot>),
    Bridge(Box<BridgeEnvironment>),
}

impl Backend {
    fn environment(&self) -> Box<dyn Environment + '_> {
        match self {
            Backend::Builtin(snapshot) => Box::new(LocalizationEnv::new(snapshot.clone())),
            Backend::Bridge(bridge) => Box::new(BridgeRef(bridge)),
        }
    }
}

/// Thin borrow adapter so the boxed bridge can be used as an environment.
struct BridgeRef<'a>(&'a BridgeEnvironment);

impl Environment for BridgeRef<'_> {
    fn value(&self, config: &beamopt::space::BeamConfig) -> Result<f64, beamopt::search::EnvError> {
        self.0.value(config)
    }

    fn descriptor(&self) -> String {
        self.0.descriptor()
    }
}

fn open_backend(config: &RunConfig, config_dir: &Path) -> Result<Backend, CliError> {
    match &config.env {
        EnvConfig::BuiltinLoc(loc) => {
            let path = loc.snapshot.as_ref().ok_or_else(|| {
                CliError::Config(
                    "env.snapshot missing: run gen-env first and point env.snapshot at its output"
                        .into(),
                )
            })?;
            let resolved = if path.is_relative() {
                config_dir.join(path)
            } else {
                path.clone()
            };
            let snapshot = read_snapshot(&resolved)?;
            let space = config.space.to_space()?;
            if snapshot.params.space != space {
                return Err(CliError::Config(format!(
                    "snapshot space ({}, {}, {}) does not match the config space ({}, {}, {})",
                    snapshot.params.space.num_beams(),
                    snapshot.params.space.config_len(),
                    snapshot.params.space.max_step(),
                    space.num_beams(),
                    space.config_len(),
                    space.max_step(),
                )));
            }
            Ok(Backend::Builtin(Arc::new(snapshot)))
        }
        EnvConfig::Bridge(bridge) => {
            let cache_path = resolve_cache_path(bridge.cache.clone());
            let spec = BridgeSpec {
                command: bridge.command.clone(),
                timeout: std::time::Duration::from_secs(bridge.timeout_secs),
                cache_path,
                retries: bridge.retries,
                max_parallel: bridge.max_parallel,
            };
            let env = BridgeEnvironment::new(spec)
                .map_err(|e| CliError::Environment(e.to_string()))?;
            Ok(Backend::Bridge(Box::new(env)))
        }
    }
}

/// `BEAMOPT_CACHE_DIR` redirects the bridge cache directory.
fn resolve_cache_path(configured: Option<PathBuf>) -> Option<PathBuf> {
    resolve_cache_path_with(std::env::var_os("BEAMOPT_CACHE_DIR"), configured)
}

fn resolve_cache_path_with(
    override_dir: Option<std::ffi::OsString>,
    configured: Option<PathBuf>,
) -> Option<PathBuf> {
    match override_dir {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let name = configured
                .as_ref()
                .and_then(|p| p.file_name().map(|n| n.to_os_string()))
                .unwrap_or_else(|| "bridge_cache.jsonl".into());
            Some(dir.join(name))
        }
        None => configured,
    }
}


fn feature_provider(
    source: &FeatureSource,
    backend: &Backend,
    config_dir: &Path,
) -> Result<Box<dyn FeatureProvider>, CliError> {
    match (source, backend) {
        (FeatureSource::Auto, Backend::Builtin(snapshot)) => Ok(Box::new(OwnedTableFeatures {
            table: snapshot.stats.clone(),
        })),
        (FeatureSource::Auto, Backend::Bridge(_)) | (FeatureSource::BeamIds, _) => {
            Ok(Box::new(IdFeatures))
        }
        (FeatureSource::StatsCsv { path }, _) => {
            let resolved = if path.is_relative() {
                config_dir.join(path)
            } else {
                path.clone()
            };
            let text = std::fs::read_to_string(&resolved).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", resolved.display()))
            })?;
            Ok(Box::new(OwnedTableFeatures {
                table: reports::parse_stats_csv(&text)?,
            }))
        }
    }
}

/// [`TableFeatures`] over an owned statistics table.
struct OwnedTableFeatures {
    table: beamopt::features::StatsTable,
}

impl FeatureProvider for OwnedTableFeatures {
    fn dim(&self, config_len: usize) -> usize {
        TableFeatures { table: &self.table }.dim(config_len)
    }

    fn features(
        &self,
        config: &beamopt::space::BeamConfig,
    ) -> Result<beamopt::features::FeatureVector, beamopt::features::FeatureError> {
        TableFeatures { table: &self.table }.features(config)
    }
}

/// Runs one search method and writes its outputs into `out`. Returns the
/// search result for `egs` and `random`; exhaustive runs write a value
/// table instead and return `None`.
pub fn cmd_search(
    config_path: &Path,
    method: &str,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<Option<SearchResult>, CliError> {
    let config = load_config(config_path)?;
    let hash = config_hash(&config);
    let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let space = config.space.to_space()?;
    let backend = open_backend(&config, &config_dir)?;
    let env = backend.environment();
    let params = config.search.to_params(seed_override);

    std::fs::create_dir_all(out)?;
    let result = match method {
        "egs" => {
            let provider = feature_provider(&config.search.features, &backend, &config_dir)?;
            epsilon_greedy_search(
                env.as_ref(),
                &space,
                &params,
                provider.as_ref(),
                &config.search.predictor.to_config(),
            )?
        }
        "random" => random_search(env.as_ref(), &space, params.budget, params.seed)?,
        "exhaustive" => {
            let table = exhaustive_search(env.as_ref(), &space, None)?;
            write_file(
                &out.join("exhaustive_table.csv"),
                &reports::with_provenance(&reports::table_csv(&table), &hash),
            )?;
            let (best, best_value) = table.best();
            let meta = serde_json::json!({
                "tool_version": reports::tool_version(),
                "config_hash": hash,
                "env_descriptor": table.env_descriptor,
                "configurations": table.entries.len(),
                "best_config": best.canonical_key(),
                "best_value": best_value,
            });
            write_file(&out.join("exhaustive_result.json"), &format!("{meta:#}\n"))?;
            write_run_meta(out, "search")?;
            println!(
                "exhaustive: {} configurations, best {} value {}",
                table.entries.len(),
                best.canonical_key(),
                best_value
            );
            return Ok(None);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown method {other:?}; expected egs, random, or exhaustive"
            )))
        }
    };

    let stem = format!("{}_seed{}", method, params.seed);
    write_file(
        &out.join(format!("{stem}_result.json")),
        &reports::result_json(&result, &hash),
    )?;
    write_file(
        &out.join(format!("{stem}_history.csv")),
        &reports::with_provenance(&reports::history_csv(&result), &hash),
    )?;
    write_run_meta(out, "search")?;
    println!(
        "{}: best {} value {} after {} environment requests",
        result.method,
        result.best.canonical_key(),
        result.best_value,
        result.env_calls
    );
    Ok(Some(result))
}

/// Localizes the whole route for a configuration plus the equidistant and
/// full-sensor reference rows.
pub fn cmd_eval(snapshot_path: &Path, beam_ids: &str, out: &Path) -> Result<(), CliError> {
    let snapshot = read_snapshot(snapshot_path)?;
    let mut ids: Vec<u32> = beam_ids
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| CliError::Config(format!("bad beam id {s:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    ids.sort_unstable();

    let requested = snapshot.evaluate_route(&ids)?;
    let space = snapshot.params.space;
    let equidistant = equidistant_ids(space.num_beams(), space.config_len());
    let equidistant_report = snapshot.evaluate_route(&equidistant)?;
    let full = snapshot.full_ids();
    let full_report = snapshot.evaluate_route(&full)?;

    std::fs::create_dir_all(out)?;
    let snapshot_hash = snapshot.content_hash().to_string();
    write_file(
        &out.join("eval_route.csv"),
        &reports::with_provenance(&reports::route_csv(&requested), &snapshot_hash),
    )?;

    let mut summary = String::from(
        "row          beam_ids           acc1      acc2      acc3      value\n",
    );
    for (name, ids, report) in [
        ("requested", &ids, &requested),
        ("equidistant", &equidistant, &equidistant_report),
        ("full-sensor", &full, &full_report),
    ] {
        let key = ids
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join("-");
        summary.push_str(&format!(
            "{:<12} {:<18} {:<9.4} {:<9.4} {:<9.4} {:.6}\n",
            name, key, report.accuracies[0], report.accuracies[1], report.accuracies[2],
            report.value
        ));
    }
    write_file(
        &out.join("eval_summary.txt"),
        &reports::with_provenance(&summary, &snapshot_hash),
    )?;
    write_run_meta(out, "eval")?;
    print!("{summary}");
    Ok(())
}

/// Aggregates result files into best-so-far curves and a summary table.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("report needs at least one result file".into()));
    }
    let mut loaded = Vec::new();
    for path in inputs {
        let file = reports::read_result(path)?;
        loaded.push((
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            file,
        ));
    }
    let descriptor = loaded[0].1.result.env_descriptor.clone();
    for (name, file) in &loaded {
        if file.result.env_descriptor != descriptor {
            return Err(CliError::Config(format!(
                "mixed environments: {name} ran against {:?}, expected {:?}",
                file.result.env_descriptor, descriptor
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    for (name, file) in &loaded {
        write_file(
            &out.join(format!("best_curve_{name}.csv")),
            &reports::with_provenance(&reports::best_so_far_csv(&file.result), &file.config_hash),
        )?;
    }
    let refs: Vec<(String, &reports::ResultFile)> = loaded
        .iter()
        .map(|(name, file)| (name.clone(), file))
        .collect();
    let summary = reports::summary_text(&refs);
    write_file(
        &out.join("summary.txt"),
        &reports::with_provenance(&summary, &loaded[0].1.config_hash),
    )?;
    write_run_meta(out, "report")?;
    print!("{summary}");
    Ok(())
}
