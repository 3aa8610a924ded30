//! `simulate`: config resolution, presets and table output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ivimpute::simulation::p_grid;
use ivimpute::{run_experiment, ExperimentRow, SimConfig};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "IVIMPUTE_SEED";

/// Published design: R = 5000, Δp = 0.005, p up to 0.8.
const PRESET_REPLICATIONS: f64 = 5000.0;
const PRESET_STEP: f64 = 0.005;
const PRESET_MAX_P: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperFig1,
    PaperFig2,
}

impl Preset {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "paper-fig1" => Ok(Preset::PaperFig1),
            "paper-fig2" => Ok(Preset::PaperFig2),
            other => Err(CliError::Validation(format!("unknown preset `{other}` (expected paper-fig1 or paper-fig2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// One experiment to run and where its table goes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Suffix distinguishing the tables of a multi-table run.
    pub label: Option<String>,
    pub config: SimConfig,
}

/// Flag values after parsing, before resolution.
#[derive(Debug, Clone, Default)]
pub struct SimulateRequest {
    pub config: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub p_grid: Option<Vec<f64>>,
    pub repl: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<TableFormat>,
    /// Raw value of [`SEED_ENV`], if set.
    pub env_seed: Option<String>,
}

/// Both presets run the same design and yield one table per sign of σ_uv.
/// Figure 1 reads the RMSE and standard-error columns, figure 2 the
/// rejection columns.
pub fn preset_tables(_preset: Preset, scale: f64) -> CliResult<Vec<Table>> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(CliError::Validation(format!("--scale must be positive, got {scale}")));
    }
    let replications = (PRESET_REPLICATIONS * scale).round().max(1.0) as usize;
    let grid = p_grid(PRESET_MAX_P, PRESET_STEP / scale);
    Ok([("pos", 0.3), ("neg", -0.3)]
        .into_iter()
        .map(|(label, sigma_uv)| Table {
            label: Some(format!("sigma_uv_{label}")),
            config: SimConfig { replications, sigma_uv, p_grid: grid.clone(), ..SimConfig::default() },
        })
        .collect())
}

fn read_config(path: &Path) -> CliResult<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: invalid config: {e}", path.display())))
}

/// Precedence, lowest first: defaults, config file or preset,
/// `IVIMPUTE_SEED`, command-line flags.
pub fn resolve(req: &SimulateRequest) -> CliResult<Vec<Table>> {
    if req.config.is_some() && req.preset.is_some() {
        return Err(CliError::Validation("--config and --preset are mutually exclusive".into()));
    }
    if req.scale.is_some() && req.preset.is_none() {
        return Err(CliError::Validation("--scale only applies to --preset".into()));
    }
    let mut tables = match (&req.config, req.preset) {
        (Some(path), _) => vec![Table { label: None, config: read_config(path)? }],
        (None, Some(preset)) => preset_tables(preset, req.scale.unwrap_or(1.0))?,
        (None, None) => vec![Table { label: None, config: SimConfig::default() }],
    };
    let env_seed = match &req.env_seed {
        Some(raw) => Some(raw.trim().parse::<u64>().map_err(|_| {
            CliError::Validation(format!("{SEED_ENV} must be an unsigned 64-bit integer, got `{raw}`"))
        })?),
        None => None,
    };
    for t in &mut tables {
        let c = &mut t.config;
        if let Some(s) = env_seed {
            c.seed = s;
        }
        if let Some(s) = req.seed {
            c.seed = s;
        }
        if let Some(g) = &req.p_grid {
            c.p_grid = g.clone();
        }
        if let Some(r) = req.repl {
            c.replications = r;
        }
        c.validate()?;
    }
    Ok(tables)
}

pub fn table_format(req: &SimulateRequest) -> TableFormat {
    req.format.unwrap_or_else(|| match req.out.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext == "json" => TableFormat::Json,
        _ => TableFormat::Csv,
    })
}

/// Output path of a table: the `--out` path itself, or with the table label
/// inserted before the extension.
pub fn table_path(out: &Path, label: Option<&str>) -> PathBuf {
    match label {
        None => out.to_path_buf(),
        Some(label) => {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let name = match out.extension() {
                Some(ext) => format!("{stem}_{label}.{}", ext.to_string_lossy()),
                None => format!("{stem}_{label}"),
            };
            out.with_file_name(name)
        }
    }
}

fn config_path(table: &Path) -> PathBuf {
    let stem = table.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    table.with_file_name(format!("{stem}.config.json"))
}

pub fn render_csv(rows: &[ExperimentRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
struct JsonTable<'a> {
    config: &'a SimConfig,
    rows: &'a [ExperimentRow],
}

pub fn render_json(config: &SimConfig, rows: &[ExperimentRow]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&JsonTable { config, rows }).expect("table serializes");
    out.push(b'\n');
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Runs every resolved table and writes its output. Returns the paths
/// written; an empty list means the table went to stdout.
pub fn simulate(req: &SimulateRequest) -> CliResult<Vec<PathBuf>> {
    let tables = resolve(req)?;
    if tables.len() > 1 && req.out.is_none() {
        return Err(CliError::Validation("presets write several tables and need --out".into()));
    }
    let format = table_format(req);
    // Fail on an unwritable destination before any replication runs.
    if let Some(out) = &req.out {
        for table in &tables {
            let path = table_path(out, table.label.as_deref());
            fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let mut written = Vec::new();
    for table in &tables {
        let config_json = serde_json::to_string(&table.config).expect("config serializes");
        log::info!("seed = {}", table.config.seed);
        eprintln!(
            "resolved config{}: {config_json}",
            table.label.as_deref().map(|l| format!(" ({l})")).unwrap_or_default()
        );
        let rows = run_experiment(&table.config)?;
        let bytes = match format {
            TableFormat::Csv => render_csv(&rows)?,
            TableFormat::Json => render_json(&table.config, &rows),
        };
        match &req.out {
            Some(out) => {
                let path = table_path(out, table.label.as_deref());
                write_file(&path, &bytes)?;
                if format == TableFormat::Csv {
                    let mut cfg = serde_json::to_vec_pretty(&table.config).expect("config serializes");
                    cfg.push(b'\n');
                    write_file(&config_path(&path), &cfg)?;
                }
                written.push(path);
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(&bytes)
                    .and_then(|_| stdout.flush())
                    .map_err(|e| CliError::Io(format!("stdout: {e}")))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_preset_has_coarse_grid_and_both_signs() {
        let tables = preset_tables(Preset::PaperFig1, 0.1).unwrap();
        assert_eq!(tables.len(), 2);
        for t in &tables {
            assert_eq!(t.config.replications, 500);
            assert_eq!(t.config.p_grid.len(), 17);
            assert_eq!(t.config.p_grid[1], 0.05);
        }
        assert_eq!(tables[0].config.sigma_uv, 0.3);
        assert_eq!(tables[1].config.sigma_uv, -0.3);
    }

    #[test]
    fn full_preset_matches_published_design() {
        let t = &preset_tables(Preset::PaperFig2, 1.0).unwrap()[0].config;
        assert_eq!((t.replications, t.n, t.instruments, t.p_grid.len()), (5000, 1000, 3, 161));
        assert_eq!((t.beta, t.phi, t.f_target), (0.5, 5.0, 100.0));
    }

    #[test]
    fn precedence_flag_over_env_over_config() {
        let mut req = SimulateRequest { env_seed: Some("7".into()), ..Default::default() };
        assert_eq!(resolve(&req).unwrap()[0].config.seed, 7);
        req.seed = Some(9);
        assert_eq!(resolve(&req).unwrap()[0].config.seed, 9);
        req.env_seed = Some("x".into());
        assert!(matches!(resolve(&req), Err(CliError::Validation(_))));
    }

    #[test]
    fn invalid_grid_names_the_field() {
        let req = SimulateRequest { p_grid: Some(vec![0.0, 1.0]), ..Default::default() };
        let msg = resolve(&req).unwrap_err().to_string();
        assert!(msg.contains("p_grid[1]"), "{msg}");
    }

    #[test]
    fn table_paths() {
        let out = Path::new("/tmp/run/fig.csv");
        assert_eq!(table_path(out, None), out);
        assert_eq!(table_path(out, Some("sigma_uv_neg")), Path::new("/tmp/run/fig_sigma_uv_neg.csv"));
        assert_eq!(config_path(out), Path::new("/tmp/run/fig.config.json"));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let row = ExperimentRow {
            p: 0.15,
            rmse: 1.0 / 3.0,
            mean_se_robust: 0.1 + 0.2,
            mean_se_conventional: 1e-300,
            rejection_robust: 0.0512,
            rejection_conventional: 1.0,
            mean_cc_f: 101.23456789012345,
            replications_used: 499,
        };
        let bytes = render_csv(std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "p,rmse,mean_se_robust,mean_se_conventional,rejection_robust,rejection_conventional,mean_cc_f,replications_used\n"
        ));
        let back: Vec<ExperimentRow> =
            csv::Reader::from_reader(bytes.as_slice()).deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, vec![row]);
    }
}
