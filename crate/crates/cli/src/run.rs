//! Subcommand execution, shared by fresh runs and manifest reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tsgan_core::data::{load_csv, synth_catchment, write_csv, SeriesDataset, WindowBatch};
use tsgan_core::forecast::{compare_experiments, ForecastModel};
use tsgan_core::gan::NoHook;
use tsgan_core::gradcheck;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::experiment::{build_corpus_from, train_arm, Corpus};
use crate::manifest::Manifest;
use crate::store;
use crate::tune::tune_gan;
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

pub const COMMANDS: &[&str] = &[
    "synth-data",
    "preprocess",
    "train-gan",
    "generate",
    "train-forecaster",
    "evaluate",
    "tune",
    "gradcheck",
];

/// A fully resolved subcommand: configuration, input files and extra arguments.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: String,
    pub config: RunConfig,
    pub out: PathBuf,
    /// Input files by role, e.g. `data`, `gan`, `model.plain`.
    pub inputs: BTreeMap<String, PathBuf>,
    pub args: BTreeMap<String, String>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    /// False when a check such as gradcheck failed.
    pub success: bool,
    pub manifest: Manifest,
}

impl Invocation {
    /// Rebuilds the invocation recorded in `manifest`, writing into `out`.
    pub fn from_manifest(manifest: &Manifest, out: PathBuf) -> Result<Self> {
        manifest.verify_inputs()?;
        Ok(Self {
            command: manifest.command.clone(),
            config: RunConfig::parse(&manifest.config)?,
            out,
            inputs: manifest
                .inputs
                .iter()
                .map(|i| (i.role.clone(), PathBuf::from(&i.path)))
                .collect(),
            args: manifest.args.iter().cloned().collect(),
        })
    }

    fn input(&self, role: &str) -> Result<&Path> {
        self.inputs
            .get(role)
            .map(PathBuf::as_path)
            .ok_or_else(|| HarnessError::Usage(format!("{} needs an input for `{role}`", self.command)))
    }

    fn arg<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.args
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| HarnessError::Usage(format!("invalid value `{v}` for --{key}")))
            })
            .transpose()
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    manifest.add_artifact(dir, name)
}

fn save_checkpoint(dir: &Path, name: &str, ck: &Checkpoint, manifest: &mut Manifest) -> Result<()> {
    write(dir, name, &ck.encode()?, manifest)
}

/// The raw series: the `data` input if given, otherwise synthesized from the config.
fn series(inv: &Invocation, manifest: &mut Manifest) -> Result<SeriesDataset> {
    match inv.inputs.get("data") {
        Some(path) => {
            manifest.add_input("data", path)?;
            Ok(load_csv(path)?)
        }
        None => Ok(synth_catchment(&inv.config.catchment(), inv.config.seed)?),
    }
}

fn corpus(inv: &Invocation, manifest: &mut Manifest) -> Result<Corpus> {
    let s = series(inv, manifest)?;
    build_corpus_from(&inv.config, &s)
}

/// Writes windows as `window,step,<channel>...` rows.
pub fn windows_csv(batch: &WindowBatch) -> String {
    let mut s = format!("window,step,{}\n", batch.channels().join(","));
    let c = batch.num_channels();
    for w in 0..batch.count() {
        for (t, row) in batch.window(w).chunks(c).enumerate() {
            let _ = write!(s, "{w},{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

/// Runs `inv`, writing artifacts and a manifest under `inv.out`.
pub fn execute(inv: &Invocation) -> Result<Outcome> {
    let cfg = &inv.config;
    cfg.validate()?;
    let out = inv.out.as_path();
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut m = Manifest::new(&inv.command, cfg);
    m.args = inv.args.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut success = true;

    let summary = match inv.command.as_str() {
        "synth-data" => {
            let ds = synth_catchment(&cfg.catchment(), cfg.seed)?;
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).map_err(|e| HarnessError::io(out.join("series.csv"), e))?;
            write(out, "series.csv", &buf, &mut m)?;
            let wet = ds.precipitation_mm.iter().filter(|&&p| p > 0.0).count();
            format!("synth-data: {} steps, {} wet, seed {} -> series.csv", ds.len(), wet, cfg.seed)
        }
        "preprocess" => {
            let c = corpus(inv, &mut m)?;
            let counts = [c.data.train.count(), c.data.wet_train.count(), c.data.test.count()];
            save_checkpoint(out, "prepared.ckpt", &store::prepared_checkpoint(cfg, &c.data.stats, counts), &mut m)?;
            format!(
                "preprocess: {} train windows ({} wet), {} test windows -> prepared.ckpt",
                counts[0], counts[1], counts[2]
            )
        }
        "train-gan" => {
            let c = corpus(inv, &mut m)?;
            let (model, log) = crate::experiment::train_gan_on(cfg, &c, &mut NoHook)?;
            save_checkpoint(out, "gan.ckpt", &store::gan_checkpoint(cfg, &model, &c.data.stats), &mut m)?;
            write(out, "train_log.csv", log.to_csv().as_bytes(), &mut m)?;
            let jsd = log.jsd_curve().last().map_or("n/a".to_string(), |(_, j)| format!("{j:.4}"));
            format!(
                "train-gan: {} generator steps on {} wet windows, final jsd {jsd} -> gan.ckpt",
                model.generator_steps,
                c.wet_pool.count()
            )
        }
        "generate" => {
            let path = inv.input("gan")?;
            m.add_input("gan", path)?;
            let (model, _) = store::gan_from_checkpoint(&Checkpoint::load(path)?)?;
            let count = inv.arg::<usize>("count")?.unwrap_or(cfg.augment_count);
            let batch = model.generate(count, cfg.seed)?;
            write(out, "windows.csv", windows_csv(&batch).as_bytes(), &mut m)?;
            format!("generate: {count} windows x 24 steps x {} channels -> windows.csv", batch.num_channels())
        }
        "train-forecaster" => {
            let c = corpus(inv, &mut m)?;
            let gan = match inv.inputs.get("gan") {
                Some(path) => {
                    m.add_input("gan", path)?;
                    Some(store::gan_from_checkpoint(&Checkpoint::load(path)?)?.0)
                }
                None => None,
            };
            let trained = train_arm(cfg, &c, cfg.augment_mode, gan.as_ref(), cfg.seed)?;
            let mode = cfg.augment_mode.as_str();
            let ck = store::forecaster_checkpoint(cfg, &trained.model, &c.data.stats, mode);
            save_checkpoint(out, "forecaster.ckpt", &ck, &mut m)?;
            let mut curve = String::from("epoch,train_mae,val_mae,best_val_mae\n");
            for e in &trained.curve {
                let _ = writeln!(curve, "{},{},{},{}", e.epoch, e.train_mae, e.val_mae, e.best_val_mae);
            }
            write(out, "curve.csv", curve.as_bytes(), &mut m)?;
            let best = trained.curve.last().map_or(f64::NAN, |e| e.best_val_mae);
            format!(
                "train-forecaster: mode {mode}, {} epochs, best validation mae {best:.4} at epoch {} -> forecaster.ckpt",
                trained.curve.len(),
                trained.best_epoch
            )
        }
        "evaluate" => {
            let c = corpus(inv, &mut m)?;
            let mut models: Vec<(String, ForecastModel)> = Vec::new();
            for (role, path) in &inv.inputs {
                if let Some(name) = role.strip_prefix("model.") {
                    m.add_input(role, path)?;
                    let (model, stats) = store::forecaster_from_checkpoint(&Checkpoint::load(path)?)?;
                    if stats != c.data.stats {
                        return Err(HarnessError::Config(format!(
                            "model {name} was trained with different preprocessing statistics"
                        )));
                    }
                    models.push((name.to_string(), model));
                }
            }
            if models.is_empty() {
                return Err(HarnessError::Usage("evaluate needs at least one --model name=path".into()));
            }
            let refs: Vec<(&str, &ForecastModel)> = models.iter().map(|(n, md)| (n.as_str(), md)).collect();
            let cmp = compare_experiments(&refs, &c.data.test, &c.data.stats, cfg.eval_peak_quantile)?;
            let report = cmp.to_text();
            write(out, "report.txt", report.as_bytes(), &mut m)?;
            write(out, "per_window.csv", cmp.per_window_csv().as_bytes(), &mut m)?;
            let best = cmp
                .rows
                .iter()
                .min_by(|a, b| a.metrics.mae.total_cmp(&b.metrics.mae))
                .map(|r| format!("{} ({:.4})", r.name, r.metrics.mae))
                .unwrap_or_default();
            format!("evaluate: {} models on {} test windows, lowest mae {best} -> report.txt", refs.len(), c.data.test.count())
        }
        "tune" => {
            let c = corpus(inv, &mut m)?;
            let outcome = tune_gan(cfg, c.wet_pool)?;
            write(out, "tune.txt", outcome.to_text().as_bytes(), &mut m)?;
            let counts: Vec<String> = outcome.survivor_counts().iter().map(usize::to_string).collect();
            let best = outcome.best().map(|r| format!("{} (jsd {:.4})", r.description, r.score)).unwrap_or_default();
            format!("tune: survivors {}, best {best} -> tune.txt", counts.join(" -> "))
        }
        "gradcheck" => {
            let cases = inv.arg::<usize>("cases")?.unwrap_or(100);
            let mut reports = gradcheck::primitive_suite(cfg.seed, cases)?;
            reports.extend(gradcheck::second_order_suite(cfg.seed, cases)?);
            let mut text = String::new();
            for r in &reports {
                let _ = writeln!(
                    text,
                    "{:<24} {:>4} cases  max rel error {:.3e}  tol {:.0e}  {}",
                    r.name,
                    r.cases,
                    r.max_rel_error,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            write(out, "gradcheck.txt", text.as_bytes(), &mut m)?;
            print!("{text}");
            let failed = reports.iter().filter(|r| !r.passed()).count();
            success = failed == 0;
            format!("gradcheck: {} checks, {failed} failed", reports.len())
        }
        other => {
            return Err(HarnessError::Usage(format!(
                "unknown subcommand `{other}`; expected one of {}",
                COMMANDS.join(", ")
            )))
        }
    };
    m.save(out)?;
    Ok(Outcome {
        summary,
        success,
        manifest: m,
    })
}

/// Runs a recorded invocation into `out` and checks every artifact checksum.
pub fn rerun(manifest: &Manifest, out: PathBuf) -> Result<Outcome> {
    let inv = Invocation::from_manifest(manifest, out)?;
    let outcome = execute(&inv)?;
    let mismatched: Vec<&str> = manifest
        .artifacts
        .iter()
        .filter(|a| !outcome.manifest.artifacts.contains(a))
        .map(|(n, _)| n.as_str())
        .collect();
    if !mismatched.is_empty() {
        return Err(HarnessError::Config(format!(
            "rerun did not reproduce: {}",
            mismatched.join(", ")
        )));
    }
    Ok(outcome)
}
