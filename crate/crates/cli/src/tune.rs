//! Seeded random search with successive halving on periodic JSD.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsgan_core::data::WindowBatch;
use tsgan_core::gan::{GanModel, GanTrainConfig, GanTrainer, NoHook};
use tsgan_core::data::compute_start_token;

use crate::config::RunConfig;
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

/// One candidate configuration that can be trained incrementally.
pub trait Trial: Send {
    fn describe(&self) -> String;
    /// Trains `steps` more generator steps and returns the score (lower is better).
    fn advance(&mut self, steps: usize) -> Result<f64>;
}

/// Survivor counts per stage: `[n, n/eta, ...]`, one entry per rung plus the final count.
pub fn schedule(trials: usize, rungs: usize, eta: usize) -> Vec<usize> {
    let mut out = vec![trials];
    let mut n = trials;
    for _ in 0..rungs {
        n = (n / eta).max(1);
        out.push(n);
    }
    out
}

/// Steps each trial trains per rung.
pub fn steps_per_rung(budget: usize, rungs: usize) -> Result<usize> {
    let per = budget.checked_div(rungs).unwrap_or(0);
    if per == 0 {
        return Err(HarnessError::Config(format!(
            "budget of {budget} generator steps is too small for {rungs} rungs"
        )));
    }
    Ok(per)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub index: usize,
    pub description: String,
    /// Score at the last rung this trial took part in.
    pub score: f64,
    pub steps: usize,
    /// Rungs trained, including the one where it was eliminated.
    pub rungs_survived: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    /// Trial indices alive at each stage, starting with all trials.
    pub stages: Vec<Vec<usize>>,
    /// Rows ranked by stage reached, then score, then index.
    pub table: Vec<TrialRow>,
}

impl TuneOutcome {
    pub fn survivor_counts(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    pub fn best(&self) -> Option<&TrialRow> {
        self.table.first()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>5} {:>8} {:>10} {:>6}  config\n", "trial", "rungs", "jsd", "steps");
        for r in &self.table {
            s.push_str(&format!(
                "{:>5} {:>8} {:>10.5} {:>6}  {}\n",
                r.index, r.rungs_survived, r.score, r.steps, r.description
            ));
        }
        s
    }
}

/// Ascending by score with NaN last; equal scores keep the lower index first.
fn rank(scored: &mut [(usize, f64)]) {
    let key = |s: f64| if s.is_nan() { f64::INFINITY } else { s };
    scored.sort_by(|a, b| key(a.1).total_cmp(&key(b.1)).then(a.0.cmp(&b.0)));
}

/// Runs every live trial for one rung in parallel, then keeps the best
/// `max(1, live/eta)`.
pub fn successive_halving<T: Trial>(mut trials: Vec<T>, rungs: usize, eta: usize, budget: usize) -> Result<TuneOutcome> {
    if trials.is_empty() || eta < 2 {
        return Err(HarnessError::Config("need at least one trial and eta ≥ 2".into()));
    }
    let per_rung = steps_per_rung(budget, rungs)?;
    let n = trials.len();
    let mut rows: Vec<TrialRow> = trials
        .iter()
        .enumerate()
        .map(|(index, t)| TrialRow {
            index,
            description: t.describe(),
            score: f64::NAN,
            steps: 0,
            rungs_survived: 0,
        })
        .collect();
    let mut live: Vec<usize> = (0..n).collect();
    let mut stages = vec![live.clone()];

    for _ in 0..rungs {
        let results: Vec<(usize, Result<f64>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = trials
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| live.contains(i))
                .map(|(i, t)| (i, scope.spawn(move || t.advance(per_rung))))
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(HarnessError::Config(format!("trial {i} panicked"))))))
                .collect()
        });
        let mut scored = Vec::with_capacity(results.len());
        for (i, r) in results {
            let score = r?;
            rows[i].score = score;
            rows[i].steps += per_rung;
            rows[i].rungs_survived += 1;
            scored.push((i, score));
        }
        rank(&mut scored);
        let keep = (live.len() / eta).max(1);
        live = scored.iter().take(keep).map(|&(i, _)| i).collect();
        stages.push(live.clone());
    }

    let mut table = rows;
    let key = |s: f64| if s.is_nan() { f64::INFINITY } else { s };
    table.sort_by(|a, b| {
        b.rungs_survived
            .cmp(&a.rungs_survived)
            .then(live.contains(&b.index).cmp(&live.contains(&a.index)))
            .then(key(a.score).total_cmp(&key(b.score)))
            .then(a.index.cmp(&b.index))
    });
    Ok(TuneOutcome { stages, table })
}

/// A GAN configuration sampled from the search space.
pub struct GanTrial {
    trainer: GanTrainer,
    data: Arc<WindowBatch>,
    description: String,
}

impl GanTrial {
    /// Samples layer counts and hidden sizes uniformly within the configured
    /// bounds. The trial's stream is `seed ^ index`.
    pub fn sample(config: &RunConfig, data: Arc<WindowBatch>, index: usize) -> Result<Self> {
        let seed = config.seed ^ index as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config.tune_min_layers..=config.tune_max_layers;
        let hidden = config.tune_min_hidden..=config.tune_max_hidden;
        let gan = GanTrainConfig {
            seed,
            generator_layers: rng.random_range(layers.clone()),
            generator_hidden: rng.random_range(hidden.clone()),
            critic_layers: rng.random_range(layers),
            critic_hidden: rng.random_range(hidden),
            eval_every: 0,
            ..config.gan_config()
        };
        let description = format!(
            "G {}x{} D {}x{}",
            gan.generator_layers, gan.generator_hidden, gan.critic_layers, gan.critic_hidden
        );
        let model = GanModel::new(gan, data.channels().to_vec(), compute_start_token(&data)?)?;
        Ok(Self {
            trainer: GanTrainer::new(model),
            data,
            description,
        })
    }

    pub fn config(&self) -> &GanTrainConfig {
        &self.trainer.model.config
    }
}

impl Trial for GanTrial {
    fn describe(&self) -> String {
        self.description.clone()
    }

    fn advance(&mut self, steps: usize) -> Result<f64> {
        self.trainer.run(&self.data, steps, &mut NoHook)?;
        Ok(self.trainer.evaluate(&self.data)?.mean)
    }
}

/// Samples `config.tune_trials` GAN configurations and prunes them by JSD on `data`.
pub fn tune_gan(config: &RunConfig, data: WindowBatch) -> Result<TuneOutcome> {
    steps_per_rung(config.tune_budget, config.tune_rungs)?;
    let data = Arc::new(data);
    let trials = (0..config.tune_trials)
        .map(|i| GanTrial::sample(config, data.clone(), i))
        .collect::<Result<Vec<_>>>()?;
    successive_halving(trials, config.tune_rungs, config.tune_eta, config.tune_budget)
}
