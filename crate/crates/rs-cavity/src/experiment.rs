//! Parallel execution of [`ExperimentConfig`] sweeps.

use rayon::prelude::*;
use rs_cavity_core::harness::{frozen_population, plan_zeta, run_replicate, summarize, ExperimentConfig, ZetaPlan, ZetaSummary};
use rs_cavity_core::quadrature::Rules;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

pub const THREADS_ENV: &str = "RS_CAVITY_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<ZetaSummary>,
}

/// SHA-256 of the config's JSON encoding, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker count from `RS_CAVITY_THREADS`; 0 or unset lets rayon decide.
pub fn thread_count() -> Result<usize, Error> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// Runs `f` on a rayon pool sized by `RS_CAVITY_THREADS`.
pub fn with_pool<T: Send>(f: impl FnOnce() -> Result<T, Error> + Send) -> Result<T, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(f)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReplicationSummary, Error> {
    cfg.validate()?;
    with_pool(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<ReplicationSummary, Error> {
    let rules = Rules::new(cfg.quadrature_order)?;
    let hash = config_hash(cfg);
    let plans: Vec<ZetaPlan> = (0..cfg.zeta_grid.len())
        .into_par_iter()
        .map(|i| plan_zeta(cfg, i, &rules))
        .collect();
    let mut rows = Vec::with_capacity(plans.len());
    for plan in &plans {
        let frozen = if cfg.freeze_population {
            Some(frozen_population(cfg, plan)?)
        } else {
            None
        };
        let records = (0..cfg.replicates as u32)
            .into_par_iter()
            .map(|r| run_replicate(cfg, plan, frozen.as_ref(), r))
            .collect();
        rows.push(summarize(cfg, &hash, plan, records));
    }
    Ok(ReplicationSummary {
        config: cfg.clone(),
        config_hash: hash,
        rows,
    })
}

/// Re-solves the RS predictions for a stored summary, optionally at another
/// quadrature order or tolerance, and re-aggregates its replicate records.
pub fn rejoin_predictions(summary: &ReplicationSummary, order: Option<usize>, tolerance: Option<f64>) -> Result<ReplicationSummary, Error> {
    let mut cfg = summary.config.clone();
    if let Some(o) = order {
        cfg.quadrature_order = o;
    }
    if let Some(t) = tolerance {
        cfg.tolerance = t;
    }
    let rules = Rules::new(cfg.quadrature_order)?;
    let rows = summary
        .rows
        .iter()
        .map(|row| {
            let index = cfg
                .zeta_grid
                .iter()
                .position(|&z| z == row.zeta)
                .ok_or_else(|| Error::Config(format!("zeta {} is not in the config grid", row.zeta)))?;
            let plan = plan_zeta(&cfg, index, &rules);
            let mut plan_for_records = plan.clone();
            // Replicates were fitted with the stored penalty.
            plan_for_records.penalty = row.penalty;
            Ok(summarize(
                &summary.config,
                &summary.config_hash,
                &plan_for_records,
                row.records.clone(),
            ))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(ReplicationSummary {
        config: summary.config.clone(),
        config_hash: summary.config_hash.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rs_cavity_core::harness::PenaltyMode;
    use rs_cavity_core::kernels::Family;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Family::Logit, PenaltyMode::Oracle);
        c.penalty_value = Some(0.2);
        c.n = 60;
        c.zeta_grid = vec![0.1, 0.2];
        c.replicates = 4;
        c.quadrature_order = 16;
        c
    }

    #[test]
    fn hash_tracks_config() {
        let a = small();
        let mut b = small();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn frozen_population_is_shared() {
        let mut cfg = small();
        cfg.freeze_population = true;
        let s = run_experiment(&cfg).unwrap();
        for row in &s.rows {
            let a: Vec<f64> = row.records.iter().map(|r| r.alpha2).collect();
            assert!(a.windows(2).all(|w| w[0] == w[1]));
        }
        cfg.freeze_population = false;
        let s = run_experiment(&cfg).unwrap();
        let a: Vec<f64> = s.rows[0].records.iter().map(|r| r.alpha2).collect();
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn rejoin_at_stored_settings_is_identity() {
        let s = run_experiment(&small()).unwrap();
        assert_eq!(rejoin_predictions(&s, None, None).unwrap(), s);
        let other = rejoin_predictions(&s, Some(40), None).unwrap();
        assert_eq!(other.rows[0].records, s.rows[0].records);
    }
}
