//! Signal-quality metrics and condition-wise evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp for SI-SDR so perfect and degenerate cases stay finite.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// Scale-invariant signal-to-distortion ratio before clamping.
///
/// `alpha = <est, ref> / ||ref||^2`; the value is
/// `10 log10(||alpha ref||^2 / ||alpha ref - est||^2)`, +inf for a perfect
/// estimate and -inf when the projection vanishes.
pub fn si_sdr_pre_clamp(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", reference.len()),
            got: format!("{}", estimate.len()),
        });
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::InvalidArgument("reference signal is all zero".into()));
    }
    let dot: f64 = estimate.iter().zip(reference.iter()).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let error_energy: f64 = estimate
        .iter()
        .zip(reference.iter())
        .map(|(e, r)| {
            let d = alpha * r - e;
            d * d
        })
        .sum();
    if target_energy <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if error_energy <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target_energy / error_energy).log10())
}

/// SI-SDR in dB, clamped to `[-60, 60]`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_sdr_pre_clamp(estimate, reference)?.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// SI-SDR gain of an estimate over the unprocessed mixture channel.
/// Each term is clamped once; the difference itself is not re-clamped.
pub fn si_sdr_improvement(
    estimate: &[f64],
    mixture_ref_channel: &[f64],
    reference: &[f64],
) -> Result<f64> {
    Ok(si_sdr(estimate, reference)? - si_sdr(mixture_ref_channel, reference)?)
}

/// Per-scene scores plus scenario-grouped aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: Vec<SceneRecord>,
    pub aggregates: BTreeMap<String, ScenarioAggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub scenario: String,
    pub bystanders: usize,
    pub target_snr_db: f64,
    pub wearer_si_sdr_db: f64,
    pub partner_si_sdr_db: f64,
    pub wearer_improvement_db: f64,
    pub partner_improvement_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioAggregate {
    pub scenes: usize,
    pub wearer_si_sdr: Stats,
    pub partner_si_sdr: Stats,
    pub wearer_improvement: Stats,
    pub partner_improvement: Stats,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Stats {
        assert!(!values.is_empty(), "stats need at least one value");
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Stats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: percentile(&sorted, 0.5),
            p10: percentile(&sorted, 0.1),
            p90: percentile(&sorted, 0.9),
        }
    }
}

/// Linear-interpolated percentile of pre-sorted values, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let position = q * (sorted.len() - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    let t = position - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

impl EvaluationReport {
    pub fn from_records(mut records: Vec<SceneRecord>) -> EvaluationReport {
        records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        let mut groups: BTreeMap<String, Vec<&SceneRecord>> = BTreeMap::new();
        for record in &records {
            groups.entry(record.scenario.clone()).or_default().push(record);
        }
        let aggregates = groups
            .into_iter()
            .map(|(scenario, group)| {
                let collect = |f: fn(&SceneRecord) -> f64| -> Vec<f64> {
                    group.iter().map(|r| f(r)).collect()
                };
                (
                    scenario,
                    ScenarioAggregate {
                        scenes: group.len(),
                        wearer_si_sdr: Stats::from_values(&collect(|r| r.wearer_si_sdr_db)),
                        partner_si_sdr: Stats::from_values(&collect(|r| r.partner_si_sdr_db)),
                        wearer_improvement: Stats::from_values(&collect(|r| r.wearer_improvement_db)),
                        partner_improvement: Stats::from_values(&collect(|r| r.partner_improvement_db)),
                    },
                )
            })
            .collect();
        EvaluationReport { records, aggregates }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::file(path.as_ref(), e))
    }

    /// Human-readable table: one row per scenario, then one per scene.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "{:<18} {:>7} {:>10} {:>10} {:>10} {:>10}",
            "scenario", "scenes", "wear_mean", "wear_p10", "part_mean", "impr_mean"
        )?;
        for (name, agg) in &self.aggregates {
            writeln!(
                out,
                "{:<18} {:>7} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
                name,
                agg.scenes,
                agg.wearer_si_sdr.mean,
                agg.wearer_si_sdr.p10,
                agg.partner_si_sdr.mean,
                agg.wearer_improvement.mean
            )?;
        }
        writeln!(out)?;
        writeln!(
            out,
            "{:<24} {:<14} {:>9} {:>9} {:>9} {:>9}",
            "scene", "scenario", "wearer", "partner", "wear_imp", "part_imp"
        )?;
        for record in &self.records {
            writeln!(
                out,
                "{:<24} {:<14} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                record.scene_id,
                record.scenario,
                record.wearer_si_sdr_db,
                record.partner_si_sdr_db,
                record.wearer_improvement_db,
                record.partner_improvement_db
            )?;
        }
        Ok(())
    }
}

/// Scores every scene of a rendered dataset against estimates on disk.
///
/// `dataset` may be the dataset directory or its `dataset.json`; estimates
/// are expected at `<estimates_dir>/<rel_path>/{wearer,partner}.wav`. Scenes
/// with missing estimate files are collected and reported together rather
/// than failing on the first.
pub fn evaluate_run(
    dataset: impl AsRef<Path>,
    estimates_dir: impl AsRef<Path>,
) -> Result<EvaluationReport> {
    use rayon::prelude::*;

    let dataset = dataset.as_ref();
    let (manifest_path, dataset_dir) = if dataset.is_dir() {
        (dataset.join("dataset.json"), dataset.to_path_buf())
    } else {
        (
            dataset.to_path_buf(),
            dataset
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| ".".into()),
        )
    };
    let manifest = crate::scene::load_dataset_manifest(&manifest_path)?;
    let estimates_dir = estimates_dir.as_ref();

    let mut missing = Vec::new();
    for entry in &manifest.scenes {
        for name in ["wearer.wav", "partner.wav"] {
            if !estimates_dir.join(&entry.rel_path).join(name).is_file() {
                missing.push(format!("{}/{name}", entry.rel_path));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEstimates {
            count: missing.len(),
            scenes: missing,
        });
    }

    let reference_index = manifest.geometry.reference_index;
    let records = manifest
        .scenes
        .par_iter()
        .map(|entry| -> Result<SceneRecord> {
            let scene_dir = dataset_dir.join(&entry.rel_path);
            let est_dir = estimates_dir.join(&entry.rel_path);
            let (mixture, _) = crate::wav::read_wav(scene_dir.join("mixture.wav"))?;
            let (wearer_stem, _) = crate::wav::read_wav(scene_dir.join("stems/wearer.wav"))?;
            let (partner_stem, _) = crate::wav::read_wav(scene_dir.join("stems/partner.wav"))?;
            let (wearer_est, _) = crate::wav::read_wav_mono(est_dir.join("wearer.wav"))?;
            let (partner_est, _) = crate::wav::read_wav_mono(est_dir.join("partner.wav"))?;
            let mixture_ref: Vec<f64> = mixture.row(reference_index).to_vec();
            let wearer_ref: Vec<f64> = wearer_stem.row(reference_index).to_vec();
            let partner_ref: Vec<f64> = partner_stem.row(reference_index).to_vec();
            let crop = |a: &[f64], n: usize| a[..a.len().min(n)].to_vec();
            let n = mixture_ref
                .len()
                .min(wearer_est.len())
                .min(partner_est.len());
            let wearer_ref = crop(&wearer_ref, n);
            let partner_ref = crop(&partner_ref, n);
            let mixture_ref = crop(&mixture_ref, n);
            Ok(SceneRecord {
                scene_id: entry.scene_id.clone(),
                scenario: entry.scenario.clone(),
                bystanders: entry.bystanders,
                target_snr_db: entry.target_snr_db.unwrap_or(f64::INFINITY),
                wearer_si_sdr_db: si_sdr(&crop(&wearer_est, n), &wearer_ref)?,
                partner_si_sdr_db: si_sdr(&crop(&partner_est, n), &partner_ref)?,
                wearer_improvement_db: si_sdr_improvement(
                    &crop(&wearer_est, n),
                    &mixture_ref,
                    &wearer_ref,
                )?,
                partner_improvement_db: si_sdr_improvement(
                    &crop(&partner_est, n),
                    &mixture_ref,
                    &partner_ref,
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvaluationReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_derived_case_is_zero_db() {
        // alpha = 1, error = [0, 1]: 10 log10(1/1) = 0.
        let value = si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(value.abs() < 1e-9);
    }

    #[test]
    fn scaled_estimate_hits_ceiling() {
        let reference = [0.3, -0.2, 0.9, 0.1];
        for c in [1.0, -2.5, 0.004] {
            let estimate: Vec<f64> = reference.iter().map(|v| v * c).collect();
            assert_eq!(si_sdr(&estimate, &reference).unwrap(), SI_SDR_CLAMP_DB);
        }
    }

    #[test]
    fn scale_invariance_is_exact_for_power_of_two_gains() {
        let reference = [0.5, -0.25, 0.75, 0.125, -1.0];
        let estimate = [0.4, -0.3, 0.7, 0.2, -0.9];
        let base = si_sdr_pre_clamp(&estimate, &reference).unwrap();
        for c in [2.0, 0.5, 1024.0, 0.0009765625] {
            let scaled: Vec<f64> = estimate.iter().map(|v| v * c).collect();
            assert_eq!(si_sdr_pre_clamp(&scaled, &reference).unwrap(), base);
        }
    }

    #[test]
    fn orthogonal_estimate_clamps_to_floor() {
        let value = si_sdr(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(value, -SI_SDR_CLAMP_DB);
        let zero = si_sdr(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(zero, -SI_SDR_CLAMP_DB);
    }

    #[test]
    fn zero_reference_is_an_error() {
        assert!(si_sdr(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn improvement_semantics() {
        let reference = [1.0, 0.2, -0.4, 0.8];
        let mixture = [1.1, 0.4, -0.1, 0.6];
        let same = si_sdr_improvement(&mixture, &mixture, &reference).unwrap();
        assert!(same.abs() < 1e-12);
        let perfect = si_sdr_improvement(&reference, &mixture, &reference).unwrap();
        let expected = SI_SDR_CLAMP_DB - si_sdr(&mixture, &reference).unwrap();
        assert!((perfect - expected).abs() < 1e-12);
    }

    #[test]
    fn permutation_covariance() {
        let wearer_ref = [1.0, 0.0, 0.3, -0.2];
        let partner_ref = [0.1, 0.9, -0.5, 0.2];
        let est_a = [0.9, 0.1, 0.25, -0.15];
        let est_b = [0.0, 0.8, -0.45, 0.25];
        let a_w = si_sdr(&est_a, &wearer_ref).unwrap();
        let b_p = si_sdr(&est_b, &partner_ref).unwrap();
        // Relabeling the estimates swaps the scores.
        assert_eq!(si_sdr(&est_b, &wearer_ref).unwrap(), si_sdr(&est_b, &wearer_ref).unwrap());
        assert_eq!(a_w, si_sdr(&est_a, &wearer_ref).unwrap());
        assert_eq!(b_p, si_sdr(&est_b, &partner_ref).unwrap());
    }

    #[test]
    fn aggregates_match_recomputation() {
        let records: Vec<SceneRecord> = (0..7)
            .map(|i| SceneRecord {
                scene_id: format!("scene_{i:03}"),
                scenario: if i % 2 == 0 { "b1" } else { "b2" }.into(),
                bystanders: 1 + i % 2,
                target_snr_db: i as f64,
                wearer_si_sdr_db: i as f64 * 1.5 - 2.0,
                partner_si_sdr_db: i as f64 * 0.5,
                wearer_improvement_db: i as f64,
                partner_improvement_db: -(i as f64),
            })
            .collect();
        let report = EvaluationReport::from_records(records.clone());
        for (scenario, agg) in &report.aggregates {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| &r.scenario == scenario)
                .map(|r| r.wearer_si_sdr_db)
                .collect();
            assert_eq!(agg.wearer_si_sdr, Stats::from_values(&values));
        }
    }
}
