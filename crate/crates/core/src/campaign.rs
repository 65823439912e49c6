//! Fault-injection campaigns: trial orchestration, outcome classification
//! and the summary statistics (SDC rates, zero-difference fractions, ECDF
//! of deviations, guard efficacy).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fault::{sample_site, FaultError, FaultSite, FaultSpec};
use crate::fp_codec::FpFormat;
use crate::guard::{GuardKind, GuardReport};
use crate::matrix::Matrix;
use crate::record::{GuardRecord, Outcome, TrialRecord};
use crate::workload::{build_workload, GoldenResult, Workload, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign: {0}")]
    Config(String),
    #[error("shape mismatch: golden {golden:?} vs faulty {faulty:?}")]
    Shape {
        golden: (usize, usize),
        faulty: (usize, usize),
    },
    #[error("no records")]
    Empty,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Fault(#[from] FaultError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub workload: WorkloadSpec,
    pub fault: FaultSpec,
    pub guard: GuardKind,
    pub trials: usize,
    pub master_seed: u64,
    /// Relative tolerance of the output comparison; 0 means bit-exact.
    pub sdc_tolerance: f64,
}

impl CampaignConfig {
    pub fn new(workload: WorkloadSpec, fault: FaultSpec, trials: usize, master_seed: u64) -> Self {
        CampaignConfig {
            workload,
            fault,
            guard: GuardKind::None,
            trials,
            master_seed,
            sdc_tolerance: 0.0,
        }
    }

    pub fn with_guard(mut self, guard: GuardKind) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.sdc_tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.trials == 0 {
            return Err(CampaignError::Config("trials must be at least 1".into()));
        }
        if !(self.sdc_tolerance >= 0.0 && self.sdc_tolerance.is_finite()) {
            return Err(CampaignError::Config(format!(
                "sdc_tolerance must be a finite non-negative number, got {}",
                self.sdc_tolerance
            )));
        }
        if self.guard != GuardKind::None && self.workload.format != FpFormat::Bf16 {
            return Err(CampaignError::Config(format!(
                "guard {} only applies to bf16, workload format is {}",
                self.guard, self.workload.format
            )));
        }
        self.fault.validate_for(self.workload.format)?;
        Ok(())
    }
}

/// Benign iff every element satisfies `|f - g| <= tolerance · max(|g|, floor)`
/// with `floor` the smallest normal binary32. A zero tolerance compares bit
/// patterns, except that NaN matches NaN at the same position.
pub fn classify(golden: &Matrix<f32>, faulty: &Matrix<f32>, tolerance: f64) -> Result<Outcome, CampaignError> {
    if (golden.rows(), golden.cols()) != (faulty.rows(), faulty.cols()) {
        return Err(CampaignError::Shape {
            golden: (golden.rows(), golden.cols()),
            faulty: (faulty.rows(), faulty.cols()),
        });
    }
    let floor = f32::MIN_POSITIVE as f64;
    let matches = |g: f32, f: f32| {
        if g.is_nan() || f.is_nan() {
            return g.is_nan() && f.is_nan();
        }
        if tolerance == 0.0 {
            return g.to_bits() == f.to_bits();
        }
        if g == f {
            return true;
        }
        let (g, f) = (g as f64, f as f64);
        (f - g).abs() <= tolerance * g.abs().max(floor)
    };
    let benign = golden
        .as_slice()
        .iter()
        .zip(faulty.as_slice())
        .all(|(&g, &f)| matches(g, f));
    Ok(if benign { Outcome::Benign } else { Outcome::Sdc })
}

/// Everything one trial produced, including the full guard report that the
/// JSON record only summarises.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub record: TrialRecord,
    pub guard: Option<GuardReport>,
}

/// A built workload with its golden run, shared by all trials.
pub struct Campaign {
    config: CampaignConfig,
    workload: Workload,
    golden: GoldenResult,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let workload = build_workload(&config.workload)?;
        let golden = workload.run_golden()?;
        Ok(Campaign {
            config,
            workload,
            golden,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn golden(&self) -> &GoldenResult {
        &self.golden
    }

    /// Site of the `index`-th draw from the campaign's seed.
    pub fn site(&self, index: u64) -> FaultSite {
        sample_site(
            &self.workload.site_space(),
            &self.config.fault,
            self.config.workload.format,
            self.config.master_seed,
            index,
        )
    }

    /// Runs one trial at an explicit site.
    pub fn run_trial_at(
        &self,
        trial_id: u64,
        site: &FaultSite,
        guard: GuardKind,
    ) -> Result<TrialResult, CampaignError> {
        let run = self.workload.run_faulty(&self.golden, site, guard)?;
        let outcome = classify(self.golden.output(), &run.output, self.config.sdc_tolerance)?;
        let inj = run.injection;
        let guard_record = match run.guard {
            Some(g) => GuardRecord {
                kind: g.kind,
                detected: g.detected,
                exp_before: g.exponent_before,
                exp_after: g.exponent_after,
            },
            None => GuardRecord {
                kind: GuardKind::None,
                detected: false,
                exp_before: inj.faulty.exponent_field(),
                exp_after: inj.faulty.exponent_field(),
            },
        };
        let metric_delta = match (run.accuracy, self.golden.accuracy) {
            (Some(f), Some(g)) => Some(f - g),
            _ => None,
        };
        Ok(TrialResult {
            record: TrialRecord {
                trial_id,
                format: self.config.workload.format,
                workload: self.config.workload.label(),
                site: site.clone(),
                orig_hex: inj.original.to_hex(),
                fault_hex: inj.faulty.to_hex(),
                re_sum: inj.re_sum,
                re_sum_prime: inj.re_sum_prime,
                diff: inj.diff,
                guard: guard_record,
                outcome,
                metric_delta,
            },
            guard: run.guard,
        })
    }

    /// Trial `i` draws its site from stream `i` of the master seed.
    pub fn run_trial(&self, trial_id: u64) -> Result<TrialResult, CampaignError> {
        let site = self.site(trial_id);
        self.run_trial_at(trial_id, &site, self.config.guard)
    }

    /// All configured trials, in trial order.
    pub fn run(&self) -> Result<Vec<TrialResult>, CampaignError> {
        (0..self.config.trials as u64)
            .into_par_iter()
            .map(|i| self.run_trial(i))
            .collect()
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<(Vec<TrialRecord>, CampaignSummary), CampaignError> {
    let campaign = Campaign::new(cfg.clone())?;
    let records: Vec<TrialRecord> = campaign.run()?.into_iter().map(|r| r.record).collect();
    let summary = summarize(&records, false)?;
    Ok((records, summary))
}

/// Fixed-position sweep over every bit of the format with `cfg.trials`
/// trials per position. Trial `i` of every position shares the same site,
/// so positions are compared on identical terms. Trial ids are
/// `position * trials + i`.
pub fn run_bit_sweep(cfg: &CampaignConfig) -> Result<(Vec<TrialRecord>, CampaignSummary), CampaignError> {
    let base = Campaign::new(CampaignConfig {
        fault: FaultSpec::fixed(0),
        ..cfg.clone()
    })?;
    let trials = cfg.trials as u64;
    let positions = cfg.workload.format.total_bits() as u64;
    let records = (0..positions * trials)
        .into_par_iter()
        .map(|id| {
            let (position, i) = (id / trials, id % trials);
            let mut site = base.site(i);
            site.bits = vec![position as u32];
            base.run_trial_at(id, &site, cfg.guard).map(|r| r.record)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&records, true)?;
    Ok((records, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub trials: usize,
    pub sdc_count: usize,
    pub sdc_rate: f64,
    pub zero_diff_fraction: f64,
    /// Trials whose deviation is infinite or NaN; these are left out of the
    /// ECDF.
    pub nonfinite_diff_count: usize,
    /// Sorted `log10|diff|` over finite nonzero deviations.
    pub ecdf: Vec<f64>,
    pub per_bit_sdc: Option<BTreeMap<u32, f64>>,
    pub mean_metric_delta: Option<f64>,
    pub guard_detection_rate: Option<f64>,
}

/// Per-position SDC rate; every record must carry exactly one flipped bit.
pub fn per_bit_sdc(records: &[TrialRecord]) -> Result<BTreeMap<u32, f64>, CampaignError> {
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in records {
        let [bit] = r.site.bits[..] else {
            return Err(CampaignError::Config(format!(
                "trial {} flips {} bits; per-bit rates need single-bit records",
                r.trial_id,
                r.site.bits.len()
            )));
        };
        let entry = counts.entry(bit).or_default();
        entry.0 += 1;
        entry.1 += (r.outcome == Outcome::Sdc) as usize;
    }
    Ok(counts
        .into_iter()
        .map(|(bit, (n, sdc))| (bit, sdc as f64 / n as f64))
        .collect())
}

/// Summary statistics. The result does not depend on record order.
pub fn summarize(records: &[TrialRecord], per_bit: bool) -> Result<CampaignSummary, CampaignError> {
    if records.is_empty() {
        return Err(CampaignError::Empty);
    }
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.trial_id);

    let n = sorted.len();
    let sdc_count = sorted.iter().filter(|r| r.outcome == Outcome::Sdc).count();
    let zero = sorted.iter().filter(|r| r.diff == 0.0).count();
    let nonfinite = sorted.iter().filter(|r| !r.diff.is_finite()).count();
    let mut ecdf: Vec<f64> = sorted
        .iter()
        .filter(|r| r.diff != 0.0 && r.diff.is_finite())
        .map(|r| r.diff.abs().log10())
        .collect();
    ecdf.sort_by(f64::total_cmp);

    let deltas: Vec<f64> = sorted.iter().filter_map(|r| r.metric_delta).collect();
    let mean_metric_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
    let guarded = sorted.iter().any(|r| r.guard.kind != GuardKind::None);
    let guard_detection_rate = guarded.then(|| sorted.iter().filter(|r| r.guard.detected).count() as f64 / n as f64);

    Ok(CampaignSummary {
        trials: n,
        sdc_count,
        sdc_rate: sdc_count as f64 / n as f64,
        zero_diff_fraction: zero as f64 / n as f64,
        nonfinite_diff_count: nonfinite,
        ecdf,
        per_bit_sdc: if per_bit { Some(per_bit_sdc(records)?) } else { None },
        mean_metric_delta,
        guard_detection_rate,
    })
}

/// `(value, cumulative fraction)` pairs of an already sorted sample.
pub fn ecdf_points(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n))
        .collect()
}

impl CampaignSummary {
    pub fn bitpos_csv(&self) -> Option<String> {
        self.per_bit_sdc.as_ref().map(|m| {
            let mut out = String::from("bit_position,sdc_rate\n");
            for (bit, rate) in m {
                out.push_str(&format!("{bit},{rate}\n"));
            }
            out
        })
    }

    pub fn ecdf_csv(&self) -> String {
        let mut out = String::from("log10_diff,cum_fraction\n");
        for (x, p) in ecdf_points(&self.ecdf) {
            out.push_str(&format!("{x},{p}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardArm {
    pub guard: GuardKind,
    /// Mean of `golden accuracy - faulty accuracy` over the paired trials.
    pub mean_loss: f64,
    /// `(baseline loss - arm loss) / baseline loss`; 0 when the baseline
    /// loses nothing.
    pub reduction: f64,
    pub detections: usize,
    /// Detections whose corrected exponent violates the guard's own
    /// postcondition.
    pub postcondition_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardEfficacy {
    pub trials: usize,
    pub golden_accuracy: f64,
    pub baseline_mean_loss: f64,
    pub arms: Vec<GuardArm>,
}

fn postcondition_holds(report: &GuardReport) -> bool {
    if !report.detected {
        return report.exponent_after == report.exponent_before;
    }
    match report.kind {
        GuardKind::None => false,
        GuardKind::BoundCheck => report.exponent_after & 0b0111_0000 == 0,
        GuardKind::RangeCheckMax | GuardKind::RangeCheckFlip => {
            report.bound_used.is_some_and(|b| report.exponent_after <= b)
        }
    }
}

/// Runs the same seeded trials without a guard and under each guard in
/// `guards`, and compares the mean accuracy loss.
pub fn guard_efficacy(base: &CampaignConfig, guards: &[GuardKind]) -> Result<GuardEfficacy, CampaignError> {
    let campaign = Campaign::new(base.clone().with_guard(GuardKind::None))?;
    if guards.iter().any(|g| *g != GuardKind::None) && base.workload.format != FpFormat::Bf16 {
        return Err(CampaignError::Config("guards only apply to bf16".into()));
    }
    let Some(golden_accuracy) = campaign.golden().accuracy else {
        return Err(CampaignError::Config(
            "guard efficacy needs a workload with an accuracy metric".into(),
        ));
    };
    let n = base.trials as u64;
    let arm_losses = |guard: GuardKind| -> Result<(f64, usize, usize), CampaignError> {
        let results = (0..n)
            .into_par_iter()
            .map(|i| campaign.run_trial_at(i, &campaign.site(i), guard))
            .collect::<Result<Vec<_>, _>>()?;
        let loss: f64 = results.iter().map(|r| -r.record.metric_delta.unwrap_or(0.0)).sum();
        let detections = results.iter().filter(|r| r.record.guard.detected).count();
        let failures = results
            .iter()
            .filter_map(|r| r.guard.as_ref())
            .filter(|g| !postcondition_holds(g))
            .count();
        Ok((loss / n as f64, detections, failures))
    };
    let (baseline, _, _) = arm_losses(GuardKind::None)?;
    let arms = guards
        .iter()
        .map(|&guard| {
            let (mean_loss, detections, postcondition_failures) = arm_losses(guard)?;
            let reduction = if baseline > 0.0 {
                (baseline - mean_loss) / baseline
            } else {
                0.0
            };
            Ok(GuardArm {
                guard,
                mean_loss,
                reduction,
                detections,
                postcondition_failures,
            })
        })
        .collect::<Result<Vec<_>, CampaignError>>()?;
    Ok(GuardEfficacy {
        trials: n as usize,
        golden_accuracy,
        baseline_mean_loss: baseline,
        arms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::BitMode;
    use crate::workload::ValueDistribution;

    fn gemm_config(format: FpFormat, fault: FaultSpec, trials: usize) -> CampaignConfig {
        let spec = WorkloadSpec::random_gemm(format, (32, 16, 32), ValueDistribution::Uniform, 1);
        CampaignConfig::new(spec, fault, trials, 5)
    }

    fn small_mlp(trials: usize) -> CampaignConfig {
        let spec = WorkloadSpec::mlp(FpFormat::Bf16, vec![16, 32, 10], 3, 64, 4);
        CampaignConfig::new(spec, FaultSpec::random(4).unwrap(), trials, 9)
    }

    fn record_with_diff(id: u64, diff: f64) -> TrialRecord {
        let cfg = gemm_config(FpFormat::Fp16, FaultSpec::fixed(3), 1);
        let mut r = Campaign::new(cfg).unwrap().run_trial(0).unwrap().record;
        r.trial_id = id;
        r.diff = diff;
        r
    }

    #[test]
    fn classify_rules() {
        let g = Matrix::from_col_major(1, 3, vec![1.0f32, f32::NAN, -2.0]).unwrap();
        assert_eq!(classify(&g, &g, 0.0).unwrap(), Outcome::Benign);
        let mut f = g.clone();
        f.set(0, 0, 1.0 + f32::EPSILON);
        assert_eq!(classify(&g, &f, 0.0).unwrap(), Outcome::Sdc);
        assert_eq!(classify(&g, &f, 1e-3).unwrap(), Outcome::Benign);
        f.set(0, 0, 1.01);
        assert_eq!(classify(&g, &f, 1e-3).unwrap(), Outcome::Sdc);
        let mut n = g.clone();
        n.set(0, 2, f32::NAN);
        assert_eq!(classify(&g, &n, 1.0).unwrap(), Outcome::Sdc);
        let mut z = g.clone();
        z.set(0, 2, -0.0);
        let zero = Matrix::from_col_major(1, 1, vec![0.0f32]).unwrap();
        let neg_zero = Matrix::from_col_major(1, 1, vec![-0.0f32]).unwrap();
        assert_eq!(classify(&zero, &neg_zero, 0.0).unwrap(), Outcome::Sdc);
        assert_eq!(classify(&zero, &neg_zero, 1e-9).unwrap(), Outcome::Benign);
        assert!(classify(&g, &zero, 0.0).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let records = vec![
            record_with_diff(2, 1e6),
            record_with_diff(0, 0.0),
            record_with_diff(1, -1e3),
        ];
        let s = summarize(&records, false).unwrap();
        assert_eq!(s.zero_diff_fraction, 1.0 / 3.0);
        assert_eq!(s.ecdf, vec![3.0, 6.0]);
        assert!(s.per_bit_sdc.is_none());
        let mut reversed = records.clone();
        reversed.reverse();
        assert_eq!(summarize(&reversed, false).unwrap(), s);
        let zeros: Vec<_> = (0..4).map(|i| record_with_diff(i, 0.0)).collect();
        let s = summarize(&zeros, false).unwrap();
        assert_eq!(s.zero_diff_fraction, 1.0);
        assert!(s.ecdf.is_empty());
        assert!(matches!(summarize(&[], false), Err(CampaignError::Empty)));
        let inf = vec![record_with_diff(0, f64::INFINITY), record_with_diff(1, 10.0)];
        let s = summarize(&inf, false).unwrap();
        assert_eq!((s.nonfinite_diff_count, s.ecdf.clone()), (1, vec![1.0]));
    }

    #[test]
    fn zero_diff_trial_is_benign() {
        let campaign = Campaign::new(gemm_config(FpFormat::Bf16, FaultSpec::fixed(0), 1)).unwrap();
        let mut site = campaign.site(0);
        site.bits.clear();
        let r = campaign.run_trial_at(0, &site, GuardKind::None).unwrap();
        assert_eq!(r.record.outcome, Outcome::Benign);
        let s = summarize(&[r.record], false).unwrap();
        assert_eq!(s.sdc_rate, 0.0);
    }

    #[test]
    fn guards_see_nothing_without_flips() {
        let campaign = Campaign::new(small_mlp(1)).unwrap();
        for i in 0..30 {
            let mut site = campaign.site(i);
            site.bits.clear();
            for guard in GuardKind::ALL {
                let r = campaign.run_trial_at(i, &site, guard).unwrap();
                assert!(!r.record.guard.detected, "trial {i} {guard}");
                assert_eq!(r.record.outcome, Outcome::Benign);
                assert_eq!(r.record.metric_delta, Some(0.0));
            }
        }
    }

    #[test]
    fn campaigns_are_deterministic() {
        let cfg = gemm_config(FpFormat::Tf32, FaultSpec::random(2).unwrap(), 64);
        let (a, sa) = run_campaign(&cfg).unwrap();
        let (b, sb) = run_campaign(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.iter().enumerate().all(|(i, r)| r.trial_id == i as u64));
        assert!((0.0..=1.0).contains(&sa.sdc_rate));
        assert!(sa.ecdf.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bit_sweep_pairs_sites() {
        let cfg = gemm_config(FpFormat::Fp16, FaultSpec::fixed(0), 10);
        let (records, summary) = run_bit_sweep(&cfg).unwrap();
        assert_eq!(records.len(), 16 * 10);
        let per_bit = summary.per_bit_sdc.unwrap();
        assert_eq!(per_bit.len(), 16);
        for r in &records {
            let base = &records[(r.trial_id % 10) as usize];
            assert_eq!(
                (r.site.instr_index, r.site.lane, r.site.term_k),
                (base.site.instr_index, base.site.lane, base.site.term_k)
            );
            assert_eq!(r.site.bits, vec![(r.trial_id / 10) as u32]);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = gemm_config(FpFormat::Fp16, FaultSpec::fixed(3), 0);
        assert!(cfg.validate().is_err());
        cfg.trials = 1;
        assert!(cfg.clone().with_guard(GuardKind::BoundCheck).validate().is_err());
        assert!(cfg.clone().with_tolerance(f64::NAN).validate().is_err());
        cfg.fault = FaultSpec::new(1, BitMode::FixedPosition(16)).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn guard_efficacy_pairs_trials() {
        let cfg = small_mlp(60);
        let report = guard_efficacy(&cfg, &[GuardKind::None, GuardKind::BoundCheck]).unwrap();
        assert_eq!(report.arms[0].reduction, 0.0);
        assert_eq!(report.arms[0].mean_loss, report.baseline_mean_loss);
        for arm in &report.arms {
            assert_eq!(arm.postcondition_failures, 0);
        }
        let gemm = gemm_config(FpFormat::Bf16, FaultSpec::random(1).unwrap(), 4);
        assert!(guard_efficacy(&gemm, &[GuardKind::BoundCheck]).is_err());
    }
}
