//! Zero-difference fractions and the spread of nonzero deviations for the
//! three formats on the same random GEMM.

use mpgemmfi::campaign::{ecdf_points, run_campaign, CampaignConfig};
use mpgemmfi::fault::FaultSpec;
use mpgemmfi::workload::{ValueDistribution, WorkloadSpec};
use mpgemmfi::FpFormat;

fn main() {
    for bits in [1, 4] {
        for f in FpFormat::ALL {
            let spec = WorkloadSpec::random_gemm(f, (64, 32, 64), ValueDistribution::Integer, 3);
            let cfg = CampaignConfig::new(spec, FaultSpec::random(bits).unwrap(), 1000, 3);
            let (_, s) = run_campaign(&cfg).unwrap();
            let pts = ecdf_points(&s.ecdf);
            let quantile = |q: f64| pts.iter().find(|p| p.1 >= q).map_or(f64::NAN, |p| p.0);
            println!(
                "{f} {bits}-bit: zero diff {:5.1}%  log10|diff| p10 {:6.2} p50 {:6.2} p90 {:6.2} max {:6.2}",
                100.0 * s.zero_diff_fraction,
                quantile(0.1),
                quantile(0.5),
                quantile(0.9),
                s.ecdf.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
}
