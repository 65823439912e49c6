//! One write-back injection traced end to end.

use mpgemmfi::campaign::{Campaign, CampaignConfig};
use mpgemmfi::fault::{FaultSite, FaultSpec};
use mpgemmfi::guard::GuardKind;
use mpgemmfi::workload::{ValueDistribution, WorkloadSpec};
use mpgemmfi::FpFormat;

fn main() {
    let spec = WorkloadSpec::random_gemm(FpFormat::Bf16, (32, 16, 32), ValueDistribution::Uniform, 1);
    let cfg = CampaignConfig::new(spec, FaultSpec::fixed(14), 1, 0);
    let campaign = Campaign::new(cfg).unwrap();
    let site = FaultSite {
        instr_index: 3,
        lane: 5,
        dreg: 1,
        term_k: 7,
        bits: vec![14],
    };
    for guard in [GuardKind::None, GuardKind::BoundCheck, GuardKind::RangeCheckMax] {
        let r = campaign.run_trial_at(0, &site, guard).unwrap().record;
        println!(
            "{:<16} term {} -> {}  re_sum {} -> {}  {:?}",
            guard.name(),
            r.orig_hex,
            r.fault_hex,
            r.re_sum,
            r.re_sum_prime,
            r.outcome
        );
        println!("  {}", r.to_json_line());
    }
}
