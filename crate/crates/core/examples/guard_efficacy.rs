//! Accuracy loss of the BF16 classifier with and without exponent guards.
//!
//! `cargo run --release --example guard_efficacy -- 500`

use mpgemmfi::campaign::{guard_efficacy, CampaignConfig};
use mpgemmfi::fault::FaultSpec;
use mpgemmfi::guard::GuardKind;
use mpgemmfi::workload::WorkloadSpec;
use mpgemmfi::FpFormat;

fn main() {
    let trials = std::env::args().nth(1).map_or(500, |t| t.parse().unwrap());
    let cfg = CampaignConfig::new(
        WorkloadSpec::default_mlp(FpFormat::Bf16),
        FaultSpec::random(4).unwrap(),
        trials,
        1,
    );
    let guards = [
        GuardKind::BoundCheck,
        GuardKind::RangeCheckMax,
        GuardKind::RangeCheckFlip,
    ];
    let r = guard_efficacy(&cfg, &guards).unwrap();
    println!(
        "golden accuracy {:.4}; no guard: mean loss {:.3e}",
        r.golden_accuracy, r.baseline_mean_loss
    );
    for arm in r.arms {
        println!(
            "{:<16} mean loss {:.3e}  reduction {:5.1}%  detections {}",
            arm.guard.name(),
            arm.mean_loss,
            100.0 * arm.reduction,
            arm.detections
        );
    }
}
