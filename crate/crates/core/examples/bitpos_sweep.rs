//! SDC rate per flipped bit position.
//!
//! `cargo run --release --example bitpos_sweep -- tf32 200`

use mpgemmfi::campaign::{run_bit_sweep, CampaignConfig};
use mpgemmfi::fault::FaultSpec;
use mpgemmfi::workload::{ValueDistribution, WorkloadSpec};
use mpgemmfi::FpFormat;

fn main() {
    let mut args = std::env::args().skip(1);
    let format: FpFormat = args.next().unwrap_or_else(|| "bf16".into()).parse().unwrap();
    let trials: usize = args.next().map_or(200, |t| t.parse().unwrap());
    let spec = WorkloadSpec::random_gemm(format, (64, 32, 64), ValueDistribution::Normal, 7);
    // Tolerance 1e-3: only deviations above 0.1% of the golden element count.
    let cfg = CampaignConfig::new(spec, FaultSpec::fixed(0), trials, 7).with_tolerance(1e-3);
    let (_, summary) = run_bit_sweep(&cfg).unwrap();
    let rates = summary.per_bit_sdc.unwrap();
    let sign = format.sign_position();
    let exp_msb = format.exponent_msb_position();
    for (bit, rate) in rates.iter().rev() {
        let field = if *bit == sign {
            "sign"
        } else if *bit > format.mantissa_msb_position() {
            "exp"
        } else {
            "man"
        };
        let marker = if *bit == exp_msb { " <- exponent msb" } else { "" };
        println!(
            "bit {bit:>2} {field:<4} {rate:.3} {}{marker}",
            "#".repeat((rate * 40.0) as usize)
        );
    }
}
