//! Runs a campaign described by a TOML config and prints the summary.

use mpgemmfi::campaign::run_campaign;
use mpgemmfi::config::parse_config;
use mpgemmfi::record::write_jsonl;

const CONFIG: &str = r#"
[workload]
kind = "mlp"
format = "bf16"
layer_dims = [64, 32, 10]
dataset_size = 128

[fault]
bits = 2

[guard]
kind = "range_check_flip"

[campaign]
trials = 200
master_seed = 11
"#;

fn main() {
    let cfg = parse_config(CONFIG).unwrap();
    let (records, summary) = run_campaign(&cfg.campaign).unwrap();
    let mut head = Vec::new();
    write_jsonl(&mut head, &records[..3]).unwrap();
    print!("{}", String::from_utf8(head).unwrap());
    println!(
        "sdc rate {:.3}, zero diff {:.3}, detection rate {:?}, mean accuracy delta {:?}",
        summary.sdc_rate, summary.zero_diff_fraction, summary.guard_detection_rate, summary.mean_metric_delta
    );
}
