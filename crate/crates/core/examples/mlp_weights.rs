//! The reference MLP: golden accuracy per format and a weights round trip.

use mpgemmfi::workload::{build_workload, load_weights, Workload, WorkloadSpec};
use mpgemmfi::FpFormat;

fn main() {
    for f in FpFormat::ALL {
        let w = build_workload(&WorkloadSpec::default_mlp(f)).unwrap();
        let g = w.run_golden().unwrap();
        println!(
            "{f}: {} HMMA instructions, accuracy vs binary64 teacher {:.4}",
            g.instruction_count(),
            g.accuracy.unwrap()
        );
    }

    let w = build_workload(&WorkloadSpec::default_mlp(FpFormat::Bf16)).unwrap();
    let mlp = w.mlp().unwrap();
    let path = std::env::temp_dir().join("mpgemmfi_mlp.mpwl");
    mlp.save_weights(&path).unwrap();
    let weights = load_weights(&path).unwrap();
    let reloaded = Workload::mlp_with_weights(FpFormat::Bf16, weights, 42, 512).unwrap();
    assert_eq!(reloaded.mlp(), w.mlp());
    println!(
        "weights {:?} saved to {} and reloaded",
        mlp.layer_dims(),
        path.display()
    );
}
