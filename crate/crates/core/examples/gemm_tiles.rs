//! A tiled GEMM as a stream of HMMA instructions, checked against a plain
//! loop and saved as CSV.

use mpgemmfi::gemm::{run_gemm, GemmProblem};
use mpgemmfi::matrix::Matrix;
use mpgemmfi::verify::reference_gemm;
use mpgemmfi::FpFormat;

fn main() {
    let f = FpFormat::Fp16;
    let a = Matrix::from_fn(40, 24, |i, k| ((i * 3 + k) % 11) as f64 / 4.0 - 1.0);
    let b = Matrix::from_fn(24, 20, |k, j| ((k + 5 * j) % 7) as f64 / 2.0 - 1.5);
    let c = Matrix::filled(40, 20, 0.5f32);
    let p = GemmProblem::from_values(f, &a, &b, &c).unwrap();
    println!(
        "padded extents {:?}, tiles (m, n, k) {:?}",
        p.padded_extents(),
        p.tiles()
    );
    println!(
        "{} HMMA instructions, {} fault sites",
        p.instruction_count(),
        p.enumerate_sites()
    );
    for (i, t) in p.instruction_stream().iter().take(5).enumerate() {
        println!("  instr {i}: tile m{} n{} k{}", t.tile_m, t.tile_n, t.tile_k);
    }

    let d = run_gemm(&p, None).unwrap();
    let expected = reference_gemm(
        &a.map(|&v| mpgemmfi::encode(v, f)),
        &b.map(|&v| mpgemmfi::encode(v, f)),
        &c,
    );
    assert_eq!(d, expected);
    println!("D matches the reference loop bit for bit; D[0,0] = {}", d.get(0, 0));

    let path = std::env::temp_dir().join("mpgemmfi_d.csv");
    d.save(&path).unwrap();
    println!("wrote {}", path.display());
}
