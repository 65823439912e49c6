//! Encoding, decoding and bit flips in the three input formats.
//!
//! Run with `cargo run --example fp_formats`.

use mpgemmfi::{decode, encode, Encoded, FpFormat};

fn main() {
    for f in FpFormat::ALL {
        println!(
            "{f}: {} exponent bits, {} mantissa bits, bias {}, {} bits total",
            f.exponent_bits(),
            f.mantissa_bits(),
            f.exponent_bias(),
            f.total_bits()
        );
        for v in [1.0, -2.5, 0.1, 65504.0, 1e-6] {
            let e = encode(v, f);
            println!("  {v:>10} -> {} -> {}", e.to_hex(), decode(e));
        }
        let zero = encode(0.0, f);
        let flipped = zero.flip_bits(&[f.mantissa_msb_position()]).unwrap();
        println!("  0 with the mantissa msb flipped: {:e}", decode(flipped));
    }

    // BF16 values whose exponent has the msb set and one more bit.
    println!("\nbf16 exponent 1xxxxxxx, mantissa all ones / all zeros:");
    for shift in (0..7).rev() {
        let exp = 0b1000_0000 | (1 << shift);
        let hi = Encoded::from_fields(FpFormat::Bf16, false, exp, 0x7f);
        let lo = Encoded::from_fields(FpFormat::Bf16, false, exp, 0);
        println!("  {exp:08b}  {:>12.6e}  {:>12.6e}", decode(hi), decode(lo));
    }
}
