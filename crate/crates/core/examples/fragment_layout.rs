//! Prints which A, B and D elements each lane of a warp holds.
//!
//! `cargo run --example fragment_layout -- bf16`

use mpgemmfi::hmma::{FragmentMap, HmmaShape, WARP_SIZE};
use mpgemmfi::FpFormat;

fn main() {
    let format: FpFormat = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "tf32".into())
        .parse()
        .expect("fp16, bf16 or tf32");
    let shape = HmmaShape::for_format(format);
    let map = FragmentMap::new(shape);
    println!("{format}: m{}n{}k{}", shape.m(), shape.n(), shape.k());
    for lane in 0..WARP_SIZE {
        let a: Vec<String> = (0..shape.a_slots())
            .map(|s| format!("{:?}", map.a_coord(lane, s)))
            .collect();
        let b: Vec<String> = (0..shape.b_slots())
            .map(|s| format!("{:?}", map.b_coord(lane, s)))
            .collect();
        let d: Vec<String> = (0..4).map(|r| format!("{:?}", map.d_coord(lane, r))).collect();
        println!(
            "lane {lane:>2}  A {}  B {}  D {}",
            a.join(" "),
            b.join(" "),
            d.join(" ")
        );
    }
    match map.check_bijection() {
        Ok(()) => println!("layout ok"),
        Err(e) => println!("layout broken: {e}"),
    }
    if let Err(e) = map.corrupted().check_bijection() {
        println!("corrupted copy is rejected: {e}");
    }
}
