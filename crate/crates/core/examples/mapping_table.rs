//! Prints every coarse mapping applied to `0..V`, the toy illustration with
//! V = 9, L = 3 by default.
//!
//! cargo run --example mapping_table -- [V] [L]

use anyhow::Result;
use colactc::{CoarseMapper, MappingKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let v: usize = args.next().map_or(Ok(9), |s| s.parse())?;
    let l: usize = args.next().map_or(Ok(3), |s| s.parse())?;

    let ids: Vec<usize> = (0..v).collect();
    let rows = [
        ("Genuine Labels", MappingKind::Identity, v),
        ("Truncation", MappingKind::Truncation, l),
        ("Modulo", MappingKind::Modulo, l),
        ("Division", MappingKind::Division, l),
        ("Log-Scaling", MappingKind::LogScaling, l),
        ("Random", MappingKind::Random, l),
    ];
    println!("{:<15} {:>8}  ID sequence", "method", "# labels");
    for (name, kind, size) in rows {
        let mut mapper = CoarseMapper::with_seed(kind, v, size, 0)?;
        let mapped = mapper.map_sequence(&ids)?;
        let text: Vec<String> = mapped.iter().map(usize::to_string).collect();
        println!("{name:<15} {size:>8}  {}", text.join(","));
    }
    Ok(())
}
