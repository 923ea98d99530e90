//! Writes a synthetic dataset with three planted study groups as JSON.
//!
//! `cargo run --example planted -- demo/studies.json [seed]`

use triplet_meta::synthetic::{planted_groups, PlantedSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "studies.json".into());
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let planted = planted_groups(&PlantedSpec { seed, ..Default::default() })?;
    std::fs::write(&path, planted.dataset.to_canonical_json())?;
    let groups: Vec<String> = planted.groups.iter().map(usize::to_string).collect();
    eprintln!("wrote {} studies to {path}; planted groups {}", planted.dataset.len(), groups.join(""));
    Ok(())
}
