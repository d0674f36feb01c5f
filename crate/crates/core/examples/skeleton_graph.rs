//! Hop distances and normalised adjacencies of the 33-joint pose skeleton.
//!
//! `cargo run --example skeleton_graph -- [max_hop]`

use slt_core::skelgraph::{build_hops, SkeletonTopology};

fn main() -> slt_core::Result<()> {
    let max_hop = std::env::args().nth(1).map_or(2, |s| s.parse().expect("max_hop"));
    let topo = SkeletonTopology::pose33();
    let names = topo.joint_names();
    println!("{} joints, {} bones", names.len(), topo.edges().len());
    for (a, b) in [(0, 11), (15, 12), (27, 16)] {
        println!("{} -> {}: {} hops", names[a], names[b], topo.hop_distance(a, b)?);
    }
    let hops = build_hops(&topo, max_hop)?;
    for (k, (raw, norm)) in hops.raw().iter().zip(hops.normalized()).enumerate() {
        let edges = raw.data().iter().filter(|&&v| v != 0.0).count();
        let max = norm.data().iter().cloned().fold(0.0, f64::max);
        println!("hop {k}: {edges} nonzero entries, largest normalised weight {max:.3}");
    }
    Ok(())
}
