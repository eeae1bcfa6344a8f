//! Simulate a built-in scenario and write it to disk.
//!
//! ```bash
//! cargo run --example simulate_scenario -- tangential /tmp/tangential
//! ```

use std::path::PathBuf;

use scanfuse::sim::{export_dataset, load_dataset, simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "radial".into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("scanfuse-{name}")));

    let scenario = Scenario::builtin(&name)?;
    let ds = simulate(&scenario, 7)?;
    export_dataset(&ds, &out)?;

    let labeled: usize = ds.frames.iter().map(|f| f.points.iter().filter(|p| p.object_id.is_some()).count()).sum();
    let total: usize = ds.frames.iter().map(|f| f.points.len()).sum();
    println!("{} frames, {total} returns ({labeled} on objects) -> {}", ds.frames.len(), out.display());

    // The exported files load back to the same dataset.
    let back = load_dataset(&out)?;
    println!("reload matches: {}", back.frames.len() == ds.frames.len());
    Ok(())
}
