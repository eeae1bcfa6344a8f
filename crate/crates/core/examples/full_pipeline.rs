//! End to end: simulate, run both modes, evaluate and print a comparison.

use scanfuse::cli::{evaluate, run_dataset, uncorrected_clouds, Mode, PipelineConfig, RunInfo};
use scanfuse::sim::{simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "tangential".into());
    let ds = simulate(&Scenario::builtin(&name)?, 0)?;

    println!("{:<10} {:>9} {:>9} {:>10} {:>8} {:>9}", "mode", "crisp", "raw", "vel rmse", "iou", "dist err");
    for mode in [Mode::LidarOnly, Mode::Fused] {
        let cfg = PipelineConfig {
            mode,
            ..Default::default()
        };
        let run = run_dataset(&ds, &cfg)?;
        let info = RunInfo {
            schema_version: 1,
            dataset_manifest_sha256: String::new(),
            scenario: name.clone(),
            mode,
            frames: ds.frames.len(),
            timings_ms: run.timings,
            config: cfg.clone(),
        };
        let m = evaluate(&ds, &run, &uncorrected_clouds(&ds, &cfg)?, &info, &cfg.crispness)?;
        let f = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
        let s = &m.summary;
        println!(
            "{:<10} {:>9} {:>9} {:>10} {:>8} {:>9}",
            mode.as_str(),
            f(s.crispness_corrected),
            f(s.crispness_uncorrected),
            f(s.velocity_rmse),
            f(s.mean_iou),
            f(s.distance_relative_error)
        );
    }
    Ok(())
}
