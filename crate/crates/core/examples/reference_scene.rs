//! Runs the pipeline on the synthetic reference scene and prints the summary.
//!
//!     cargo run --release -p strikedip --example reference_scene [seed]

use strikedip::synth::{generate_synthetic, reference_scene};
use strikedip::{run_on_cloud, RunConfig};

fn main() -> strikedip::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let syn = generate_synthetic(&reference_scene(seed))?;
    let out = run_on_cloud(&syn.cloud, Some(&syn.truth), &RunConfig::default())?;
    print!("{}", out.report.summary_text());
    Ok(())
}
