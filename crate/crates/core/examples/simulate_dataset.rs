//! Simulates a small experiment, writes it in the newline-delimited format and reads it back.

use dqlab::data::{read_dataset, write_dataset};
use dqlab::sim::{generate_dataset, SimConfig};

fn main() -> dqlab::Result<()> {
    let cfg = SimConfig {
        n_viewers: 2_000,
        n_creators: 20_000,
        holdout_viewers: 200,
        seed: 11,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let steps = ds.n_steps();
    let watch: f64 = ds.sessions.iter().map(|s| s.total_reward()).sum();
    println!(
        "{} sessions, {:.2} videos per session, {:.3} watch per video",
        ds.sessions.len(),
        steps as f64 / ds.sessions.len() as f64,
        watch / steps as f64
    );
    let dir = std::env::temp_dir().join("dqlab_example");
    std::fs::create_dir_all(&dir)?;
    let prefix = dir.join("experiment");
    let paths = write_dataset(&ds, &prefix, Some(&cfg))?;
    let (back, header) = read_dataset(&prefix)?;
    assert_eq!(back.sessions, ds.sessions);
    println!("wrote {} (assignments digest {})", paths.main.display(), &header.assignments_digest[..12]);
    Ok(())
}
