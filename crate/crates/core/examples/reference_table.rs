//! Regenerates `tests/data/sim_reference.json`: session-length and watch-per-video means
//! of the default configuration from a large simulation.
//!
//! cargo run --release --example reference_table [n_sessions]

use serde::Serialize;

use dqlab::sim::{draw_population, simulate_range, Mode, SimConfig};

#[derive(Serialize)]
struct Row {
    mode: Mode,
    videos_per_session: f64,
    videos_per_session_se: f64,
    watch_per_video: f64,
    watch_per_video_se: f64,
    truncated: usize,
}

#[derive(Serialize)]
struct Table {
    config: SimConfig,
    n_sessions: u64,
    rows: Vec<Row>,
}

fn main() -> dqlab::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(10_000_000, |s| s.parse().expect("session count"));
    let cfg = SimConfig::default();
    let pop = draw_population(&cfg)?;
    let mut rows = Vec::new();
    for mode in [Mode::Experiment, Mode::GlobalControl, Mode::GlobalTreatment] {
        // per-session (length, watch) moments
        let (mut sl, mut sl2, mut sw, mut sw2, mut slw) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut truncated = 0;
        let mut start = 0;
        while start < n {
            let end = (start + 200_000).min(n);
            for s in simulate_range(&cfg, &pop, start..end, mode)? {
                let (l, w) = (s.len() as f64, s.total_reward());
                sl += l;
                sl2 += l * l;
                sw += w;
                sw2 += w * w;
                slw += l * w;
                truncated += usize::from(!s.terminated);
            }
            start = end;
        }
        let nf = n as f64;
        let ml = sl / nf;
        let ratio = sw / sl;
        let var_l = (sl2 / nf - ml * ml) * nf / (nf - 1.0);
        // residual w - ratio * l has mean zero by construction
        let var_d = (sw2 - 2.0 * ratio * slw + ratio * ratio * sl2) / (nf - 1.0);
        rows.push(Row {
            mode,
            videos_per_session: ml,
            videos_per_session_se: (var_l / nf).sqrt(),
            watch_per_video: ratio,
            watch_per_video_se: var_d.sqrt() / (ml * nf.sqrt()),
            truncated,
        });
        eprintln!("{mode:?} done");
    }
    let table = Table {
        config: cfg,
        n_sessions: n,
        rows,
    };
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sim_reference.json");
    std::fs::write(&path, serde_json::to_string_pretty(&table)?)?;
    println!("{}", path.display());
    Ok(())
}
