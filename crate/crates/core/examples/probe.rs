//! Scratch probe for scenario calibration (not part of the deliverable API).

use std::sync::Arc;

use gridlock_core::episode::{run_episode, EpisodeOptions, MethodSpec};
use gridlock_core::grid::bundled_grid;

fn main() {
    let congested = Arc::new(bundled_grid());
    let original = Arc::new(congested.without_closures());
    let opts = EpisodeOptions::default();

    let t0 = std::time::Instant::now();
    let orig = run_episode(&original, &MethodSpec::Static, &opts, 0).unwrap();
    let cong = run_episode(&congested, &MethodSpec::Static, &opts, 0).unwrap();
    let scats = run_episode(&congested, &MethodSpec::Scats, &opts, 0).unwrap();
    println!("3 episodes in {:?}", t0.elapsed());

    let summarize = |name: &str, o: &gridlock_core::episode::EpisodeOutcome| {
        let mean =
            o.ledger.iter().map(|e| e.travel_time as f64).sum::<f64>() / o.ledger.len() as f64;
        let max = o.ledger.iter().map(|e| e.travel_time).max().unwrap();
        let peak = o.series.iter().map(|r| r.running).max().unwrap();
        let dur = o.ticks;
        println!(
            "{name:10} mean_tt {mean:8.2}  max_tt {max:6}  peak_running {peak:4}  ticks {dur:6}"
        );
    };
    summarize("original", &orig);
    summarize("congestion", &cong);
    summarize("scats", &scats);

    // How load-bearing is the closed road?
    {
        use gridlock_core::network::shortest_path;
        let net = &congested.network;
        let closed: Vec<_> = congested.closures.iter().map(|c| c.segment).collect();
        let mut through = 0usize;
        let mut edge_flow = std::collections::HashMap::<usize, usize>::new();
        for d in &congested.demand {
            let route = shortest_path(net, d.origin, d.destination, &[]).unwrap();
            if route.iter().any(|s| closed.contains(s)) {
                through += 1;
            }
            for s in &route {
                *edge_flow.entry(s.0).or_default() += 1;
            }
        }
        let mut flows: Vec<(usize, usize)> = edge_flow.into_iter().collect();
        flows.sort_by_key(|&(_, f)| std::cmp::Reverse(f));
        println!("\nvehicles routed through the closed road: {through} / {}", congested.demand.len());
        println!("busiest edges (veh over 2700 s):");
        for (s, f) in flows.iter().take(8) {
            let seg = net.segment(gridlock_core::SegmentIdx(*s));
            println!("  {:18} {f:4} veh ({:.3} veh/s)", seg.id, *f as f64 / 2700.0);
        }
    }

    // Peak ratio at the same tick (criterion-5 shape).
    let mut worst_ratio: f64 = 0.0;
    for (a, b) in orig.series.iter().zip(&cong.series) {
        if a.running >= 20 {
            worst_ratio = worst_ratio.max(b.running as f64 / a.running.max(1) as f64);
        }
    }
    println!("max congestion/original running ratio: {worst_ratio:.2}");
    for t in [300usize, 600, 900, 1200, 1500, 1800, 2100, 2400, 2700] {
        let a = orig.series.get(t).map(|r| r.running).unwrap_or(0);
        let b = cong.series.get(t).map(|r| r.running).unwrap_or(0);
        let c = scats.series.get(t).map(|r| r.running).unwrap_or(0);
        println!("t={t:5}  original {a:4}  congestion {b:4}  scats {c:4}");
    }
}
