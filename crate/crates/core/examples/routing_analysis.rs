//! Counterfactual routing over simulated outcomes: how often each fixed
//! strategy, a per-sample oracle and a noisy learned router are right, and
//! what they cost.
//!
//!     cargo run --example routing_analysis

use forge::env::Strategy;
use forge::eval::{routing_report, Cost, RoutingRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<RoutingRecord> = (0..1000)
        .map(|i| {
            let hard = rng.random_bool(0.3);
            let direct_ok = rng.random_bool(if hard { 0.3 } else { 0.85 });
            let agentic_ok = rng.random_bool(if hard { 0.6 } else { 0.8 });
            let actions = rng.random_range(1..6) as f64;
            let direct = Cost::new(0.0, rng.random_range(80.0..200.0), rng.random_range(200.0..600.0));
            let agentic = Cost::new(actions, 400.0 * actions, 1500.0 * actions);
            // The learned router sees difficulty through noise.
            let learned = if hard ^ rng.random_bool(0.2) { Strategy::Agentic } else { Strategy::Direct };
            RoutingRecord::new(&format!("s{i}"), (direct_ok, agentic_ok), (direct, agentic), learned)
        })
        .collect();
    let r = routing_report(&records)?;
    println!(
        "{:<15} {:>8} {:>8} {:>9} {:>11} {:>8}",
        "strategy", "accuracy", "actions", "tokens", "latency ms", "direct"
    );
    for (name, s) in [
        ("always direct", r.always_direct),
        ("always agentic", r.always_agentic),
        ("oracle", r.oracle),
        ("learned", r.learned),
    ] {
        println!(
            "{name:<15} {:>8.3} {:>8.2} {:>9.0} {:>11.0} {:>8.2}",
            s.accuracy, s.mean_actions, s.mean_tokens, s.mean_latency_ms, s.direct_fraction
        );
    }
    Ok(())
}
