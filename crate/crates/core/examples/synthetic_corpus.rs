//! Writes the synthetic world (dataset, tool fixtures, recorded policy
//! fixtures and `forge.json`) to a directory so `forge generate` can replay it.
//!
//!     cargo run --example synthetic_corpus -- /tmp/synthetic 200

use std::path::PathBuf;
use std::sync::Arc;

use forge::synthetic::{SyntheticSpec, SyntheticWorld};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".to_string()));
    let samples = args.next().and_then(|n| n.parse().ok()).unwrap_or(200);
    let world = Arc::new(SyntheticWorld::new(SyntheticSpec { samples, ..SyntheticSpec::default() }));
    let config = world.materialize(&dir)?;
    println!("wrote {}", config.display());
    println!("next: forge generate --config {} --out {}/run", config.display(), dir.display());
    Ok(())
}
