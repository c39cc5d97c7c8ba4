//! Chooses an AN power by grid search over a scalarised security,
//! reliability and covertness objective. The metric curves here are
//! closed-form stand-ins so the example runs instantly; the harness feeds
//! the same search with measured curves.
//!
//! ```text
//! cargo run --release --example power_allocation
//! ```

use semshield::shield::{allocate_power, default_an_grid, AllocationWeights, PowerMetrics};

fn metrics(p: f64) -> semshield::Result<PowerMetrics> {
    Ok(PowerMetrics {
        privacy_mi: 2.2 * (-12.0 * p).exp(),
        comm_mse: 0.005 + 0.02 * p / (1.0 + p),
        percept_mse: p,
    })
}

fn main() -> semshield::Result<()> {
    let grid = default_an_grid();
    for w in [[0.4, 0.4, 0.2], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] {
        let weights = AllocationWeights::try_from(w)?;
        let r = allocate_power(&grid, metrics, &weights)?;
        println!(
            "weights {w:?}: an_power {:.4}  mi {:.3}  mse {:.5}  percept {:.4}  objective {:.4}",
            r.an_power, r.metrics.privacy_mi, r.metrics.comm_mse, r.metrics.percept_mse, r.objective
        );
    }

    let r = allocate_power(&grid, metrics, &AllocationWeights::default())?;
    println!("\nfull table for the default weights:");
    for g in &r.table {
        let mark = if g.an_power == r.an_power { " <" } else { "" };
        println!("  {:.4}  {:.4}{mark}", g.an_power, g.objective);
    }
    Ok(())
}
