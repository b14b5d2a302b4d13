//! Run every transition kernel on the same two-class target and compare
//! acceptance and travel distance.

use sphere_ood::bench::{generate_synthetic_id, BenchConfig};
use sphere_ood::energy::{hard_margin_threshold, EnergyContext};
use sphere_ood::samplers::{transition, ChainState, HmcConfig, Variant};
use sphere_ood::{ClusterPair, Result};

fn main() -> Result<()> {
    let cfg = BenchConfig {
        dim: 16,
        num_classes: 2,
        points_per_class: 300,
        capacity: 300,
        ..BenchConfig::default()
    };
    let store = generate_synthetic_id(&cfg)?;
    let pair = ClusterPair::new(0, 1)?;
    let ctx = EnergyContext::new(&store, pair, 200, 2.0)?;
    let t_minus = hard_margin_threshold(&store, pair, 2.0, 0.1)?;
    let start = store.midpoint(pair)?;

    for variant in Variant::ALL {
        let hmc = HmcConfig { variant, ..HmcConfig::default() };
        let (mut mh, mut kept, mut travel, mut n) = (0, 0, 0.0, 0);
        for chain in 0..100 {
            let mut state = ChainState::new(start.clone(), Some(pair), t_minus, 7, chain);
            for _ in 0..hmc.rounds {
                let rec = transition(&ctx, &mut state, &hmc)?;
                mh += rec.mh_accept as usize;
                kept += rec.accepted as usize;
                n += 1;
            }
            travel += state.position.angle(&start);
        }
        println!(
            "{:>12}: MH acceptance {:.3}, accepted with margin {:.3}, mean travel {:.3} rad",
            variant.name(),
            mh as f64 / n as f64,
            kept as f64 / n as f64,
            travel / 100.0
        );
    }
    Ok(())
}
