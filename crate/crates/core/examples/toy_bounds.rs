//! Three upper bounds on the toy failure probability, 100 evaluations each.
//!
//! cargo run --release -p rarebound --example toy_bounds

use rarebound::bayes::{credible_bound, default_grid, CredibleConfig};
use rarebound::blackbox::{toy_distribution, toy_objective};
use rarebound::bounds::crude_mc_bound;
use rarebound::campaign::{build_design, toy_oracle_pi, CampaignConfig};
use rarebound::error::Result;
use rarebound::kriging::{loo_residuals, LooScaling};
use rarebound::mbis::{run_mbis, MbisConfig};

fn main() -> Result<()> {
    let rho = 0.01;
    let dist = toy_distribution();
    let config = CampaignConfig::default();

    let crude = crude_mc_bound(&toy_objective(100), &dist, 100, rho, 0.02, 1)?;
    println!("crude Monte Carlo, {} failures in 100: bound {:.3e}", crude.successes.unwrap_or(0), crude.bound);

    // 50 points for the model, 50 importance-sampling calls
    let obj = toy_objective(100);
    let model = build_design(&obj, &dist, &config, 50, 2)?;
    let loo = loo_residuals(&model, LooScaling::StdDev)?;
    println!("model on 50 points: theta {:.4}, max |LOO residual| {:.2}", model.kernel().theta[0], loo.max_abs);
    let mbis = run_mbis(&model, &obj, &dist, rho, &MbisConfig::default(), 3)?;
    println!(
        "importance sampling, {} failures in {}: bound {:.3e} at level {}",
        mbis.gamma, mbis.m, mbis.bound, mbis.level
    );

    let obj = toy_objective(100);
    let model = build_design(&obj, &dist, &config, 100, 4)?;
    let grid = default_grid(&model, dist.domain(), 100, 5)?;
    let cred = credible_bound(&model, &dist, &grid, rho, &CredibleConfig::default(), 6)?;
    println!("credible bound on 100 points: {:.3e} at level {}", cred.report.bound, cred.report.level);

    let (pi, se) = toy_oracle_pi(rho, 10_000_000, 7)?;
    println!("reference value: {pi:.3e} +- {se:.1e}");
    Ok(())
}
