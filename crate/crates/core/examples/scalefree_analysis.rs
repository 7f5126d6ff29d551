//! Robustness analysis over a capped preferential-attachment network.
//!
//! `cargo run --release --example scalefree_analysis -- [N] [seed] [attach] [max_degree]`

use treesdp::ipm::{Mode, SolverConfig};
use treesdp::iqc::{analyze, gen_scalefree, robustness_verdict, DEFAULT_MARGIN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).map_or(Ok(d), |s| s.parse());
    let (n, seed, attach, cap) = (arg(0, 500)?, arg(1, 1)? as u64, arg(2, 1)?, arg(3, 8)?);

    let sys = gen_scalefree(n, seed, &[1.0], attach, cap)?;
    let cfg = SolverConfig {
        mode: Mode::Distributed,
        ..SolverConfig::default()
    };
    let t = std::time::Instant::now();
    let results = analyze(&sys, &cfg, DEFAULT_MARGIN)?;
    for r in &results {
        println!(
            "m = {}, order = {}, {} cliques (largest {}), height {}, fill {:.2}%",
            r.variables, r.order, r.cliques, r.max_clique, r.tree_height, r.fill_percent
        );
        println!(
            "{} after {} iterations, final μ = {:.2e}, λ_max = {:.3e}",
            r.solution.status, r.solution.iterations, r.solution.state.mu, r.check.max_eigenvalue
        );
    }
    println!("{}", robustness_verdict(&results));
    println!("elapsed {:.2?}", t.elapsed());
    Ok(())
}
