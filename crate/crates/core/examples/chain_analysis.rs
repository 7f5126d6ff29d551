//! Robustness analysis of a chain of uncertain subsystems at ω = 1.
//!
//! `cargo run --release --example chain_analysis -- [N] [seed]`

use treesdp::ipm::{Mode, SolverConfig};
use treesdp::iqc::{analyze, gen_chain, robustness_verdict, DEFAULT_MARGIN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(100), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let sys = gen_chain(n, seed, &[1.0])?;
    let cfg = SolverConfig {
        tol: 1e-12,
        feas_tol: 1e-12,
        mode: Mode::Distributed,
        ..SolverConfig::default()
    };
    let t = std::time::Instant::now();
    let results = analyze(&sys, &cfg, DEFAULT_MARGIN)?;
    for r in &results {
        println!(
            "ω = {}: m = {}, order = {}, {} cliques (largest {}), height {}, fill {:.2}%",
            r.omega, r.variables, r.order, r.cliques, r.max_clique, r.tree_height, r.fill_percent
        );
        println!(
            "  {} after {} iterations, λ_max = {:.3e}, min r = {:.3e}, min x = {:.3e}",
            r.solution.status,
            r.solution.iterations,
            r.check.max_eigenvalue,
            r.check.min_r,
            r.check.min_x
        );
        for it in &r.solution.trace {
            println!(
                "  {:>3}  μ = {:.3e}  ‖r_p‖² = {:.2e}  ‖r_d‖² = {:.2e}  α = ({:.3}, {:.3})  σ = {:.3e}",
                it.iter, it.mu, it.r_primal_sq, it.r_dual_sq, it.alpha_p, it.alpha_d, it.sigma
            );
        }
        let f = r
            .solution
            .trace
            .iter()
            .map(|i| i.ledger.factorizations)
            .sum::<usize>();
        println!(
            "  local factorizations: {f} in total over {} agents",
            r.cliques
        );
    }
    println!("{}", robustness_verdict(&results));
    println!("elapsed {:.2?}", t.elapsed());
    Ok(())
}
