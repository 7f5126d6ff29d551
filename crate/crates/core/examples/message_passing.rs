//! Solves one coupled SDP centrally and over the clique tree, and prints the
//! communication ledger of the agent network.
//!
//! `cargo run --release --example message_passing -- [cliques] [seed]`

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treesdp::ipm::{pdipm_solve, solve_with_backend, Mode, SolverConfig};
use treesdp::model::{tree_for, CoupledSdp, Subproblem};
use treesdp::mpassing::Network;
use treesdp::symcone::SymMatrix;

fn spd(rng: &mut impl Rng, n: usize) -> SymMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&(&a * a.transpose() / n as f64 + DMatrix::identity(n, n))).unwrap()
}

/// Overlapping 3×3 blocks along a path, `x_ii = 1` on each block's new index.
fn path_problem(q: usize, seed: u64) -> CoupledSdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subproblems = (0..q)
        .map(|k| {
            let j = vec![2 * k, 2 * k + 1, 2 * k + 2];
            let mut e = DMatrix::zeros(3, 3);
            e[(2, 2)] = 1.0;
            Subproblem {
                j,
                w: spd(&mut rng, 3),
                q: vec![SymMatrix::symmetrize(&e).unwrap()],
                b: vec![1.0],
            }
        })
        .collect();
    CoupledSdp {
        n: 2 * q + 1,
        subproblems,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let q: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let p = path_problem(q, seed);

    let (tree, asg) = tree_for(&p)?;
    println!("{} agents, tree height {}", tree.len(), tree.height);

    let cfg = SolverConfig {
        mode: Mode::Distributed,
        ..SolverConfig::default()
    };
    let mut net = Network::new(&p, &tree, &asg)?;
    let dist = solve_with_backend(&p, &cfg, &mut net)?;
    let central = pdipm_solve(
        &p,
        &SolverConfig {
            mode: Mode::Central,
            ..cfg
        },
        None,
    )?;
    println!(
        "distributed: {} in {} iterations, objective {:.12}",
        dist.status, dist.iterations, dist.primal_objective
    );
    println!(
        "central:     {} in {} iterations, objective {:.12}",
        central.status, central.iterations, central.primal_objective
    );

    for r in &dist.trace {
        println!(
            "{:>3}  μ = {:.2e}  passes {}  rounds {}  messages {}  factorizations {}",
            r.iter,
            r.mu,
            r.ledger.passes,
            r.ledger.rounds,
            r.ledger.messages,
            r.ledger.factorizations
        );
    }
    let total = net.total_ledger();
    println!(
        "total: {} rounds = 12 · {} · {}; each agent factored {} times and communicated {} times",
        total.rounds,
        tree.height,
        dist.iterations,
        net.agents[0].factorization_count,
        net.agents[0].communication_count
    );
    Ok(())
}
