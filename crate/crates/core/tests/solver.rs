mod common;

use common::*;
use treesdp::ipm::{pdipm_solve, solve_with_backend, Mode, SolverConfig, Status};
use treesdp::model::{domain_space_decompose, tree_for};
use treesdp::mpassing::Network;

#[test]
fn message_passing_tracks_central_solves_on_random_trees() {
    for seed in 0..8 {
        let p = random_instance(seed);
        let (tree, asg) = tree_for(&p).unwrap();
        let mut sh = Shadow::new(Network::new(&p, &tree, &asg).unwrap());
        let sol = solve_with_backend(&p, &SolverConfig::default(), &mut sh).unwrap();
        assert_eq!(sol.status, Status::Optimal, "seed {seed}");
        assert_eq!(sh.solves, 2 * sol.iterations);
        // Agreement is at rounding level until the reduced system becomes
        // ill-conditioned as μ → 0; after that both are only backward stable.
        for (k, &d) in sh.diffs.iter().enumerate() {
            let mu = if k < 2 {
                f64::INFINITY
            } else {
                sol.trace[k / 2 - 1].mu
            };
            let bound = if mu >= 1e-7 { 1e-8 } else { 1e-6 };
            assert!(d <= bound, "seed {seed} solve {k} at μ={mu:e}: {d:e}");
        }
    }
}

#[test]
fn modes_agree_on_status_and_objective() {
    for seed in 10..16 {
        let p = random_instance(seed);
        let run = |mode| {
            let cfg = SolverConfig {
                mode,
                tol: 1e-10,
                feas_tol: 1e-12,
                ..SolverConfig::default()
            };
            pdipm_solve(&p, &cfg, None).unwrap()
        };
        let c = run(Mode::Central);
        let d = run(Mode::Distributed);
        assert_eq!(c.status, d.status);
        let scale = 1.0 + c.primal_objective.abs();
        assert!(
            (c.primal_objective - d.primal_objective).abs() <= 1e-8 * scale,
            "seed {seed}"
        );
    }
}

#[test]
fn distributed_runs_are_bit_reproducible() {
    let p = random_instance(21);
    let cfg = SolverConfig {
        mode: Mode::Distributed,
        seed: 5,
        ..SolverConfig::default()
    };
    let a = pdipm_solve(&p, &cfg, None).unwrap();
    let b = pdipm_solve(&p, &cfg, None).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.state.x, b.state.x);

    let par = SolverConfig {
        parallel: true,
        ..cfg
    };
    let c = pdipm_solve(&p, &par, None).unwrap();
    assert_eq!(a.trace, c.trace);
}

#[test]
fn ledger_follows_the_pass_law() {
    let p = random_instance(33);
    let (tree, asg) = tree_for(&p).unwrap();
    let mut net = Network::new(&p, &tree, &asg).unwrap();
    let sol = solve_with_backend(&p, &SolverConfig::default(), &mut net).unwrap();
    let (q, h) = (tree.len(), tree.height);
    for r in &sol.trace {
        assert_eq!(r.ledger.passes, 6);
        assert_eq!(r.ledger.rounds, 12 * h);
        assert_eq!(r.ledger.messages, 12 * (q - 1));
        assert_eq!(r.ledger.factorizations, q);
    }
    for a in &net.agents {
        assert_eq!(a.factorization_count, sol.iterations);
        assert_eq!(a.communication_count, 12 * sol.iterations);
    }
}

#[test]
fn decomposed_problem_matches_dense_dual() {
    for seed in 0..4 {
        let s = inequality_instance(seed, 7);
        let cfg = SolverConfig {
            tol: 1e-10,
            feas_tol: 1e-12,
            ..SolverConfig::default()
        };
        let d = domain_space_decompose(&s).unwrap();
        let split = pdipm_solve(&d.problem, &cfg, Some((&d.tree, &d.assignment))).unwrap();
        let dense = pdipm_solve(&s.dense_dual().unwrap(), &cfg, None).unwrap();
        assert_eq!(split.status, Status::Optimal);
        assert_eq!(dense.status, Status::Optimal);
        let gap = (split.primal_objective - dense.primal_objective).abs();
        assert!(
            gap <= 1e-7 * (1.0 + dense.primal_objective.abs()),
            "seed {seed}: {gap}"
        );
    }
}
