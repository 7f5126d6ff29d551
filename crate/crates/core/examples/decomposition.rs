//! Domain-space decomposition of a small sparse LMI and a check of the
//! decomposed optimum against the dense formulation.
//!
//! `cargo run --release --example decomposition`

use treesdp::ipm::{pdipm_solve, SolverConfig};
use treesdp::model::{domain_space_decompose, SparseInequalitySdp, Term};
use treesdp::symcone::SymMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Edges 1–2, 1–3, 2–4, 3–4, 4–5: the 4-cycle needs one chord.
    let off = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?;
    let mut terms: Vec<Term> = [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]
        .iter()
        .map(|&(a, b)| Term {
            j: vec![a, b],
            mat: off.clone(),
        })
        .collect();
    terms.extend((0..5).map(|i| Term {
        j: vec![i],
        mat: SymMatrix::identity(1),
    }));
    let mut constants: Vec<Term> = (0..5)
        .map(|i| Term {
            j: vec![i],
            mat: SymMatrix::from_diagonal(&[-2.0]),
        })
        .collect();
    for (j, m) in [(vec![0, 1], 0.7), (vec![2, 3], -0.4), (vec![3, 4], 0.9)] {
        constants.push(Term {
            j,
            mat: off.scale(m),
        });
    }
    let s = SparseInequalitySdp {
        n: 5,
        c: vec![0.4, 0.8, -0.6, 0.5, 0.3, -1.0, -0.5, -2.0, -1.0, -0.3],
        terms,
        constants,
        nonneg: vec![],
    };

    let d = domain_space_decompose(&s)?;
    let one = |v: &[usize]| v.iter().map(|x| x + 1).collect::<Vec<_>>();
    println!(
        "fill edges: {:?} ({:.1}%)",
        d.fill_edges
            .iter()
            .map(|&(a, b)| (a + 1, b + 1))
            .collect::<Vec<_>>(),
        d.fill_percent
    );
    for (k, c) in d.tree.cliques.iter().enumerate() {
        let parent = if k == d.tree.root {
            "root".to_string()
        } else {
            format!("parent {}", d.tree.parent[k] + 1)
        };
        println!(
            "clique {}: {:?} ({parent}), subproblems {:?}",
            k + 1,
            one(c),
            one(&d.assignment.phi[k])
        );
    }

    let cfg = SolverConfig {
        tol: 1e-10,
        feas_tol: 1e-12,
        ..SolverConfig::default()
    };
    let split = pdipm_solve(&d.problem, &cfg, Some((&d.tree, &d.assignment)))?;
    let dense = pdipm_solve(&s.dense_dual()?, &cfg, None)?;
    let v: Vec<Vec<f64>> = split
        .state
        .v
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let y = d.recover_y(&v);
    println!(
        "decomposed: {} in {} iterations, objective {:.10}",
        split.status, split.iterations, split.primal_objective
    );
    println!(
        "dense:      {} in {} iterations, objective {:.10}",
        dense.status, dense.iterations, dense.primal_objective
    );
    let lmax = s.lmi_value(&y).symmetric_eigenvalues().max();
    let cy: f64 = s.c.iter().zip(&y).map(|(c, y)| c * y).sum();
    println!("recovered y = {y:.4?}");
    println!("cᵀy = {cy:.10}, largest LMI eigenvalue {lmax:.2e}");
    Ok(())
}
