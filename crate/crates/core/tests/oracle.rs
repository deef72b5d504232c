use groupdp::oracle::{random_group, solve_decomposed, solve_joint_oracle, verify_decomposition, GroupProblem, JointGroupSpec, OracleOptions};
use groupdp::statespace::JointSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop value iteration on the two-group joint problem,
/// written without any of the library's kernel machinery.
fn brute_force_two_groups(a: &GroupProblem, b: &GroupProblem, beta: f64, coupling: f64) -> Vec<f64> {
    let (n1, n2) = (a.n_states, b.n_states);
    let mut ev = vec![0.0; n1 * n2];
    for _ in 0..20_000 {
        let mut next = vec![0.0; n1 * n2];
        let mut gap = 0.0f64;
        for s1 in 0..n1 {
            for s2 in 0..n2 {
                let mut terms = Vec::with_capacity(4);
                for a1 in 0..2 {
                    for a2 in 0..2 {
                        let mut cont = 0.0;
                        for t1 in 0..n1 {
                            let p1 = a.kernels[a1][s1 * n1 + t1];
                            if p1 == 0.0 {
                                continue;
                            }
                            for t2 in 0..n2 {
                                cont += p1 * b.kernels[a2][s2 * n2 + t2] * ev[t1 * n2 + t2];
                            }
                        }
                        let bonus = if a1 == 1 && a2 == 1 { coupling } else { 0.0 };
                        terms.push(a.utility[a1][s1] + b.utility[a2][s2] + bonus + beta * cont);
                    }
                }
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
                gap = gap.max((v - ev[s1 * n2 + s2]).abs());
                next[s1 * n2 + s2] = v;
            }
        }
        ev = next;
        if gap < 1e-13 {
            break;
        }
    }
    ev
}

#[test]
fn joint_oracle_matches_an_independent_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..6 {
        let g = vec![random_group(&mut rng, 3), random_group(&mut rng, 4)];
        let spec = JointGroupSpec::new(g.clone());
        let beta = 0.85;
        let expect = brute_force_two_groups(&g[0], &g[1], beta, 0.0);
        let joint = solve_joint_oracle(&spec, beta, &OracleOptions::default()).unwrap();
        let dec = solve_decomposed(&spec, beta, &OracleOptions::default().vfi).unwrap();
        let space = JointSpace::new(&[3, 4]).unwrap();
        for s in 0..12 {
            assert!((joint.ev[s] - expect[s]).abs() < 1e-9, "{} vs {}", joint.ev[s], expect[s]);
            assert!((dec.joint_value(&space, s) - expect[s]).abs() < 1e-9);
        }
    }
}

#[test]
fn coupling_breaks_the_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = vec![random_group(&mut rng, 3), random_group(&mut rng, 3)];
    let mut spec = JointGroupSpec::new(g.clone());
    spec.coupling = 2.0;
    let expect = brute_force_two_groups(&g[0], &g[1], 0.9, 2.0);
    let joint = solve_joint_oracle(&spec, 0.9, &OracleOptions::default()).unwrap();
    for s in 0..9 {
        assert!((joint.ev[s] - expect[s]).abs() < 1e-9);
    }
    let report = verify_decomposition(&spec, 0.9, 1e-9, &OracleOptions::default()).unwrap();
    assert!(!report.passed);
    assert!(report.max_abs_value_gap > 1e-3);
}

#[test]
fn joint_size_guard() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = JointGroupSpec::new(vec![random_group(&mut rng, 8), random_group(&mut rng, 8)]);
    let opts = OracleOptions {
        max_joint: 63,
        ..Default::default()
    };
    let e = solve_joint_oracle(&spec, 0.9, &opts).unwrap_err();
    assert_eq!(e.kind(), "size");
}
