//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use groupdp::bellman::{FlowTables, StructuralParams};
use groupdp::kernel::KernelPair;
use groupdp::statespace::{Binning, StateSpace, StateSpec};
use groupdp::transitions::{assemble_kernels, FailureHazard, NeighborProcess};
use rand::Rng;

pub struct RandomModel {
    pub space: StateSpace,
    pub params: StructuralParams,
    pub flows: FlowTables,
    pub kernels: KernelPair,
}

fn simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

/// Random hazard, neighbor process and parameters on the standard
/// 58-month, 3-cage space with the given binning (354 / 1,416 / 3,186 states).
pub fn random_model(rng: &mut impl Rng, binning: Binning, beta: f64) -> RandomModel {
    let spec = StateSpec::default().with_binning(binning);
    let space = StateSpace::new(spec).unwrap();
    let cells: Vec<f64> = (0..(spec.age_max + 1) * spec.n_cages).map(|_| rng.random_range(0.0..0.2)).collect();
    let hazard = FailureHazard::from_fn(spec.age_max, spec.n_cages, |a, c| cells[(a * spec.n_cages + c) as usize]);
    let levels = binning.levels();
    let pairs = levels * levels;
    let mut table = Vec::with_capacity(spec.n_cages as usize * pairs * pairs);
    for _ in 0..spec.n_cages as usize * pairs {
        table.extend(simplex(rng, pairs));
    }
    let neighbors = NeighborProcess {
        levels,
        n_cages: spec.n_cages,
        table,
        counts: vec![0; spec.n_cages as usize * pairs],
    };
    let kernels = assemble_kernels(&hazard, &neighbors, &space).unwrap();
    let arity = levels - 1;
    let params = StructuralParams {
        theta_age: (0..spec.n_cages).map(|_| rng.random_range(-0.05..0.0)).collect(),
        theta_fail: rng.random_range(-10.0..0.0),
        theta_rc: rng.random_range(-10.0..0.0),
        gamma_lag: (0..arity).map(|_| rng.random_range(-1.0..1.0)).collect(),
        gamma_fail: (0..arity).map(|_| rng.random_range(-1.0..1.0)).collect(),
        beta,
    };
    let flows = FlowTables::build(&space, &params).unwrap();
    RandomModel {
        space,
        params,
        flows,
        kernels,
    }
}
