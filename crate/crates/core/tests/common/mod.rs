#![allow(dead_code)]

use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssgrl_core::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use ssgrl_core::tape::Fault;
use ssgrl_core::{ParamId, ParamSet, Result, Tape, Tensor, Var};

/// Fixed-seed proptest configuration so runs are reproducible.
pub fn cases(n: u32) -> Config {
    Config {
        cases: n,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Finite-difference check of `build` with respect to every tensor in `ps`.
///
/// The output is contracted with fixed random weights so that no entry of the
/// gradient is trivially symmetric.
pub fn check_with<F>(ps: &mut ParamSet, seed: u64, fault: Fault, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let ids: Vec<ParamId> = ps.ids().collect();
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(ps, id)).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.shape(out).to_vec()
    };
    let weights = random(&shape, &mut rng(seed ^ 0xa5a5));
    grad_check(ps, DEFAULT_STEP, |ps| {
        let mut tape = Tape::with_fault(fault);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(ps, id)).collect();
        let out = build(&mut tape, &vars)?;
        let w = tape.constant(weights.clone());
        let weighted = tape.mul(out, w)?;
        let loss = tape.sum(weighted);
        tape.backward(loss, ps)?;
        Ok(tape.value(loss).data()[0])
    })
    .unwrap()
}

pub fn check<F>(ps: &mut ParamSet, seed: u64, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_with(ps, seed, Fault::None, build)
}

pub fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("c{i}")).collect()
}
