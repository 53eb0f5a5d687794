//! Cross-block properties: parameter-count direction, full-block gradient
//! checks, and shape preservation over random sizes.

use detectlab_nn::{CaBlock, CaConfig, Cbs, LeafMap, ParamRegistry, RfbBlock, RfbConfig, SppcspcBlock};
use detectlab_tensor::{grad_check, Tape, Tensor, TensorError, Var, XorShiftRng};
use proptest::prelude::*;

fn rand_tensor(rng: &mut XorShiftRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

fn rfb_params(c: usize) -> usize {
    let block = RfbBlock::new("rfb", RfbConfig::default_for(c, c)).unwrap();
    let mut reg = ParamRegistry::<f64>::new();
    let mut rng = XorShiftRng::new(1);
    block.register(&mut reg, &mut rng).unwrap();
    reg.param_count()
}

fn sppcspc_params(c: usize) -> usize {
    let block = SppcspcBlock::new("spp", c, c).unwrap();
    let mut reg = ParamRegistry::<f64>::new();
    let mut rng = XorShiftRng::new(1);
    block.register(&mut reg, &mut rng).unwrap();
    reg.param_count()
}

#[test]
fn rfb_is_strictly_smaller_than_sppcspc() {
    for c in [64usize, 128, 256] {
        let rfb = rfb_params(c);
        let spp = sppcspc_params(c);
        assert!(
            rfb < spp,
            "at {c} channels: rfb {rfb} params !< sppcspc {spp} params"
        );
    }
}

/// Runs grad_check over the input plus every registered parameter of a block.
fn check_block<F>(reg: &ParamRegistry<f64>, x: Tensor<f64>, forward: F, seed: u64)
where
    F: for<'g> Fn(
        &LeafMap<'g, f64>,
        &ParamRegistry<f64>,
        Var<'g, f64>,
    ) -> detectlab_nn::Result<Var<'g, f64>>,
{
    let names: Vec<String> = reg.iter_params().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![x];
    for (_, t) in reg.iter_params() {
        inputs.push(t.clone());
    }
    let report = grad_check(
        |_tape: &Tape<f64>, vars: &[Var<'_, f64>]| {
            let leaves = LeafMap::from_pairs(
                names
                    .iter()
                    .cloned()
                    .zip(vars[1..].iter().copied()),
            );
            let y = forward(&leaves, reg, vars[0])
                .map_err(|e| TensorError::arg("block", e.to_string()))?;
            // Sigmoid weighting keeps upstream gradients generically nonzero
            // (a plain sum cancels exactly through batch norm since xhat has
            // zero mean). Centering each term keeps |f| small, which keeps
            // the finite-difference rounding noise below the tolerance.
            Ok(y.sigmoid().add_scalar(-0.5).sum_all())
        },
        &inputs,
        1e-5,
        1e-4,
        100,
        seed,
    )
    .unwrap();
    assert!(report.pass, "{report}");
}

#[test]
fn cbs_grad_check_passes() {
    let mut rng = XorShiftRng::new(11);
    let cbs = Cbs::new("c", 3, 4, 3, 1);
    let mut reg = ParamRegistry::<f64>::new();
    cbs.register(&mut reg, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
    check_block(
        &reg,
        x,
        |leaves, reg, xv| cbs.forward(leaves, reg, xv, Some(&mut Vec::new())),
        12,
    );
}

#[test]
fn ca_grad_check_passes() {
    let mut rng = XorShiftRng::new(13);
    let block = CaBlock::new("ca", CaConfig::new(8, 2).unwrap());
    let mut reg = ParamRegistry::<f64>::new();
    block.register(&mut reg, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, &[2, 8, 5, 4], -1.0, 1.0);
    check_block(
        &reg,
        x,
        |leaves, reg, xv| {
            block
                .forward(leaves, reg, xv, Some(&mut Vec::new()))
                .map(|(y, _, _)| y)
        },
        14,
    );
}

#[test]
fn rfb_grad_check_passes() {
    let mut rng = XorShiftRng::new(15);
    let block = RfbBlock::new("rfb", RfbConfig::default_for(8, 8)).unwrap();
    let mut reg = ParamRegistry::<f64>::new();
    block.register(&mut reg, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, &[1, 8, 6, 6], -1.0, 1.0);
    check_block(
        &reg,
        x,
        |leaves, reg, xv| block.forward(leaves, reg, xv, Some(&mut Vec::new())),
        16,
    );
}

#[test]
fn sppcspc_grad_check_passes() {
    let mut rng = XorShiftRng::new(17);
    let block = SppcspcBlock::new("spp", 8, 8).unwrap();
    let mut reg = ParamRegistry::<f64>::new();
    block.register(&mut reg, &mut rng).unwrap();
    // 14x14 keeps the kernel-13 pool windows distinct; at 8x8 they all share
    // one argmax, the pooled channels go spatially constant, and batch-norm
    // shift invariance zeroes the merge weights' gradients exactly.
    let x = rand_tensor(&mut rng, &[1, 8, 14, 14], -1.0, 1.0);
    check_block(
        &reg,
        x,
        |leaves, reg, xv| block.forward(leaves, reg, xv, Some(&mut Vec::new())),
        18,
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn ca_preserves_shape_over_random_sizes(
        n in 1usize..3,
        c_pow in 2usize..5,
        h in 1usize..9,
        w in 1usize..9,
        seed in any::<u64>(),
    ) {
        let c = 1 << c_pow;
        let block = CaBlock::new("ca", CaConfig::default_for(c));
        let mut reg = ParamRegistry::<f64>::new();
        let mut rng = XorShiftRng::new(seed);
        block.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(&rand_tensor(&mut rng, &[n, c, h, w], -2.0, 2.0));
        let leaves = reg.leaves(&tape, false);
        let (y, g_h, g_w) = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        prop_assert_eq!(y.shape(), vec![n, c, h, w]);
        prop_assert_eq!(g_h.shape(), vec![n, c, h, 1]);
        prop_assert_eq!(g_w.shape(), vec![n, c, 1, w]);
        for v in g_h.value_vec().iter().chain(g_w.value_vec().iter()) {
            prop_assert!(*v > 0.0 && *v < 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn neck_blocks_preserve_spatial_dims(
        h in 4usize..12,
        w in 4usize..12,
        seed in any::<u64>(),
    ) {
        let mut rng = XorShiftRng::new(seed);
        let x = rand_tensor(&mut rng, &[1, 8, h, w], -1.0, 1.0);

        let rfb = RfbBlock::new("rfb", RfbConfig::default_for(8, 8)).unwrap();
        let mut reg = ParamRegistry::<f64>::new();
        rfb.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let xv = tape.constant(&x);
        let leaves = reg.leaves(&tape, false);
        let y = rfb.forward(&leaves, &reg, xv, Some(&mut Vec::new())).unwrap();
        prop_assert_eq!(y.shape(), vec![1, 8, h, w]);

        let spp = SppcspcBlock::new("spp", 8, 8).unwrap();
        let mut reg = ParamRegistry::<f64>::new();
        spp.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let xv = tape.constant(&x);
        let leaves = reg.leaves(&tape, false);
        let y = spp.forward(&leaves, &reg, xv, Some(&mut Vec::new())).unwrap();
        prop_assert_eq!(y.shape(), vec![1, 8, h, w]);
    }
}
