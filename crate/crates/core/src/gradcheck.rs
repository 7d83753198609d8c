//! Finite-difference validation of the reverse-mode gradients through the
//! DSSA computation graph.
//!
//! Each instance wires per-channel projections (1-D conv), the sign-preserving
//! square root, row softmax, matmul, layer norms and a residual add into a
//! scalar loss, then compares every leaf gradient against central finite
//! differences. Leaf values are drawn positive and bounded away from zero so
//! no signed_sqrt input sits near its non-differentiable point.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::tensor::Tensor;

/// Finite-difference step used throughout the suite.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error ceiling a passing gradient must stay under.
pub const REL_TOL: f64 = 1e-4;
/// Components with |gradient| at or below this floor are skipped.
pub const GRAD_FLOOR: f64 = 1e-8;

/// One DSSA loss graph plus the leaf values it is checked at.
pub struct CheckInstance {
    pub graph: Graph,
    pub leaves: HashMap<String, Tensor>,
    pub channels: usize,
    pub frames: usize,
    pub width: usize,
}

/// Builds the scalar-loss DSSA graph for one seeded instance.
///
/// The central-difference oracle carries a noise floor of roughly
/// eps·|loss|/h ≈ 1e-11·|loss|, so a gradient component can only be
/// validated at [`REL_TOL`] when it clears that floor by a couple of
/// orders of magnitude. Instances are drawn with a strong per-frame
/// magnitude spread (which keeps attention sensitivities away from the
/// row-constant cancellation of softmax) and re-salted deterministically
/// until no component falls between [`GRAD_FLOOR`] and the floor where
/// the oracle itself is trustworthy.
pub fn dssa_check_instance(seed: u64) -> CheckInstance {
    let mut salt = 0u64;
    loop {
        let inst = build_instance(seed, salt);
        if salt >= 8 {
            return inst;
        }
        if let Ok(ad) = inst.graph.gradient(&inst.leaves) {
            let conditioned = ad.values().all(|t| {
                t.data()
                    .iter()
                    .all(|g| g.abs() <= GRAD_FLOOR || g.abs() >= 3e-5)
            });
            if conditioned {
                return inst;
            }
        }
        salt += 1;
    }
}

fn build_instance(seed: u64, salt: u64) -> CheckInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9)));
    let channels = 1 + (rng.random_range(0..2u32) as usize);
    let frames = 3 + (rng.random_range(0..2u32) as usize);
    let width = 2 + (rng.random_range(0..2u32) as usize);
    let eps = 1e-5;

    let mut g = Graph::new();
    let mut leaves: HashMap<String, Tensor> = HashMap::new();
    let rand_tensor = |rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        Tensor::new(shape, data).unwrap()
    };

    let mut total = None;
    for c in 0..channels {
        // per-frame scaling keeps key columns varied across frames
        let frame_scale: Vec<f64> = (0..frames).map(|_| rng.random_range(0.3..=1.7)).collect();
        let data: Vec<f64> = (0..frames * width)
            .map(|i| frame_scale[i / width] * rng.random_range(0.5..=1.5))
            .collect();
        let x_name = format!("x{c}");
        leaves.insert(
            x_name.clone(),
            Tensor::new(vec![frames, width], data).unwrap(),
        );
        let x = g.leaf(x_name);

        let proj = |g: &mut Graph,
                        rng: &mut ChaCha8Rng,
                        leaves: &mut HashMap<String, Tensor>,
                        name: String| {
            // positive filters keep every signed_sqrt input bounded away from 0
            leaves.insert(
                name.clone(),
                rand_tensor(rng, vec![width, width, 1], 0.5, 1.0),
            );
            g.leaf(name)
        };
        let wq = proj(&mut g, &mut rng, &mut leaves, format!("wq{c}"));
        let wk = proj(&mut g, &mut rng, &mut leaves, format!("wk{c}"));
        let wv = proj(&mut g, &mut rng, &mut leaves, format!("wv{c}"));

        let xt = g.transpose(x);
        let q = g.conv1d(xt, wq, 1, 0);
        let q = g.transpose(q);
        let k = g.conv1d(xt, wk, 1, 0);
        let k = g.transpose(k);
        let v = g.conv1d(xt, wv, 1, 0);
        let v = g.transpose(v);

        let kt = g.transpose(k);
        let scores = g.matmul(q, kt);
        let scaled = g.scale(scores, 1.0 / (width as f64).sqrt());
        let p = g.signed_sqrt(scaled);
        let a = g.softmax_rows(p);
        let av = g.matmul(a, v);

        let affine = |g: &mut Graph,
                          rng: &mut ChaCha8Rng,
                          leaves: &mut HashMap<String, Tensor>,
                          name: String,
                          lo: f64,
                          hi: f64| {
            leaves.insert(name.clone(), Tensor::scalar(rng.random_range(lo..=hi)));
            g.leaf(name)
        };
        let gh = affine(&mut g, &mut rng, &mut leaves, format!("gh{c}"), 0.8, 1.2);
        let bh = affine(&mut g, &mut rng, &mut leaves, format!("bh{c}"), -0.2, 0.2);
        let go = affine(&mut g, &mut rng, &mut leaves, format!("go{c}"), 0.8, 1.2);
        let bo = affine(&mut g, &mut rng, &mut leaves, format!("bo{c}"), -0.2, 0.2);

        let head = g.layer_norm(av, &[0, 1], gh, bh, eps);
        let res = g.add(x, head);
        let y = g.layer_norm(res, &[0, 1], go, bo, eps);
        // a fixed random functional of y; a squared loss would be almost
        // invariant under everything upstream of the final normalization
        let probe = g.constant(rand_tensor(&mut rng, vec![frames, width], -1.0, 1.0));
        let weighted = g.mul(y, probe);
        let loss_c = g.sum(weighted);
        total = Some(match total {
            None => loss_c,
            Some(prev) => g.add(prev, loss_c),
        });
    }
    g.set_output(total.expect("at least one channel"));
    CheckInstance {
        graph: g,
        leaves,
        channels,
        frames,
        width,
    }
}

/// Worst relative error of one instance, over components with
/// |gradient| > [`GRAD_FLOOR`].
pub fn check_instance(inst: &CheckInstance) -> Result<f64> {
    let ad = inst.graph.gradient(&inst.leaves)?;
    let fd = inst.graph.finite_diff(&inst.leaves, FD_STEP)?;
    let mut names: Vec<&String> = inst.leaves.keys().collect();
    names.sort();
    let mut worst: f64 = 0.0;
    for name in names {
        let a = &ad[name];
        let b = &fd[name];
        for (&ga, &gb) in a.data().iter().zip(b.data()) {
            if ga.abs() > GRAD_FLOOR {
                let rel = (ga - gb).abs() / ga.abs().max(gb.abs());
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}

/// Runs `instances` seeded checks; returns per-instance worst errors.
pub fn run_suite(instances: usize, base_seed: u64) -> Result<Vec<f64>> {
    let mut errors = Vec::with_capacity(instances);
    for i in 0..instances {
        let inst = dssa_check_instance(base_seed + i as u64);
        errors.push(check_instance(&inst)?);
    }
    Ok(errors)
}
