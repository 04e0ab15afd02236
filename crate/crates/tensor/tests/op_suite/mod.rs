//! Finite-difference checks of every differentiable operator. Each case maps
//! a configuration seed to the worst relative error over its inputs; the
//! seed also drives the random shapes.

use deal_tensor::{check_gradients, concat, multi_head_attention, AttentionWeights, Projection, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const CONFIGS: u64 = 20;

pub type Case = (&'static str, fn(u64) -> f64);

pub const CASES: &[Case] = &[
    ("conv2d", conv2d),
    ("attention", attention),
    ("bilinear_sample", bilinear_sample),
    ("focal_loss", focal_loss),
    ("elementwise_and_layout", elementwise_and_layout),
    ("min_max_abs", min_max_abs),
    ("clamp_relu_ln", clamp_relu_ln),
];

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Fixed random weights for a scalar readout, so the check sees a
/// non-uniform output gradient.
fn readout<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> deal_tensor::Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(&mut rng, &y.shape());
    Ok(y.mul(tape.constant(&w))?.sum())
}

fn worst(errs: Vec<f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

pub fn conv2d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let o = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1);
    let h = rng.random_range(k.max(3)..=6);
    let w = rng.random_range(k.max(3)..=6);
    let x = random(&mut rng, &[n, c, h, w]);
    let kern = random(&mut rng, &[o, c, k, k]);
    let bias = random(&mut rng, &[o]);
    worst(check_gradients(|tape, v| readout(tape, v[0].conv2d(v[1], Some(v[2]), stride, pad)?, seed), &[x, kern, bias], H).unwrap())
}

pub fn attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.random_range(1..=3);
    let d = heads * rng.random_range(1..=3);
    let (k, m) = (rng.random_range(1..=4), rng.random_range(1..=6));
    let dkv = rng.random_range(1..=5);
    let inputs = vec![
        random(&mut rng, &[k, d]),
        random(&mut rng, &[m, dkv]),
        random(&mut rng, &[d, d]),
        random(&mut rng, &[dkv, d]),
        random(&mut rng, &[dkv, d]),
        random(&mut rng, &[d, d]),
        random(&mut rng, &[d]),
        random(&mut rng, &[d]),
    ];
    worst(
        check_gradients(
            |tape, v| {
                let w = AttentionWeights {
                    query: Projection::new(v[2], Some(v[6])),
                    key: Projection::new(v[3], None),
                    value: Projection::new(v[4], None),
                    output: Projection::new(v[5], Some(v[7])),
                };
                readout(tape, multi_head_attention(v[0], v[1], v[1], &w, heads)?, seed)
            },
            &inputs,
            H,
        )
        .unwrap(),
    )
}

pub fn bilinear_sample(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=6));
    let x = rng.random_range(0.0..=(w - 1) as f64);
    let y = rng.random_range(0.0..=(h - 1) as f64);
    let f = random(&mut rng, &[c, h, w]);
    worst(check_gradients(|tape, v| readout(tape, v[0].bilinear_sample(x, y)?, seed), &[f], H).unwrap())
}

pub fn focal_loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = if seed == 0 { (8, 8) } else { (rng.random_range(1..=8), rng.random_range(1..=8)) };
    let logits = random(&mut rng, &[h, w]);
    let target = Tensor::new(vec![h, w], (0..h * w).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect()).unwrap();
    let gamma = [0.0, 1.0, 2.0, 2.5][seed as usize % 4];
    worst(check_gradients(|_, v| v[0].sigmoid().focal_loss(&target, 0.25, gamma), &[logits], H).unwrap())
}

pub fn elementwise_and_layout(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..=4), rng.random_range(2..=5));
    let a = random(&mut rng, &[r, c]);
    // keep the divisor away from zero
    let b = Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    let row = random(&mut rng, &[c]);
    let gamma = random(&mut rng, &[c]);
    let beta = random(&mut rng, &[c]);
    worst(
        check_gradients(
            |tape, v| {
                let s = v[0].mul(v[1])?.add(v[2])?.silu();
                let t = v[0].div(v[1])?.sigmoid().sub(v[0].tanh())?;
                let u = v[1].ln().add(v[1].sqrt())?.mul(v[0].exp())?;
                let joined = concat(&[s, t, u], 0)?;
                let normed = joined.layer_norm(v[3], v[4], 1e-5)?.softmax();
                let picked = normed.index_select(&[0, 2, 0])?.transpose()?.narrow(0, 1, c - 1)?;
                let mm = picked.matmul(joined.narrow(1, 0, 1)?.narrow(0, 0, 3)?)?;
                let up = normed.reshape([1, 3 * r, c])?.upsample2x()?;
                let red = up.sum_axis(1)?.max_axis(2)?;
                let scaled = v[0].scale(1.7).add_scalar(0.3).neg().mean();
                Ok(readout(tape, mm, seed)?.add(red.sum())?.add(v[0].square().mean())?.add(scaled)?)
            },
            &[a, b, row, gamma, beta],
            H,
        )
        .unwrap(),
    )
}

pub fn min_max_abs(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let a = random(&mut rng, &[n]);
    // offset so no pair is within the probe step of a tie
    let b = Tensor::new(vec![n], a.data().iter().map(|x| x + if rng.random_bool(0.5) { 0.3 } else { -0.3 }).collect()).unwrap();
    worst(
        check_gradients(|_, v| Ok(v[0].minimum(v[1])?.mul(v[0].maximum(v[1])?)?.add(v[0].sub(v[1])?.abs())?.sum()), &[a, b], H)
            .unwrap(),
    )
}

pub fn clamp_relu_ln(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    // values kept clear of the kinks at 0 and at the clamp bounds
    let x = Tensor::new(
        vec![n],
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..0.45);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect(),
    )
    .unwrap();
    let p = Tensor::new(vec![n], (0..n).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap();
    worst(
        check_gradients(
            |tape, v| {
                let y = v[0].relu().add(v[0].clamp(-0.3, 0.3))?.add(v[1].ln())?;
                readout(tape, y, seed)
            },
            &[x, p],
            H,
        )
        .unwrap(),
    )
}
