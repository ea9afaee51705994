//! Shared builders and finite-difference checks for the integration tests.
#![allow(dead_code)]

use dslp::directional::{dp_loss, dp_loss_grad, DirField};
use dslp::field::{GridField, LayeredWorld};
use dslp::objective::{slp_loss_soft, Alpha};
use dslp::trainer::{ArchSpec, Predictor, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(w: usize, h: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridField {
    GridField::from_fn(w, h, 1.0, |_, _| rng.random_range(lo..hi)).unwrap()
}

pub fn random_world(w: usize, h: usize, channels: usize, rng: &mut ChaCha8Rng) -> LayeredWorld {
    let chans = (0..channels)
        .map(|c| (format!("c{c}"), random_field(w, h, rng, -1.0, 1.0)))
        .collect();
    LayeredWorld::new(chans, GridField::filled(w, h, 1.0, 1.0).unwrap()).unwrap()
}

pub fn random_dist(bins: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Random direction field, defined on roughly `coverage` of the cells.
pub fn random_dir_field(w: usize, h: usize, bins: usize, coverage: f64, rng: &mut ChaCha8Rng) -> DirField {
    let mut d = DirField::undefined(bins, w, h, 1.0).unwrap();
    for j in 0..h {
        for i in 0..w {
            if rng.random_bool(coverage) {
                d.set(i, j, Some(&random_dist(bins, rng))).unwrap();
            }
        }
    }
    if d.defined_count() == 0 {
        d.set(0, 0, Some(&random_dist(bins, rng))).unwrap();
    }
    d
}

/// Hard labels inside a random region; at least one positive and one negative.
pub fn random_labels(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (GridField, GridField) {
    let region = GridField::from_fn(w, h, 1.0, |i, j| {
        if (i, j) == (0, 0) || (i, j) == (1, 0) || rng.random_bool(0.7) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    let labels = GridField::from_fn(w, h, 1.0, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (1, 0) => 0.0,
        _ if region.get(i, j) > 0.5 && rng.random_bool(0.25) => 1.0,
        _ => 0.0,
    })
    .unwrap();
    (labels, region)
}

pub fn random_sample(side: usize, channels: usize, bins: usize, rng: &mut ChaCha8Rng) -> TrainSample {
    let (labels, region) = random_labels(side, side, rng);
    TrainSample {
        input: random_world(side, side, channels, rng),
        labels,
        region,
        dir_target: random_dir_field(side, side, bins, 0.4, rng),
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative deviation between the analytic loss gradients (with
/// respect to the predicted SLP values and DP probabilities) and central
/// differences, on one random instance.
pub fn loss_gradient_error(side: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (labels, region) = random_labels(side, side, &mut r);
    let y_hat = random_field(side, side, &mut r, 0.02, 0.98);
    let alpha = if seed % 2 == 0 { Alpha::Auto } else { Alpha::Constant(r.random_range(0.0..1.0)) };
    let rep = slp_loss_soft(&labels, &region, &y_hat, alpha).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..side * side {
        let h = 1e-6;
        let bump = |d: f64| {
            let mut v = y_hat.clone().into_values();
            v[k] += d;
            let f = GridField::from_values(side, side, 1.0, v).unwrap();
            slp_loss_soft(&labels, &region, &f, alpha).unwrap().loss
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        worst = worst.max(rel_err(rep.grad.values()[k], fd, 1e-8));
    }

    let bins = 16;
    let target = random_dir_field(side, side, bins, 0.5, &mut r);
    let mut pred = DirField::undefined(bins, side, side, 1.0).unwrap();
    for j in 0..side {
        for i in 0..side {
            pred.set(i, j, Some(&random_dist(bins, &mut r))).unwrap();
        }
    }
    let (_, grad) = dp_loss_grad(&target, &pred).unwrap();
    for cell in 0..side * side {
        if !target.defined_at(cell) {
            continue;
        }
        let (i, j) = (cell % side, cell / side);
        for b in 0..bins {
            let base = pred.dist(i, j).unwrap().to_vec();
            let h = 1e-6 * base[b];
            let eval = |d: f64| {
                let mut p = pred.clone();
                let mut v = base.clone();
                v[b] += d;
                p.set(i, j, Some(&v)).unwrap();
                dp_loss(&target, &p).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(grad[cell * bins + b], fd, 1e-8));
        }
    }
    worst
}

/// Largest relative deviation between backprop and central differences
/// over `checks` randomly chosen parameters (plus every bias).
pub fn param_gradient_error(side: usize, arch: ArchSpec, seed: u64, checks: usize) -> f64 {
    let mut r = rng(seed);
    let sample = random_sample(side, arch.in_channels, arch.bins, &mut r);
    let mut pred = Predictor::init(arch, seed ^ 0xABCD);
    let alpha = Alpha::Auto;
    let lambda = 0.7;
    let (_, grad) = pred.loss_and_grad(&sample, alpha, lambda).unwrap();
    let l = arch.layout();
    let mut idx: Vec<usize> = (0..checks).map(|_| r.random_range(0..l.total)).collect();
    idx.extend(l.b1..l.w2);
    idx.extend(l.b2..l.v);
    idx.push(l.c);
    idx.extend(l.d..l.total);
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for k in idx {
        let p0 = pred.params()[k];
        let h = 1e-5;
        pred.params_mut()[k] = p0 + h;
        let up = pred.loss(&sample, alpha, lambda).unwrap();
        pred.params_mut()[k] = p0 - h;
        let down = pred.loss(&sample, alpha, lambda).unwrap();
        pred.params_mut()[k] = p0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(grad[k], fd, 1e-6 * gmax));
    }
    worst
}
