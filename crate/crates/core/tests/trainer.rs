mod common;

use common::{param_gradient_error, random_sample, random_world, rng};
use dslp::field::{GridField, LayeredWorld};
use dslp::trainer::{train, AlphaMode, ArchSpec, Predictor, TrainConfig};

#[test]
fn backprop_matches_central_differences() {
    let arch = ArchSpec::new(3, 4, 3, 8).unwrap();
    for seed in 0..4 {
        let e = param_gradient_error(10, arch, seed, 60);
        assert!(e < 1e-3, "seed {seed}: relative error {e}");
    }
}

#[test]
fn backprop_with_wide_kernel() {
    let arch = ArchSpec::new(2, 3, 5, 16).unwrap();
    let e = param_gradient_error(9, arch, 11, 60);
    assert!(e < 1e-3, "relative error {e}");
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Direct per-cell evaluation of the network, written independently of the
/// plane-wise implementation.
fn naive_forward(p: &Predictor, world: &LayeredWorld) -> (Vec<f64>, Vec<Vec<f64>>) {
    let a = p.arch();
    let l = a.layout();
    let w = p.params();
    let (gw, gh) = world.dims();
    let (cin, hid, k, m) = (a.in_channels, a.hidden, a.kernel, a.bins);
    let r = (k / 2) as isize;
    let input: Vec<&GridField> = world.channels().iter().map(|(_, f)| f).collect();
    let conv = |src: &dyn Fn(usize, isize, isize) -> f64, cn: usize, wt: usize, bias: usize, o: usize, i: usize, j: usize| {
        let mut s = w[bias + o];
        for c in 0..cn {
            for ky in 0..k {
                for kx in 0..k {
                    let (x, y) = (i as isize + kx as isize - r, j as isize + ky as isize - r);
                    s += w[wt + ((o * cn + c) * k + ky) * k + kx] * src(c, x, y);
                }
            }
        }
        s.tanh()
    };
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < gw && (y as usize) < gh;
    let x_at = |c: usize, x: isize, y: isize| if inside(x, y) { input[c].get(x as usize, y as usize) } else { 0.0 };
    let mut a1 = vec![vec![0.0; gw * gh]; hid];
    for (o, plane) in a1.iter_mut().enumerate() {
        for j in 0..gh {
            for i in 0..gw {
                plane[j * gw + i] = conv(&x_at, cin, l.w1, l.b1, o, i, j);
            }
        }
    }
    let a1_at = |c: usize, x: isize, y: isize| if inside(x, y) { a1[c][y as usize * gw + x as usize] } else { 0.0 };
    let mut ys = Vec::new();
    let mut ds = Vec::new();
    for j in 0..gh {
        for i in 0..gw {
            let a2: Vec<f64> = (0..hid).map(|o| conv(&a1_at, hid, l.w2, l.b2, o, i, j)).collect();
            let zy = w[l.c] + (0..hid).map(|q| w[l.v + q] * a2[q]).sum::<f64>();
            ys.push(sigmoid(zy));
            let z: Vec<f64> = (0..m)
                .map(|b| w[l.d + b] + (0..hid).map(|q| w[l.u + b * hid + q] * a2[q]).sum::<f64>())
                .collect();
            let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            ds.push(e.iter().map(|v| v / s).collect());
        }
    }
    (ys, ds)
}

#[test]
fn forward_matches_naive_reference() {
    let arch = ArchSpec::new(3, 5, 3, 16).unwrap();
    let mut r = rng(3);
    let world = random_world(11, 8, 3, &mut r);
    let p = Predictor::init(arch, 9);
    let (y, d) = p.forward(&world).unwrap();
    let (ny, nd) = naive_forward(&p, &world);
    for cell in 0..88 {
        assert!((y.values()[cell] - ny[cell]).abs() < 1e-12);
        for (a, b) in d.dist_at(cell).unwrap().iter().zip(&nd[cell]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_translation_equivariant() {
    let arch = ArchSpec::new(2, 4, 3, 16).unwrap();
    let p = Predictor::init(arch, 5);
    let (side, patch) = (24, 6);
    let mut r = rng(7);
    let vals: Vec<f64> = (0..2 * patch * patch).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
    let place = |ox: usize, oy: usize| {
        let chans = (0..2)
            .map(|c| {
                let f = GridField::from_fn(side, side, 1.0, |i, j| {
                    if (ox..ox + patch).contains(&i) && (oy..oy + patch).contains(&j) {
                        vals[c * patch * patch + (j - oy) * patch + (i - ox)]
                    } else {
                        0.0
                    }
                })
                .unwrap();
                (format!("c{c}"), f)
            })
            .collect();
        LayeredWorld::new(chans, GridField::filled(side, side, 1.0, 1.0).unwrap()).unwrap()
    };
    let (y0, d0) = p.forward(&place(6, 7)).unwrap();
    let (y1, d1) = p.forward(&place(11, 9)).unwrap();
    // The receptive field reaches two cells; stay that far from every border.
    for j in 2..side - 4 {
        for i in 2..side - 7 {
            let (a, b) = (y0.get(i, j), y1.get(i + 5, j + 2));
            assert!((a - b).abs() < 1e-12, "({i},{j}) {a} vs {b}");
            let (da, db) = (d0.dist(i, j).unwrap(), d1.dist(i + 5, j + 2).unwrap());
            assert!(da.iter().zip(db).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}

fn tiny_training_set() -> Vec<dslp::trainer::TrainSample> {
    let mut r = rng(21);
    (0..5).map(|_| random_sample(12, 3, 16, &mut r)).collect()
}

fn tiny_config(alpha: AlphaMode) -> TrainConfig {
    let mut c = TrainConfig::new(ArchSpec::new(3, 4, 3, 16).unwrap());
    c.steps = 25;
    c.batch_size = 3;
    c.alpha = alpha;
    c.seed = 4;
    c
}

#[test]
fn training_is_deterministic_across_runs_and_workers() {
    let data = tiny_training_set();
    let cfg = tiny_config(AlphaMode::Auto);
    let (a, ta) = train(&data, &[], &cfg, 1).unwrap();
    let (b, tb) = train(&data, &[], &cfg, 1).unwrap();
    let (c, tc) = train(&data, &[], &cfg, 3).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.params(), c.params());
    let losses = |t: &dslp::trainer::TrainOutcome| t.trace.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&ta), losses(&tb));
    assert_eq!(losses(&ta), losses(&tc));
}

#[test]
fn training_reduces_the_loss() {
    // labels are a pointwise function of the first channel, so they are learnable
    let mut data = tiny_training_set();
    for s in &mut data {
        let c0 = s.input.channels()[0].1.clone();
        s.labels = c0.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        s.region = c0.map(|_| 1.0);
    }
    let mut cfg = tiny_config(AlphaMode::Constant(0.5));
    cfg.steps = 150;
    cfg.batch_size = 5;
    cfg.lambda = 0.0;
    let (_, t) = train(&data, &[], &cfg, 1).unwrap();
    let first = t.trace[0].loss;
    let last = t.trace.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn dataset_mean_alpha_is_reported() {
    let data = tiny_training_set();
    let (_, t) = train(&data, &[], &tiny_config(AlphaMode::DatasetMean), 1).unwrap();
    let mean = data.iter().map(|s| s.alpha_ib().unwrap()).sum::<f64>() / data.len() as f64;
    assert!((t.alpha_used.unwrap() - mean).abs() < 1e-12);
    let (_, t) = train(&data, &[], &tiny_config(AlphaMode::Auto), 1).unwrap();
    assert_eq!(t.alpha_used, None);
}

#[test]
fn saved_model_reproduces_outputs_to_single_precision() {
    let arch = ArchSpec::new(3, 4, 3, 16).unwrap();
    let p = Predictor::init(arch, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    p.save(&path).unwrap();
    let q = Predictor::load(&path).unwrap();
    let world = random_world(9, 9, 3, &mut rng(1));
    let (ya, _) = p.forward(&world).unwrap();
    let (yb, _) = q.forward(&world).unwrap();
    for (a, b) in ya.values().iter().zip(yb.values()) {
        assert!((a - b).abs() < 1e-5);
    }
}
