use dslp::augment::{
    build_warp_maps, joint_transform_iou, sample_warp, warp_polyline, warp_world, AxisWarp, WarpParams, WarpSpec,
};
use dslp::dataset::make_world;
use dslp::experiment::ExperimentConfig;
use dslp::field::rasterize_trajectory;
use dslp::synthworld::TemplateKind;
use proptest::prelude::*;

/// Share of warped-trajectory cells (on valid map cells) that land on the
/// warped road, and the joint positive-mask IoU.
fn containment(kind: TemplateKind, seed: u64) -> (f64, f64) {
    let suite = ExperimentConfig::small(0).suite;
    let b = make_world(&suite, kind, seed).unwrap();
    let (w, h) = b.input.dims();
    let spec = sample_warp(seed ^ 0x77, &suite.warp_params(), w, h).unwrap();
    let (world, obs) = warp_world(&b.input, &b.sampled.obs, &spec).unwrap();
    let map = build_warp_maps(&spec, w, h);
    let road = world.channel("road").unwrap();
    let (mut inside, mut total) = (0usize, 0usize);
    for t in &b.sampled.obs.trajectories {
        for (i, j) in rasterize_trajectory(&warp_polyline(&spec, t), w, h).unwrap_or_default() {
            if map.valid[j * w + i] {
                total += 1;
                inside += usize::from(road.get(i, j) > 0.0);
            }
        }
    }
    let frac = if total == 0 { 1.0 } else { inside as f64 / total as f64 };
    (frac, joint_transform_iou(&b.sampled.obs, &obs, &spec))
}

#[test]
fn warped_trajectories_stay_on_the_warped_road() {
    let kinds = [TemplateKind::Curve, TemplateKind::TIntersection, TemplateKind::FourWay, TemplateKind::Fork, TemplateKind::Merge];
    let mut worst_frac: f64 = 1.0;
    let mut mean_iou = 0.0;
    for seed in 0..100u64 {
        let (frac, iou) = containment(kinds[seed as usize % 5], 1000 + seed);
        worst_frac = worst_frac.min(frac);
        mean_iou += iou / 100.0;
    }
    assert!(worst_frac >= 0.99, "containment {worst_frac}");
    // thin lines resampled to the nearest cell after a rotation keep most,
    // not all, of their cells
    assert!(mean_iou >= 0.7, "joint IoU {mean_iou}");
}

#[test]
fn identity_spec_is_bit_exact() {
    let suite = ExperimentConfig::small(0).suite;
    for (k, kind) in TemplateKind::ALL.into_iter().enumerate() {
        let b = make_world(&suite, kind, 40 + k as u64).unwrap();
        let (w, h) = b.input.dims();
        let (world, obs) = warp_world(&b.input, &b.sampled.obs, &WarpSpec::identity(w, h)).unwrap();
        assert!(world == b.input, "{kind}: world changed");
        assert!(obs == b.sampled.obs, "{kind}: observations changed");
    }
}

proptest! {
    #[test]
    fn round_trip_within_half_a_cell(seed in 0u64..100_000, side in 16usize..96) {
        let spec = sample_warp(seed, &WarpParams::for_grid(side), side, side).unwrap();
        for j in (0..side).step_by(3) {
            for i in (0..side).step_by(3) {
                let p = [i as f64 + 0.5, j as f64 + 0.5];
                let q = spec.forward(spec.inverse(p));
                prop_assert!((q[0] - p[0]).abs() <= 0.5 && (q[1] - p[1]).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn axis_warp_boundary_conditions(delta in -20.0f64..20.0, extent in 64.0f64..512.0) {
        let a = AxisWarp::from_displacement(delta, extent);
        // substitute back: both edges fixed, midpoint displaced by delta
        prop_assert!(a.to_original(0.0).abs() < 1e-9);
        prop_assert!((a.to_original(extent) - extent).abs() < 1e-9);
        prop_assert!((a.to_original(extent / 2.0) - (extent / 2.0 + delta)).abs() < 1e-9);
    }
}
