//! Frozen numerics. A change here means outputs moved; re-pin only after
//! checking the change is intended.

mod common;

use common::*;
use elevnet::evalkit::{mae_banded, sdr_exhaustive};
use elevnet::harness::{train_to_end, RunConfig};
use elevnet::synthworld::TerrainStyle;

fn close(actual: f64, pinned: f64) {
    let rel = (actual - pinned).abs() / pinned.abs().max(1e-300);
    assert!(rel <= 1e-9, "got {actual:.17e}, pinned {pinned:.17e}");
}

#[test]
fn synthetic_ground_truth() {
    let seq = desk_sequence(7, TerrainStyle::Hilly, 3);
    let gt = &seq.samples[2].gt_map;
    close(gt.values.sum(), -9.347_118_521_942_757e2);
    close(gt.values[(31, 0)], -3.351_850_271_224_975_6);
    let img: f64 = seq.samples[1].images[0]
        .pixels()
        .map(|p| p.0[1] as f64)
        .sum();
    close(img, 5.495_47e5);
    close(seq.samples[2].pose.roll, 1.537_412_264_837_724_8e-1);
}

#[test]
fn tiny_forward() {
    let (model, input, _) = tiny_model_input(3);
    let pred = forward_values(&model, &input);
    close(pred.sum(), 8.109_627_462_022_96e-1);
    close(pred[(7, 7)], -7.381_675_105_118_214e-2);
    close(pred.mapv(f64::abs).sum(), 3.103_044_911_478_493_3);
}

#[test]
fn tiny_training() {
    let mut cfg = RunConfig::tiny();
    cfg.optim.steps = 5;
    let t = train_to_end(&cfg, &[tiny_sequence(5, 6)]).unwrap();
    let w = t.model.params.get("decoder.head.weight").unwrap();
    close(w.sum(), 4.110_492_535_663_632_4e-1);
    let (_, _, prep) = tiny_model_input(3);
    let pred = elevnet::harness::infer_frame(&t.model, &prep.frames[0], None).unwrap();
    close(pred.values.sum(), 5.476_193_285_668_367_5);
}

#[test]
fn metrics_on_fixed_maps() {
    let seq = desk_sequence(7, TerrainStyle::Hilly, 2);
    let (a, b) = (&seq.samples[0].gt_map, &seq.samples[1].gt_map);
    let bands = mae_banded(a, b, &[10.0, 20.0], None).unwrap();
    close(bands[0].mae.unwrap(), 1.243_985_555_749_532e-1);
    close(bands[1].mae.unwrap(), 1.617_210_007_163_521_5e-1);
    close(
        sdr_exhaustive(a, b, None, 0.1).unwrap(),
        4.679_576_765_640_274e-2,
    );
}
