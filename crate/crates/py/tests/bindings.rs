use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Runs `code` with the module importable as `pe`.
fn run(code: &str) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(pyelevnet::pyelevnet)(py);
        let globals = PyDict::new(py);
        globals.set_item("pe", m).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn geometry_round_trips() {
    run(r#"
rig = pe.CameraRig.desk(64)
for view in ["front", "left", "right"]:
    d = rig.unproject(view, 10.5, 50.5, roll=0.3, pitch=-0.2)
    u, v, front = rig.project(view, [3 * x for x in d], roll=0.3, pitch=-0.2)
    assert front and abs(u - 10.5) < 1e-9 and abs(v - 50.5) < 1e-9
# without roll or pitch the two encodings agree
assert rig.unproject("front", 1.5, 2.5) == rig.unproject("front", 1.5, 2.5, roll=0.0, pitch=0.0)
"#);
}

#[test]
fn maps_metrics_and_alignment() {
    run(r#"
g = pe.GridSpec(6, 6, 2.0)
p0 = pe.VehiclePose([0.0, 0.0, 1.0])
vals = [[float(r + c) for c in range(6)] for r in range(6)]
m = pe.ElevationMap(g, vals, p0)
assert m.values == vals
same, mask = pe.align_previous(m, p0)
assert all(all(r) for r in mask) and same.values == vals
moved, mask = pe.align_previous(m, pe.VehiclePose([2.0, 0.0, 0.5]))
assert not all(mask[-1])
assert abs(moved.values[0][0] - (vals[1][0] + 0.5)) < 1e-12
assert pe.sdr_exhaustive(m, m) == 0.0
bands = pe.mae_banded(m, m, [4.0])
assert bands[0] == (4.0, 0.0, 12)
try:
    pe.ElevationMap(g, [[0.0]], p0)
    raise AssertionError("shape mismatch accepted")
except ValueError:
    pass
"#);
}

#[test]
fn model_and_training() {
    let dir = tempfile::tempdir().unwrap();
    run(&format!(
        r#"
import os
tmp = {tmp:?}
seq = pe.Sequence.generate(2, "hilly", frames=3, image_size=16, rows=8, cols=8)
model = pe.Model("tiny", seed=0, pos_encoding="cpe")
preds = model.predict_sequence(seq)
assert len(preds) == 3 and all(p.anchor_value() == 0.0 for p in preds)
data = os.path.join(tmp, "d")
seq.write(data)
cfg = os.path.join(tmp, "c.json")
pe.write_config(cfg, [data], preset="tiny", steps=2)
s = pe.train(cfg, os.path.join(tmp, "run"))
assert s["steps"] == 2
r = pe.Model.load(s["checkpoint"]).evaluate([pe.Sequence.read(data)])
assert r["frames"] == 3 and r["mtc"] is not None
assert pe.run_cli(["bogus"]) == 1
"#,
        tmp = dir.path().to_str().unwrap()
    ));
}
