use waveinv_wasm::{cgo_snapshot, control_to_rest, simulate_cubic};

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn linear_standing_wave_returns_after_one_period() {
    let f = simulate_cubic(200, 2.0, 0.0, 1.0, 1, 40).unwrap();
    let n = f.x().len();
    let v = f.values();
    let last = (f.n_frames() - 1) * n;
    assert!(max_gap(&v[last..], &v[..n]) < 1e-3);
    let cubic = simulate_cubic(200, 2.0, 5.0, 1.0, 1, 40).unwrap().values();
    assert!(max_gap(&cubic[last..], &v[..n]) > 1e-2);
}

#[test]
fn short_horizon_is_not_controllable() {
    let e = control_to_rest(60, 2.5, false, 20).unwrap().energy();
    assert!(e[e.len() - 1] < 1e-4 * e[0]);
    match control_to_rest(60, 0.8, false, 20) {
        Err(msg) => assert!(msg.contains("stagnated"), "{msg}"),
        Ok(short) => {
            let e = short.energy();
            assert!(e[e.len() - 1] > 1e-2 * e[0]);
        }
    }
}

#[test]
fn larger_tau_concentrates_the_remainder() {
    let a = cgo_snapshot(8.0, 32, 1.0).unwrap().remainder_l2();
    let b = cgo_snapshot(16.0, 64, 1.0).unwrap().remainder_l2();
    assert!(b < a, "{a} {b}");
}
