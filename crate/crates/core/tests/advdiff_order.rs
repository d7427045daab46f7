use std::f64::consts::PI;

use placeopt_core::advdiff::{cell_average_projection, AdvDiffConfig, AdvDiffModel, EmissionBackground, ExtendedState, Hotspot};

fn config(dt: f64) -> AdvDiffConfig {
    AdvDiffConfig {
        dt,
        emission_background: EmissionBackground {
            hotspot: Some(Hotspot { x: 2.2, y: 2.3, width: 0.8 }),
            ..EmissionBackground::default()
        },
        ..AdvDiffConfig::default()
    }
}

/// State at the end of the horizon from smooth initial data.
fn final_state(dt: f64) -> Vec<f64> {
    let cfg = config(dt);
    let model = AdvDiffModel::new(&cfg).unwrap();
    let c = cell_average_projection(|x, y, z| (2.0 * PI * x / 5.0).sin() * (2.0 * PI * y / 5.0).cos() + (PI * z).cos(), &cfg).unwrap();
    let e = cell_average_projection(|x, y, _| 0.5 + 0.2 * (2.0 * PI * (x + y) / 5.0).cos(), &cfg).unwrap();
    let mut state = ExtendedState::new(c, e).unwrap();
    for k in 0..cfg.steps() {
        state = model.strang_transition(&state, k).unwrap();
    }
    state.to_vector().iter().copied().collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn strang_splitting_is_second_order_in_time() {
    let coarse = final_state(0.02);
    let mid = final_state(0.01);
    let fine = final_state(0.005);
    let ratio = distance(&coarse, &mid) / distance(&mid, &fine);
    assert!((3.2..=4.8).contains(&ratio), "self-convergence ratio {ratio}");
}
