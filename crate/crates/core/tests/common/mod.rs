use fcmli::mpc::CostWeights;
use fcmli::plant::{PhaseState, SwitchingState, SystemParams};

/// Pole voltage written out per voltage vector.
pub fn expression(s: SwitchingState, v1: f64, v2: f64, vdc: f64) -> f64 {
    let h = vdc / 2.0;
    match s.index() {
        0 => -h,
        1 => v1 - h,
        2 => v2 - v1 - h,
        3 => v2 - h,
        4 => h - v2,
        5 => h - v2 + v1,
        6 => h - v1,
        7 => h,
        _ => unreachable!(),
    }
}

/// Independent predictor and cost, written against the continuous model.
pub fn naive_select(
    meas: &PhaseState,
    i_ref: f64,
    w: &CostWeights,
    model: &SystemParams,
    other_poles: [f64; 2],
) -> u8 {
    let mut best = (f64::INFINITY, 0u8);
    for k in 0..8u8 {
        let s = SwitchingState::from_index(k).unwrap();
        let v_xn = expression(s, meas.v1, meas.v2, model.vdc);
        let v_on = (v_xn + other_poles[0] + other_poles[1]) / 3.0;
        let i_next = meas.i + model.ts / model.l * (v_xn - v_on - model.r * meas.i);
        let v1_next = meas.v1 + model.ts / model.c1 * meas.i * (s.s2 as i32 - s.s1 as i32) as f64;
        let v2_next = meas.v2 + model.ts / model.c2 * meas.i * (s.s3 as i32 - s.s2 as i32) as f64;
        let j = w.lambda1 * (i_ref - i_next).powi(2)
            + w.lambda2 * (model.vdc / 3.0 - v1_next).powi(2)
            + w.lambda2 * (2.0 * model.vdc / 3.0 - v2_next).powi(2);
        if j < best.0 {
            best = (j, k);
        }
    }
    best.1
}
