use std::collections::BTreeMap;

use fcmli::mpc::{self, CostWeights, PredictorConstants, References};
use fcmli::plant::{self, PhaseState, PlantState, SwitchingState, SystemParams};
use proptest::prelude::*;

mod common;
use common::{expression, naive_select};

#[test]
fn table_one_balanced_levels() {
    let expected = [-180.0, -60.0, -60.0, 60.0, -60.0, 60.0, 60.0, 180.0];
    for (s, want) in SwitchingState::ALL.iter().zip(expected) {
        assert_eq!(plant::phase_output_voltage(*s, 120.0, 240.0, 360.0), want, "{s}");
    }
}

#[test]
fn balanced_states_cover_four_levels_with_redundancy() {
    let mut levels: BTreeMap<i64, usize> = BTreeMap::new();
    for s in SwitchingState::ALL {
        *levels.entry(plant::phase_output_voltage(s, 120.0, 240.0, 360.0) as i64).or_default() += 1;
    }
    let got: Vec<(i64, usize)> = levels.into_iter().collect();
    assert_eq!(got, vec![(-180, 1), (-60, 3), (60, 3), (180, 1)]);
}

#[test]
fn index_round_trips() {
    for k in 0..8u8 {
        assert_eq!(SwitchingState::from_index(k).unwrap().index(), k);
    }
    assert!(SwitchingState::from_index(8).is_none());
}

fn phase_strategy() -> impl Strategy<Value = PhaseState> {
    (-20.0..20.0f64, 80.0..160.0f64, 200.0..280.0f64).prop_map(|(i, v1, v2)| PhaseState { i, v1, v2 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn table_one_symbolic(v1 in 0.0..400.0f64, v2 in 0.0..400.0f64, vdc in 1.0..800.0f64) {
        for s in SwitchingState::ALL {
            prop_assert_eq!(plant::phase_output_voltage(s, v1, v2, vdc), expression(s, v1, v2, vdc));
        }
    }

    #[test]
    fn selection_matches_naive_enumeration(
        meas in phase_strategy(),
        i_ref in -20.0..20.0f64,
        pa in -180.0..180.0f64,
        pb in -180.0..180.0f64,
        l1 in 0.01..10.0f64,
        l2 in 0.01..10.0f64,
    ) {
        let model = SystemParams::default();
        let w = CostWeights::new(l1, l2).unwrap();
        let refs = References::new(i_ref, model.vdc);
        let sel = mpc::select_optimal(&meas, &refs, &w, &PredictorConstants::new(&model), &model, [pa, pb]);
        prop_assert_eq!(sel.state.index(), naive_select(&meas, i_ref, &w, &model, [pa, pb]));
    }

    #[test]
    fn argmin_invariant_under_weight_scaling(
        meas in phase_strategy(),
        i_ref in -20.0..20.0f64,
        pa in -180.0..180.0f64,
        pb in -180.0..180.0f64,
        l1 in 0.01..10.0f64,
        l2 in 0.01..10.0f64,
        exp in -8i32..8,
    ) {
        let model = SystemParams::default();
        let consts = PredictorConstants::new(&model);
        let refs = References::new(i_ref, model.vdc);
        let k = 2f64.powi(exp);
        let a = mpc::select_optimal(&meas, &refs, &CostWeights::new(l1, l2).unwrap(), &consts, &model, [pa, pb]);
        let b = mpc::select_optimal(&meas, &refs, &CostWeights::new(k * l1, k * l2).unwrap(), &consts, &model, [pa, pb]);
        prop_assert_eq!(a.state, b.state);
    }

    #[test]
    fn selection_independent_of_evaluation_order(
        meas in phase_strategy(),
        i_ref in -20.0..20.0f64,
        pa in -180.0..180.0f64,
        perm in Just((0u8..8).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let model = SystemParams::default();
        let consts = PredictorConstants::new(&model);
        let refs = References::new(i_ref, model.vdc);
        let w = CostWeights::default();
        let order = perm.iter().map(|&k| SwitchingState::from_index(k).unwrap());
        let a = mpc::select_optimal(&meas, &refs, &w, &consts, &model, [pa, -pa]);
        let b = mpc::select_over(order, &meas, &refs, &w, &consts, &model, [pa, -pa]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn selected_cost_is_minimal(meas in phase_strategy(), i_ref in -20.0..20.0f64, pa in -180.0..180.0f64) {
        let model = SystemParams::default();
        let consts = PredictorConstants::new(&model);
        let refs = References::new(i_ref, model.vdc);
        let w = CostWeights::default();
        let sel = mpc::select_optimal(&meas, &refs, &w, &consts, &model, [pa, 0.0]);
        for s in SwitchingState::ALL {
            let v_on = plant::common_mode_voltage(plant::phase_output_voltage(s, meas.v1, meas.v2, model.vdc), pa, 0.0);
            let j = mpc::cost(&mpc::predict(&meas, s, v_on, &consts, &model), &refs, &w);
            prop_assert!(sel.cost <= j);
        }
    }

    #[test]
    fn common_mode_is_removed_from_phase_currents(
        states in proptest::array::uniform3(0u8..8),
        currents in proptest::array::uniform2(-10.0..10.0f64),
    ) {
        let params = SystemParams::default();
        let mut st = plant::init_plant(&params);
        st.phases[0].i = currents[0];
        st.phases[1].i = currents[1];
        st.phases[2].i = -currents[0] - currents[1];
        let sw = states.map(|k| SwitchingState::from_index(k).unwrap());
        let next = plant::step_plant(&st, &sw, &params, &mut ()).unwrap();
        let sum: f64 = next.phases.iter().map(|p| p.i).sum();
        prop_assert!(sum.abs() < 1e-9);
    }
}

fn open_loop(h: f64) -> PlantState {
    let params = SystemParams {
        plant_substep: h,
        ..SystemParams::default()
    };
    let mut st = plant::init_plant(&params);
    st.phases[0].i = 5.0;
    st.phases[1].i = -2.0;
    st.phases[2].i = -3.0;
    let pattern = [[5u8, 2, 0], [3, 4, 1], [6, 1, 2], [7, 0, 4]];
    for k in 0..200 {
        let sw = pattern[k % pattern.len()].map(|s| SwitchingState::from_index(s).unwrap());
        st = plant::step_plant(&st, &sw, &params, &mut ()).unwrap();
    }
    st
}

#[test]
fn halving_the_substep_converges() {
    let coarse = open_loop(1e-6);
    let mid = open_loop(0.5e-6);
    let fine = open_loop(0.25e-6);
    let diff = |a: &PlantState, b: &PlantState| {
        a.phases
            .iter()
            .zip(&b.phases)
            .map(|(p, q)| (p.i - q.i).abs().max((p.v1 - q.v1).abs()).max((p.v2 - q.v2).abs()))
            .fold(0.0, f64::max)
    };
    let d1 = diff(&coarse, &mid);
    let d2 = diff(&mid, &fine);
    assert!(d1 > 0.0);
    let ratio = d1 / d2;
    assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
    assert!(d1 < 1e-2, "d1 {d1}");
    assert_eq!(coarse.t, mid.t);
}

#[test]
fn capacitors_hold_when_current_is_zero() {
    let params = SystemParams::default();
    let st = plant::init_plant(&params);
    let sw = [SwitchingState::ALL[0], SwitchingState::ALL[0], SwitchingState::ALL[0]];
    let next = plant::step_plant(&st, &sw, &params, &mut ()).unwrap();
    for ph in next.phases {
        assert_eq!(ph, PhaseState { i: 0.0, v1: 120.0, v2: 240.0 });
    }
}
