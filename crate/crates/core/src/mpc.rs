//! Finite-control-set model predictive control of the flying-capacitor leg.
//!
//! Every controller period, each phase enumerates its eight switching
//! states, predicts current and capacitor voltages one period ahead with
//! the discrete model, and keeps the state with the smallest weighted
//! squared error. The common-mode voltage couples the phases; during the
//! enumeration of one phase the other two legs are frozen at the states
//! they applied over the previous period.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{common_mode_voltage, phase_output_voltage, PhaseState, PlantState, SwitchingState, SystemParams};

/// Phase displacement of the a, b, c reference currents.
pub const PHASE_SHIFTS: [f64; 3] = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];

/// Sinusoidal reference current of phase `x` at time `t`.
pub fn reference_current(amplitude: f64, f0: f64, t: f64, x: usize) -> f64 {
    amplitude * (2.0 * PI * f0 * t + PHASE_SHIFTS[x]).sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConstants {
    /// `Ts / L`
    pub m1: f64,
    /// `1 - R Ts / L`
    pub m2: f64,
}

impl PredictorConstants {
    pub fn new(model: &SystemParams) -> Self {
        Self {
            m1: model.ts / model.l,
            m2: 1.0 - model.r * model.ts / model.l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl CostWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) {
            return Err(Error::InvalidParams(format!(
                "cost weights must be finite and >= 0, got {self:?}"
            )));
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(Error::InvalidParams("cost weights are both zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub i_next: f64,
    pub v1_next: f64,
    pub v2_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    pub i_ref: f64,
    pub v1_ref: f64,
    pub v2_ref: f64,
}

impl References {
    /// Current reference plus the balanced capacitor targets for `vdc`.
    pub fn new(i_ref: f64, vdc: f64) -> Self {
        Self {
            i_ref,
            v1_ref: vdc / 3.0,
            v2_ref: 2.0 * vdc / 3.0,
        }
    }

    /// Three-phase references at time `t` for the model's amplitude.
    pub fn three_phase(amplitude: f64, model: &SystemParams, t: f64) -> [References; 3] {
        std::array::from_fn(|x| References::new(reference_current(amplitude, model.f0, t, x), model.vdc))
    }
}

/// One-period-ahead prediction for applying `candidate` with load neutral
/// potential `v_on`.
pub fn predict(
    meas: &PhaseState,
    candidate: SwitchingState,
    v_on: f64,
    consts: &PredictorConstants,
    model: &SystemParams,
) -> Prediction {
    let v_xn = phase_output_voltage(candidate, meas.v1, meas.v2, model.vdc);
    Prediction {
        i_next: (v_xn - v_on) * consts.m1 + meas.i * consts.m2,
        v1_next: meas.v1 + model.ts / model.c1 * meas.i * candidate.c1_drive(),
        v2_next: meas.v2 + model.ts / model.c2 * meas.i * candidate.c2_drive(),
    }
}

pub fn cost(pred: &Prediction, refs: &References, w: &CostWeights) -> f64 {
    let ei = refs.i_ref - pred.i_next;
    let e1 = refs.v1_ref - pred.v1_next;
    let e2 = refs.v2_ref - pred.v2_next;
    w.lambda1 * ei * ei + w.lambda2 * e1 * e1 + w.lambda2 * e2 * e2
}

/// Optimal state of one phase together with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub state: SwitchingState,
    pub cost: f64,
}

/// Exhaustive minimisation over the eight states of one leg. `other_poles`
/// are the pole voltages of the two other legs, held for the period; the
/// common-mode voltage of each candidate includes its own pole voltage.
/// Equal costs resolve to the lowest voltage-vector index.
pub fn select_optimal(
    meas: &PhaseState,
    refs: &References,
    w: &CostWeights,
    consts: &PredictorConstants,
    model: &SystemParams,
    other_poles: [f64; 2],
) -> Selection {
    select_over(SwitchingState::ALL, meas, refs, w, consts, model, other_poles)
}

/// `select_optimal` over an arbitrary evaluation order.
pub fn select_over(
    candidates: impl IntoIterator<Item = SwitchingState>,
    meas: &PhaseState,
    refs: &References,
    w: &CostWeights,
    consts: &PredictorConstants,
    model: &SystemParams,
    other_poles: [f64; 2],
) -> Selection {
    let mut best: Option<Selection> = None;
    for candidate in candidates {
        let v_xn = phase_output_voltage(candidate, meas.v1, meas.v2, model.vdc);
        let v_on = common_mode_voltage(v_xn, other_poles[0], other_poles[1]);
        let j = cost(&predict(meas, candidate, v_on, consts, model), refs, w);
        let better = match &best {
            None => true,
            Some(b) => j < b.cost || (j == b.cost && candidate.index() < b.state.index()),
        };
        if better {
            best = Some(Selection { state: candidate, cost: j });
        }
    }
    best.expect("at least one candidate")
}

/// The predictive controller: weights plus its own copy of the converter
/// parameters, which may differ from the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mpc {
    pub weights: CostWeights,
    pub model: SystemParams,
    pub consts: PredictorConstants,
}

impl Mpc {
    pub fn new(weights: CostWeights, model: SystemParams) -> Self {
        Self {
            weights,
            model,
            consts: PredictorConstants::new(&model),
        }
    }

    /// Replaces the controller model and refreshes the predictor constants.
    pub fn set_model(&mut self, model: SystemParams) {
        self.model = model;
        self.consts = PredictorConstants::new(&model);
    }

    pub fn step(
        &self,
        meas: &PlantState,
        refs: &[References; 3],
        last_applied: &[SwitchingState; 3],
    ) -> [Selection; 3] {
        mpc_step(meas, refs, &self.weights, &self.consts, &self.model, last_applied)
    }
}

/// Per-phase optimal states to apply over the coming period.
pub fn mpc_step(
    meas: &PlantState,
    refs: &[References; 3],
    w: &CostWeights,
    consts: &PredictorConstants,
    model: &SystemParams,
    last_applied: &[SwitchingState; 3],
) -> [Selection; 3] {
    let held = meas.pole_voltages(last_applied, model.vdc);
    std::array::from_fn(|x| {
        let others = [held[(x + 1) % 3], held[(x + 2) % 3]];
        select_optimal(&meas.phases[x], &refs[x], w, consts, model, others)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn nominal() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn predictor_constants_nominal() {
        let c = PredictorConstants::new(&nominal());
        assert_abs_diff_eq!(c.m1, 0.003, epsilon = 1e-15);
        assert_abs_diff_eq!(c.m2, 0.955, epsilon = 1e-15);
    }

    #[test]
    fn predicted_current() {
        let p = nominal();
        let c = PredictorConstants::new(&p);
        // (1,1,1) puts the pole at +180 V; v_on = 60 V gives 120 V across the load.
        let meas = PhaseState { i: 10.0, v1: 120.0, v2: 240.0 };
        let pred = predict(&meas, SwitchingState::ALL[7], 60.0, &c, &p);
        assert_abs_diff_eq!(pred.i_next, 9.91, epsilon = 1e-12);
        assert_eq!(pred.v1_next, 120.0);
        assert_eq!(pred.v2_next, 240.0);
    }

    #[test]
    fn predicted_capacitor_charge() {
        let p = nominal();
        let c = PredictorConstants::new(&p);
        let meas = PhaseState { i: 10.0, v1: 120.0, v2: 240.0 };
        let pred = predict(&meas, SwitchingState::ALL[2], 0.0, &c, &p);
        assert_abs_diff_eq!(pred.v1_next - 120.0, 0.44118, epsilon = 1e-5);
        assert_abs_diff_eq!(pred.v2_next - 240.0, -0.44118, epsilon = 1e-5);
    }

    #[test]
    fn cost_examples() {
        let refs = References::new(5.0, 360.0);
        let exact = Prediction { i_next: 5.0, v1_next: 120.0, v2_next: 240.0 };
        assert_eq!(cost(&exact, &refs, &CostWeights::default()), 0.0);

        let off = Prediction { i_next: 4.0, v1_next: 118.0, v2_next: 243.0 };
        assert_eq!(cost(&off, &refs, &CostWeights::default()), 14.0);

        let no_current = CostWeights::new(0.0, 1.0).unwrap();
        let off_current = Prediction { i_next: -100.0, ..off };
        assert_eq!(cost(&off, &refs, &no_current), cost(&off_current, &refs, &no_current));
    }

    #[test]
    fn weight_validation() {
        assert!(CostWeights::new(0.0, 0.0).is_err());
        assert!(CostWeights::new(-1.0, 1.0).is_err());
        assert!(CostWeights::new(1.0, f64::NAN).is_err());
        assert!(CostWeights::new(0.0, 2.0).is_ok());
    }

    #[test]
    fn exact_candidate_is_selected_with_zero_cost() {
        let p = nominal();
        let c = PredictorConstants::new(&p);
        let w = CostWeights::default();
        // Zero current leaves the capacitors at their targets for every
        // candidate.
        let meas = PhaseState { i: 0.0, v1: 120.0, v2: 240.0 };
        let others = [-180.0, -180.0];
        let target = SwitchingState::ALL[7];
        let v_on = common_mode_voltage(180.0, others[0], others[1]);
        let i_ref = (180.0 - v_on) * c.m1;
        let sel = select_optimal(&meas, &References::new(i_ref, p.vdc), &w, &c, &p, others);
        assert_eq!(sel.state, target);
        assert_eq!(sel.cost, 0.0);
    }

    #[test]
    fn low_current_raises_pole_voltage() {
        let p = nominal();
        let c = PredictorConstants::new(&p);
        let w = CostWeights::default();
        let meas = PhaseState { i: -5.0, v1: 120.0, v2: 240.0 };
        let sel = select_optimal(&meas, &References::new(10.0, p.vdc), &w, &c, &p, [0.0, 0.0]);
        let v = phase_output_voltage(sel.state, meas.v1, meas.v2, p.vdc);
        assert!(v > 0.0, "selected {} with pole voltage {v}", sel.state);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let p = nominal();
        let c = PredictorConstants::new(&p);
        // Only capacitor terms, zero current: every candidate costs the same.
        let w = CostWeights::new(0.0, 1.0).unwrap();
        let meas = PhaseState { i: 0.0, v1: 120.0, v2: 240.0 };
        let refs = References::new(0.0, p.vdc);
        let sel = select_optimal(&meas, &refs, &w, &c, &p, [0.0, 0.0]);
        assert_eq!(sel.state.index(), 0);
        let reversed = select_over(SwitchingState::ALL.into_iter().rev(), &meas, &refs, &w, &c, &p, [0.0, 0.0]);
        assert_eq!(reversed, sel);
    }

    #[test]
    fn mpc_step_is_deterministic() {
        let p = nominal();
        let mpc = Mpc::new(CostWeights::default(), p);
        let mut s = crate::plant::init_plant(&p);
        s.phases[0].i = 3.0;
        s.phases[1].i = -1.5;
        s.phases[2].i = -1.5;
        let refs = [
            References::new(4.0, p.vdc),
            References::new(-2.0, p.vdc),
            References::new(-2.0, p.vdc),
        ];
        let last = [SwitchingState::ALL[3]; 3];
        let a = mpc.step(&s, &refs, &last);
        let b = mpc.step(&s, &refs, &last);
        assert_eq!(a, b);
        for sel in a {
            assert!(sel.state.index() < 8);
        }
    }

    #[test]
    fn set_model_refreshes_constants() {
        let mut mpc = Mpc::new(CostWeights::default(), nominal());
        mpc.set_model(SystemParams { l: 5e-3, ..nominal() });
        assert_abs_diff_eq!(mpc.consts.m1, 0.006, epsilon = 1e-15);
    }

    #[test]
    fn reference_phases_are_balanced() {
        for t in [0.0, 0.0013, 0.017] {
            let s: f64 = (0..3).map(|x| reference_current(10.0, 50.0, t, x)).sum();
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }
    }
}
