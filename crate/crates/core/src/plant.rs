//! Three-phase four-level flying-capacitor inverter feeding an RL load.
//!
//! Each phase leg has three independent cells (S1, S2, S3) and two flying
//! capacitors. With the capacitors held at one and two thirds of the
//! dc-link voltage, the eight switching combinations of a leg produce four
//! distinct pole voltages. The redundant combinations charge or discharge
//! the capacitors in opposite directions.
//!
//! The plant is integrated with forward Euler at `plant_substep`, a whole
//! fraction of the controller period.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phase suffixes in column and report order.
pub const PHASE_NAMES: [&str; 3] = ["a", "b", "c"];

/// On/off commands of the three cells of one phase leg. The complementary
/// switch of every cell is implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct SwitchingState {
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
}

impl SwitchingState {
    /// All eight states, ordered by voltage-vector index V0..V7.
    pub const ALL: [SwitchingState; 8] = [
        SwitchingState::new(false, false, false),
        SwitchingState::new(true, false, false),
        SwitchingState::new(false, true, false),
        SwitchingState::new(true, true, false),
        SwitchingState::new(false, false, true),
        SwitchingState::new(true, false, true),
        SwitchingState::new(false, true, true),
        SwitchingState::new(true, true, true),
    ];

    pub const fn new(s1: bool, s2: bool, s3: bool) -> Self {
        Self { s1, s2, s3 }
    }

    /// Voltage-vector index, `s1 + 2*s2 + 4*s3`.
    pub const fn index(self) -> u8 {
        self.s1 as u8 + 2 * self.s2 as u8 + 4 * self.s3 as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    /// `s2 - s1`: sign of the current flowing into the inner capacitor.
    pub fn c1_drive(self) -> f64 {
        self.s2 as i8 as f64 - self.s1 as i8 as f64
    }

    /// `s3 - s2`: sign of the current flowing into the outer capacitor.
    pub fn c2_drive(self) -> f64 {
        self.s3 as i8 as f64 - self.s2 as i8 as f64
    }
}

impl std::fmt::Display for SwitchingState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "V{}({},{},{})",
            self.index(),
            self.s1 as u8,
            self.s2 as u8,
            self.s3 as u8
        )
    }
}

/// Pole voltage of one leg, measured from the dc-link midpoint N.
pub fn phase_output_voltage(state: SwitchingState, v1: f64, v2: f64, vdc: f64) -> f64 {
    let half = vdc / 2.0;
    match (state.s1, state.s2, state.s3) {
        (false, false, false) => -half,
        (true, false, false) => v1 - half,
        (false, true, false) => v2 - v1 - half,
        (true, true, false) => v2 - half,
        (false, false, true) => half - v2,
        (true, false, true) => half - v2 + v1,
        (false, true, true) => half - v1,
        (true, true, true) => half,
    }
}

/// Load neutral potential of a balanced star-connected RL load.
pub fn common_mode_voltage(va: f64, vb: f64, vc: f64) -> f64 {
    (va + vb + vc) / 3.0
}

/// Physical parameters of the converter and its load, plus the controller
/// sampling period and the plant integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub vdc: f64,
    pub r: f64,
    pub l: f64,
    pub c1: f64,
    pub c2: f64,
    /// Controller sampling period.
    pub ts: f64,
    pub f0: f64,
    pub iref_amp: f64,
    pub plant_substep: f64,
}

impl Default for SystemParams {
    /// Nominal converter: 360 V, 15 Ω, 10 mH, 680 µF, 30 µs, 50 Hz, 10 A.
    fn default() -> Self {
        Self {
            vdc: 360.0,
            r: 15.0,
            l: 10e-3,
            c1: 680e-6,
            c2: 680e-6,
            ts: 30e-6,
            f0: 50.0,
            iref_amp: 10.0,
            plant_substep: 1e-6,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vdc", self.vdc),
            ("r", self.r),
            ("l", self.l),
            ("c1", self.c1),
            ("c2", self.c2),
            ("ts", self.ts),
            ("f0", self.f0),
            ("iref_amp", self.iref_amp),
            ("plant_substep", self.plant_substep),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if self.plant_substep > self.ts {
            return Err(Error::InvalidParams(format!(
                "plant_substep {} exceeds ts {}",
                self.plant_substep, self.ts
            )));
        }
        integer_ratio(self.ts, self.plant_substep).ok_or_else(|| {
            Error::InvalidParams(format!(
                "ts {} is not an integer multiple of plant_substep {}",
                self.ts, self.plant_substep
            ))
        })?;
        Ok(())
    }

    /// Number of plant sub-steps per controller period.
    pub fn substeps_per_period(&self) -> usize {
        integer_ratio(self.ts, self.plant_substep).unwrap_or(1)
    }
}

/// `num / den` when it is (numerically) a positive integer.
pub(crate) fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let ratio = num / den;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-6 * rounded {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Load current and flying-capacitor voltages of one leg.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseState {
    pub i: f64,
    pub v1: f64,
    pub v2: f64,
}

impl PhaseState {
    fn is_finite(&self) -> bool {
        self.i.is_finite() && self.v1.is_finite() && self.v2.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub phases: [PhaseState; 3],
    pub t: f64,
}

impl PlantState {
    pub fn check_finite(&self) -> Result<()> {
        for (name, ph) in PHASE_NAMES.iter().zip(&self.phases) {
            if !ph.is_finite() {
                return Err(Error::NonFinite {
                    t: self.t,
                    detail: format!("phase {name}: {ph:?}"),
                });
            }
        }
        if !self.t.is_finite() {
            return Err(Error::NonFinite {
                t: self.t,
                detail: "clock".into(),
            });
        }
        Ok(())
    }

    /// Pole voltages for the given switch positions at the current
    /// capacitor voltages.
    pub fn pole_voltages(&self, switches: &[SwitchingState; 3], vdc: f64) -> [f64; 3] {
        std::array::from_fn(|x| {
            let ph = &self.phases[x];
            phase_output_voltage(switches[x], ph.v1, ph.v2, vdc)
        })
    }
}

/// Rest state with balanced pre-charged capacitors.
pub fn init_plant(params: &SystemParams) -> PlantState {
    let phase = PhaseState {
        i: 0.0,
        v1: params.vdc / 3.0,
        v2: 2.0 * params.vdc / 3.0,
    };
    PlantState {
        phases: [phase; 3],
        t: 0.0,
    }
}

/// One recorded plant sample: the state at `t` and the switch positions
/// applied over the sub-step that starts at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub phases: [PhaseState; 3],
    pub vph: [f64; 3],
    pub switches: [SwitchingState; 3],
}

/// Receiver for sub-step samples.
pub trait SampleSink {
    fn record(&mut self, sample: &Sample);
}

impl SampleSink for () {
    fn record(&mut self, _: &Sample) {}
}

/// Integrates `n` forward-Euler sub-steps of length `params.plant_substep`
/// with the switches held. Every pre-step sample goes to `sink`. Time is
/// computed as `t0 + j*h` rather than accumulated.
pub fn advance(
    state: &PlantState,
    switches: &[SwitchingState; 3],
    params: &SystemParams,
    n: usize,
    sink: &mut impl SampleSink,
) -> Result<PlantState> {
    let h = params.plant_substep;
    let t0 = state.t;
    let mut cur = *state;
    for j in 0..n {
        let vph = cur.pole_voltages(switches, params.vdc);
        sink.record(&Sample {
            t: cur.t,
            phases: cur.phases,
            vph,
            switches: *switches,
        });
        let v_on = common_mode_voltage(vph[0], vph[1], vph[2]);
        let mut next = cur;
        for x in 0..3 {
            let ph = cur.phases[x];
            let sw = switches[x];
            let di = (vph[x] - v_on - params.r * ph.i) / params.l;
            next.phases[x] = PhaseState {
                i: ph.i + h * di,
                v1: ph.v1 + h * ph.i * sw.c1_drive() / params.c1,
                v2: ph.v2 + h * ph.i * sw.c2_drive() / params.c2,
            };
        }
        next.t = t0 + (j + 1) as f64 * h;
        next.check_finite()?;
        cur = next;
    }
    Ok(cur)
}

/// Advances the plant by one controller period `params.ts`.
pub fn step_plant(
    state: &PlantState,
    switches: &[SwitchingState; 3],
    params: &SystemParams,
    sink: &mut impl SampleSink,
) -> Result<PlantState> {
    state.check_finite()?;
    advance(state, switches, params, params.substeps_per_period(), sink)
}

/// Column-oriented store of plant samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub t: Vec<f64>,
    pub i: [Vec<f64>; 3],
    pub v1: [Vec<f64>; 3],
    pub v2: [Vec<f64>; 3],
    pub vph: [Vec<f64>; 3],
    pub state: [Vec<u8>; 3],
}

/// Column order of the plant CSV.
pub const RECORDING_COLUMNS: [&str; 16] = [
    "t", "i_a", "i_b", "i_c", "v1_a", "v2_a", "v1_b", "v2_b", "v1_c", "v2_c", "vph_a", "vph_b",
    "vph_c", "state_a", "state_b", "state_c",
];

impl SampleSink for Recording {
    fn record(&mut self, s: &Sample) {
        self.t.push(s.t);
        for x in 0..3 {
            self.i[x].push(s.phases[x].i);
            self.v1[x].push(s.phases[x].v1);
            self.v2[x].push(s.phases[x].v2);
            self.vph[x].push(s.vph[x]);
            self.state[x].push(s.switches[x].index());
        }
    }
}

impl Recording {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Looks up a numeric channel by its CSV column name.
    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        let phase = |suffix: &str| PHASE_NAMES.iter().position(|p| *p == suffix);
        if name == "t" {
            return Some(self.t.clone());
        }
        let (base, suffix) = name.rsplit_once('_')?;
        let x = phase(suffix)?;
        match base {
            "i" => Some(self.i[x].clone()),
            "v1" => Some(self.v1[x].clone()),
            "v2" => Some(self.v2[x].clone()),
            "vph" => Some(self.vph[x].clone()),
            "state" => Some(self.state[x].iter().map(|&s| s as f64).collect()),
            _ => None,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RECORDING_COLUMNS)?;
        let mut row: Vec<String> = Vec::with_capacity(RECORDING_COLUMNS.len());
        for k in 0..self.len() {
            row.clear();
            row.push(self.t[k].to_string());
            for x in 0..3 {
                row.push(self.i[x][k].to_string());
            }
            for x in 0..3 {
                row.push(self.v1[x][k].to_string());
                row.push(self.v2[x][k].to_string());
            }
            for x in 0..3 {
                row.push(self.vph[x][k].to_string());
            }
            for x in 0..3 {
                row.push(self.state[x][k].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Reads one named numeric column (and the time column) from any CSV whose
/// header contains `t` and `channel`.
pub fn read_csv_channel(path: impl AsRef<Path>, channel: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format("time-series csv", format!("no column `{name}`")))
    };
    let t_col = col("t")?;
    let v_col = col(channel)?;
    let mut t = Vec::new();
    let mut v = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec[c]
                .parse::<f64>()
                .map_err(|e| Error::format("time-series csv", format!("{e} in `{}`", &rec[c])))
        };
        t.push(parse(t_col)?);
        v.push(parse(v_col)?);
    }
    Ok((t, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform(state: SwitchingState) -> [SwitchingState; 3] {
        [state; 3]
    }

    #[test]
    fn index_round_trips() {
        for (k, s) in SwitchingState::ALL.iter().enumerate() {
            assert_eq!(s.index() as usize, k);
            assert_eq!(SwitchingState::from_index(k as u8), Some(*s));
        }
        assert_eq!(SwitchingState::from_index(8), None);
    }

    #[test]
    fn table_extremes() {
        let v = |k: u8| phase_output_voltage(SwitchingState::from_index(k).unwrap(), 7.0, 11.0, 360.0);
        assert_eq!(v(0), -180.0);
        assert_eq!(v(7), 180.0);
        assert_eq!(
            phase_output_voltage(SwitchingState::from_index(3).unwrap(), 0.0, 240.0, 360.0),
            60.0
        );
    }

    #[test]
    fn common_mode_examples() {
        assert_eq!(common_mode_voltage(180.0, 180.0, 180.0), 180.0);
        assert_eq!(common_mode_voltage(180.0, -180.0, 0.0), 0.0);
        assert_eq!(common_mode_voltage(60.0, -60.0, -180.0), -60.0);
    }

    #[test]
    fn init_is_balanced_and_at_rest() {
        for vdc in [360.0, 342.0] {
            let p = SystemParams { vdc, ..Default::default() };
            let s = init_plant(&p);
            for ph in s.phases {
                assert_eq!(ph.i, 0.0);
                assert_eq!(ph.v1, vdc / 3.0);
                assert_eq!(ph.v2, 2.0 * vdc / 3.0);
            }
            assert_eq!(s.t, 0.0);
        }
        let p = SystemParams { vdc: 342.0, ..Default::default() };
        assert_eq!(init_plant(&p).phases[0].v1, 114.0);
        assert_eq!(init_plant(&p).phases[0].v2, 228.0);
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::default().validate().is_ok());
        let bad = SystemParams { l: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SystemParams { plant_substep: 7e-6, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SystemParams { plant_substep: 60e-6, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SystemParams { r: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(SystemParams::default().substeps_per_period(), 30);
        let odd = SystemParams { ts: 45e-6, ..Default::default() };
        assert_eq!(odd.substeps_per_period(), 45);
    }

    #[test]
    fn rl_decay_matches_exponential() {
        let p = SystemParams::default();
        let mut s = init_plant(&p);
        s.phases[0].i = 10.0;
        let next = step_plant(&s, &uniform(SwitchingState::ALL[0]), &p, &mut ()).unwrap();
        let exact = 10.0 * (-p.r * p.ts / p.l).exp();
        assert_abs_diff_eq!(exact, 9.5600, epsilon = 1e-4);
        assert_abs_diff_eq!(next.phases[0].i, exact, epsilon = 1e-3);
        assert_abs_diff_eq!(next.t, p.ts, epsilon = 1e-18);
    }

    #[test]
    fn zero_current_keeps_capacitors() {
        let p = SystemParams::default();
        let s = init_plant(&p);
        for st in SwitchingState::ALL {
            let sw = [st, SwitchingState::ALL[0], SwitchingState::ALL[7]];
            // One sub-step: currents are still exactly zero at its start.
            let next = advance(&s, &sw, &p, 1, &mut ()).unwrap();
            for x in 0..3 {
                assert_eq!(next.phases[x].v1, s.phases[x].v1);
                assert_eq!(next.phases[x].v2, s.phases[x].v2);
            }
        }
    }

    #[test]
    fn constant_current_discharges_inner_capacitor() {
        // A very large inductance pins the current over one period.
        let p = SystemParams { l: 1e9, ..Default::default() };
        let mut s = init_plant(&p);
        s.phases[0].i = 10.0;
        let sw = [
            SwitchingState::ALL[1],
            SwitchingState::ALL[7],
            SwitchingState::ALL[7],
        ];
        let next = step_plant(&s, &sw, &p, &mut ()).unwrap();
        let dv1 = next.phases[0].v1 - s.phases[0].v1;
        assert_abs_diff_eq!(dv1, -10.0 * 30e-6 / 680e-6, epsilon = 1e-6);
        assert_abs_diff_eq!(dv1, -0.44118, epsilon = 1e-5);
        assert_abs_diff_eq!(next.phases[0].v2, s.phases[0].v2, epsilon = 1e-12);
    }

    #[test]
    fn capacitor_change_equals_recorded_charge() {
        let p = SystemParams::default();
        let mut s = init_plant(&p);
        s.phases = [
            PhaseState { i: 8.0, v1: 121.0, v2: 238.0 },
            PhaseState { i: -3.0, v1: 119.0, v2: 241.0 },
            PhaseState { i: -5.0, v1: 120.5, v2: 240.0 },
        ];
        let sw = [
            SwitchingState::ALL[2],
            SwitchingState::ALL[5],
            SwitchingState::ALL[4],
        ];
        let mut rec = Recording::default();
        let next = step_plant(&s, &sw, &p, &mut rec).unwrap();
        assert_eq!(rec.len(), 30);
        for x in 0..3 {
            let charge: f64 = rec.i[x].iter().map(|i| i * p.plant_substep).sum();
            let dv1 = charge * sw[x].c1_drive() / p.c1;
            let dv2 = charge * sw[x].c2_drive() / p.c2;
            assert_abs_diff_eq!(next.phases[x].v1 - s.phases[x].v1, dv1, epsilon = 1e-12);
            assert_abs_diff_eq!(next.phases[x].v2 - s.phases[x].v2, dv2, epsilon = 1e-12);
        }
    }

    #[test]
    fn redundant_states_balance_in_opposite_directions() {
        let v1_state = SwitchingState::ALL[1];
        let v2_state = SwitchingState::ALL[2];
        assert!(v1_state.c1_drive() < 0.0);
        assert!(v2_state.c1_drive() > 0.0);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = SystemParams::default();
        let mut s = init_plant(&p);
        s.phases[1].v2 = f64::INFINITY;
        let err = step_plant(&s, &uniform(SwitchingState::ALL[0]), &p, &mut ()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn recording_channel_lookup() {
        let p = SystemParams::default();
        let mut rec = Recording::default();
        let mut s = init_plant(&p);
        s.phases[2].i = 1.0;
        step_plant(&s, &uniform(SwitchingState::ALL[6]), &p, &mut rec).unwrap();
        assert_eq!(rec.channel("i_c").unwrap()[0], 1.0);
        assert_eq!(rec.channel("state_b").unwrap()[0], 6.0);
        assert!(rec.channel("i_d").is_none());
        assert!(rec.channel("x_a").is_none());
    }
}
