//! Expert-labelled corpus: feature encodings, generation from closed-loop
//! MPC runs, CSV storage and the train/validation/test split.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{simulate, MpcPolicy, SimSetup, StepRecord};
use crate::error::{Error, Result};
use crate::mpc::{select_optimal, CostWeights, PredictorConstants, References};
use crate::plant::{phase_output_voltage, PhaseState, SwitchingState, SystemParams};
use crate::scenarios::ScenarioConfig;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const LABEL_COLUMN: &str = "s_opt_next";

/// One scalar input of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    V1,
    V2,
    IRef,
    I,
    /// `vdc/3 - v1`
    DeltaV1,
    /// `2 vdc/3 - v2`
    DeltaV2,
    /// `i_ref - i`
    DeltaI,
    /// `2 (i_ref - i)`
    DoubleDeltaI,
    /// Switching state applied over the previous period, stored as its index.
    SOptPrev,
    /// Pole voltage produced by the previous state.
    VPh,
}

impl Feature {
    pub fn column(self) -> &'static str {
        match self {
            Feature::V1 => "v1",
            Feature::V2 => "v2",
            Feature::IRef => "i_ref",
            Feature::I => "i",
            Feature::DeltaV1 => "dv1",
            Feature::DeltaV2 => "dv2",
            Feature::DeltaI => "di",
            Feature::DoubleDeltaI => "di_x2",
            Feature::SOptPrev => "s_opt_prev",
            Feature::VPh => "v_ph",
        }
    }
}

/// The five candidate input sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureVariant {
    X1,
    X2,
    X3,
    X4,
    X5,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 5] = [
        FeatureVariant::X1,
        FeatureVariant::X2,
        FeatureVariant::X3,
        FeatureVariant::X4,
        FeatureVariant::X5,
    ];

    pub fn features(self) -> &'static [Feature] {
        use Feature::*;
        match self {
            FeatureVariant::X1 => &[V1, V2, IRef, I, DeltaV1, DeltaV2, DeltaI, SOptPrev, VPh],
            FeatureVariant::X2 => &[V1, V2, IRef, I, DeltaV1, DeltaV2, DoubleDeltaI, SOptPrev],
            FeatureVariant::X3 => &[V1, V2, IRef, I, DeltaV1, DeltaV2, DeltaI, SOptPrev],
            FeatureVariant::X4 => &[V2, IRef, I, DeltaV1, DeltaV2, DeltaI, SOptPrev],
            FeatureVariant::X5 => &[IRef, I, DeltaV1, DeltaV2, DeltaI, SOptPrev],
        }
    }

    /// Number of raw components.
    pub fn len(self) -> usize {
        self.features().len()
    }

    /// Width after the previous state is expanded to an 8-wide one-hot block.
    pub fn expanded_len(self) -> usize {
        self.len() + 7
    }

    /// Expanded columns that carry continuous values.
    pub fn expanded_continuous_columns(self) -> Vec<usize> {
        let mut cols = Vec::new();
        let mut c = 0;
        for f in self.features() {
            if *f == Feature::SOptPrev {
                c += 8;
            } else {
                cols.push(c);
                c += 1;
            }
        }
        cols
    }

    /// Writes the one-hot expansion of `raw` into `out`.
    pub fn expand_into(self, raw: &[f64], out: &mut [f64]) {
        let mut c = 0;
        for (f, &v) in self.features().iter().zip(raw) {
            if *f == Feature::SOptPrev {
                out[c..c + 8].fill(0.0);
                out[c + v as usize] = 1.0;
                c += 8;
            } else {
                out[c] = v;
                c += 1;
            }
        }
    }

    pub fn columns(self) -> Vec<&'static str> {
        self.features().iter().map(|f| f.column()).collect()
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureVariant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Raw feature values of one phase at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub variant: FeatureVariant,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn expand(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.variant.expanded_len()];
        self.variant.expand_into(&self.values, &mut out);
        out
    }
}

pub fn extract_features(
    variant: FeatureVariant,
    meas: &PhaseState,
    i_ref: f64,
    vdc: f64,
    s_opt_prev: SwitchingState,
) -> FeatureVector {
    let values = variant
        .features()
        .iter()
        .map(|f| match f {
            Feature::V1 => meas.v1,
            Feature::V2 => meas.v2,
            Feature::IRef => i_ref,
            Feature::I => meas.i,
            Feature::DeltaV1 => vdc / 3.0 - meas.v1,
            Feature::DeltaV2 => 2.0 * vdc / 3.0 - meas.v2,
            Feature::DeltaI => i_ref - meas.i,
            Feature::DoubleDeltaI => 2.0 * (i_ref - meas.i),
            Feature::SOptPrev => s_opt_prev.index() as f64,
            Feature::VPh => phase_output_voltage(s_opt_prev, meas.v1, meas.v2, vdc),
        })
        .collect();
    FeatureVector { variant, values }
}

/// Everything needed to re-run the expert on one stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSample {
    pub record: usize,
    pub meas: PhaseState,
    pub refs: References,
    pub other_poles: [f64; 2],
    pub model: SystemParams,
    pub weights: CostWeights,
}

impl AuditSample {
    pub fn relabel(&self) -> u8 {
        let consts = PredictorConstants::new(&self.model);
        select_optimal(&self.meas, &self.refs, &self.weights, &consts, &self.model, self.other_poles)
            .state
            .index()
    }
}

/// Column-major-by-record store of labelled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variant: FeatureVariant,
    /// `len() x variant.len()`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub scenario: Vec<String>,
    pub phase: Vec<u8>,
    /// Controller step index within the scenario.
    pub step: Vec<u64>,
}

/// One labelled record, borrowed from a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord<'a> {
    pub features: &'a [f64],
    pub label: u8,
    pub scenario: &'a str,
    pub phase: u8,
    pub step: u64,
}

impl Dataset {
    pub fn new(variant: FeatureVariant) -> Self {
        Self {
            variant,
            features: Vec::new(),
            labels: Vec::new(),
            scenario: Vec::new(),
            phase: Vec::new(),
            step: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.variant.len();
        &self.features[r * w..(r + 1) * w]
    }

    pub fn record(&self, r: usize) -> LabeledRecord<'_> {
        LabeledRecord {
            features: self.row(r),
            label: self.labels[r],
            scenario: &self.scenario[r],
            phase: self.phase[r],
            step: self.step[r],
        }
    }

    pub fn push(&mut self, fv: &FeatureVector, label: u8, scenario: &str, phase: u8, step: u64) {
        debug_assert_eq!(fv.variant, self.variant);
        self.features.extend_from_slice(&fv.values);
        self.labels.push(label);
        self.scenario.push(scenario.to_string());
        self.phase.push(phase);
        self.step.push(step);
    }

    fn push_from(&mut self, other: &Dataset, r: usize) {
        self.features.extend_from_slice(other.row(r));
        self.labels.push(other.labels[r]);
        self.scenario.push(other.scenario[r].clone());
        self.phase.push(other.phase[r]);
        self.step.push(other.step[r]);
    }

    pub fn append(&mut self, mut other: Dataset) {
        assert_eq!(self.variant, other.variant);
        self.features.append(&mut other.features);
        self.labels.append(&mut other.labels);
        self.scenario.append(&mut other.scenario);
        self.phase.append(&mut other.phase);
        self.step.append(&mut other.step);
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.variant);
        for &r in rows {
            out.push_from(self, r);
        }
        out
    }

    pub fn class_histogram(&self) -> [u64; 8] {
        let mut h = [0u64; 8];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["scenario", "phase", "step"];
        h.extend(self.variant.columns());
        h.push(LABEL_COLUMN);
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let mut row = Vec::with_capacity(self.variant.len() + 4);
        for r in 0..self.len() {
            row.clear();
            row.push(self.scenario[r].clone());
            row.push(self.phase[r].to_string());
            row.push(self.step[r].to_string());
            for (f, v) in self.variant.features().iter().zip(self.row(r)) {
                row.push(if *f == Feature::SOptPrev {
                    (*v as u8).to_string()
                } else {
                    v.to_string()
                });
            }
            row.push(self.labels[r].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Parses a dataset CSV; the variant is recovered from the header.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let bad = |d: String| Error::format("dataset csv", d);
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let variant = FeatureVariant::ALL
            .into_iter()
            .find(|v| {
                let mut h = vec!["scenario", "phase", "step"];
                h.extend(v.columns());
                h.push(LABEL_COLUMN);
                h == header
            })
            .ok_or_else(|| bad(format!("header matches no feature variant: {header:?}")))?;
        let width = variant.len();
        let mut ds = Dataset::new(variant);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec[c]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e} in `{}`", line + 1, &rec[c])))
            };
            ds.scenario.push(rec[0].to_string());
            ds.phase.push(num(1)? as u8);
            ds.step.push(
                rec[2]
                    .parse()
                    .map_err(|e| bad(format!("row {}: {e}", line + 1)))?,
            );
            for c in 0..width {
                ds.features.push(num(3 + c)?);
            }
            let label = num(3 + width)?;
            if !(0.0..8.0).contains(&label) {
                return Err(bad(format!("row {}: label {label} outside 0..7", line + 1)));
            }
            ds.labels.push(label as u8);
        }
        Ok(ds)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Per-scenario entry of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub config: ScenarioConfig,
    pub records: u64,
    /// `"ok"` or `"aborted"`.
    pub status: String,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub sampled: u64,
    pub agreed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub weights: CostWeights,
    pub total_records: u64,
    pub class_histogram: Vec<u64>,
    pub audit: AuditSummary,
    pub scenarios: Vec<ScenarioSummary>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Orders ids such as `C2` before `C10`.
fn natural_key(id: &str) -> (String, u64, String) {
    let split = id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len());
    let (prefix, rest) = id.split_at(split);
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let tail = rest[digits.len()..].to_string();
    (prefix.to_string(), digits.parse().unwrap_or(0), tail)
}

/// Options that apply to every scenario of a generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub variant: FeatureVariant,
    pub weights: CostWeights,
    pub seed: u64,
    /// Every `audit_stride`-th record is re-labelled offline.
    pub audit_stride: usize,
}

impl GenerateOptions {
    pub fn new(variant: FeatureVariant) -> Self {
        Self {
            variant,
            weights: CostWeights::default(),
            seed: 0,
            audit_stride: 100,
        }
    }
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub manifest: Manifest,
    pub audit: Vec<AuditSample>,
}

/// Runs the MPC expert over each scenario and logs one record per phase
/// per full controller period after the scenario's discard interval.
/// The label is the state the expert applies over the coming period; the
/// previous-state feature is the state it applied over the last one.
pub fn generate_dataset(scenarios: &[ScenarioConfig], opts: &GenerateOptions) -> Result<Generated> {
    opts.weights.validate()?;
    for s in scenarios {
        s.validate()?;
    }
    let shards: Vec<Result<(Dataset, Vec<AuditSample>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || generate_scenario(s, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    });

    let mut dataset = Dataset::new(opts.variant);
    let mut audit = Vec::new();
    let mut summaries = Vec::new();
    let mut merged: Vec<(&ScenarioConfig, Result<(Dataset, Vec<AuditSample>)>)> = scenarios.iter().zip(shards).collect();
    merged.sort_by(|a, b| natural_key(&a.0.id).cmp(&natural_key(&b.0.id)));
    for (cfg, shard) in merged {
        match shard {
            Ok((ds, mut samples)) => {
                let offset = dataset.len();
                for a in &mut samples {
                    a.record += offset;
                }
                summaries.push(ScenarioSummary {
                    config: cfg.clone(),
                    records: ds.len() as u64,
                    status: "ok".into(),
                    diagnostic: None,
                });
                dataset.append(ds);
                audit.extend(samples);
            }
            Err(e) => summaries.push(ScenarioSummary {
                config: cfg.clone(),
                records: 0,
                status: "aborted".into(),
                diagnostic: Some(e.to_string()),
            }),
        }
    }
    let agreed = audit
        .iter()
        .filter(|a| a.relabel() == dataset.labels[a.record])
        .count();
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        variant: opts.variant.to_string(),
        seed: opts.seed,
        config_hash: config_hash(scenarios, opts)?,
        weights: opts.weights,
        total_records: dataset.len() as u64,
        class_histogram: dataset.class_histogram().to_vec(),
        audit: AuditSummary {
            sampled: audit.len() as u64,
            agreed: agreed as u64,
        },
        scenarios: summaries,
    };
    Ok(Generated {
        dataset,
        manifest,
        audit,
    })
}

fn config_hash(scenarios: &[ScenarioConfig], opts: &GenerateOptions) -> Result<String> {
    #[derive(Serialize)]
    struct Echo<'a> {
        variant: String,
        weights: CostWeights,
        seed: u64,
        scenario: &'a [ScenarioConfig],
    }
    let text = toml::to_string(&Echo {
        variant: opts.variant.to_string(),
        weights: opts.weights,
        seed: opts.seed,
        scenario: scenarios,
    })?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn generate_scenario(cfg: &ScenarioConfig, opts: &GenerateOptions) -> Result<(Dataset, Vec<AuditSample>)> {
    let setup = SimSetup::new(cfg.params, cfg.params, cfg.duration);
    let mut policy = MpcPolicy::new(opts.weights, cfg.params);
    let mut ds = Dataset::new(opts.variant);
    let mut audit = Vec::new();
    let stride = opts.audit_stride.max(1);
    let vdc = cfg.params.vdc;
    let mut observe = |rec: &StepRecord| {
        if !rec.full_period || rec.t + 1e-12 < cfg.discard {
            return;
        }
        let held = rec.meas.pole_voltages(&rec.prev, vdc);
        for x in 0..3 {
            let fv = extract_features(opts.variant, &rec.meas.phases[x], rec.refs[x].i_ref, vdc, rec.prev[x]);
            let row = ds.len();
            ds.push(&fv, rec.next[x].index(), &cfg.id, x as u8, rec.k as u64);
            if row % stride == 0 {
                audit.push(AuditSample {
                    record: row,
                    meas: rec.meas.phases[x],
                    refs: rec.refs[x],
                    other_poles: [held[(x + 1) % 3], held[(x + 2) % 3]],
                    model: cfg.params,
                    weights: opts.weights,
                });
            }
        }
    };
    let out = simulate(&setup, &mut policy, &mut observe, None)?;
    if let Some(diag) = out.diagnostic {
        return Err(Error::NonFinite {
            t: out.final_state.t,
            detail: format!("scenario {}: {diag}", cfg.id),
        });
    }
    Ok((ds, audit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "split fractions must be >= 0 and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Sizes for `n` records: validation and test are floored, the
    /// remainder goes to training.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.validation * n as f64 + 1e-9).floor() as usize;
        let test = (self.test * n as f64 + 1e-9).floor() as usize;
        (n - val - test, val, test)
    }
}

/// Seeded shuffle, then partition into (train, validation, test).
pub fn split_dataset(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_train, n_val, _) = spec.sizes(data.len());
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((data.subset(train), data.subset(val), data.subset(test)))
}
