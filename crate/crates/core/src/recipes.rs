//! Named experiments that regenerate the data behind each figure and table
//! of the study as plot-ready CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    compare_runs, run_thd, save_comparison_csv, settling_time, SettleOptions, Settling, Spectrum, ThdOptions,
    ThdReport,
};
use crate::ann::{evaluate, train, Batch, EvalReport, MlpModel, TrainConfig, TrainReport, NUM_CLASSES};
use crate::controller::{run_with_model, Event, RunScript, TimeSeriesRun, TimedEvent};
use crate::dataset::{generate_dataset, split_dataset, Dataset, FeatureVariant, GenerateOptions, Generated, SplitSpec};
use crate::error::{Error, Result};
use crate::mpc::{cost, predict, CostWeights, PredictorConstants, References};
use crate::plant::{common_mode_voltage, init_plant, phase_output_voltage, SwitchingState, SystemParams, PHASE_NAMES};
use crate::scenarios::{self, ScenarioConfig, OPERATING_POINTS, THD_BAR_SCENARIOS};

pub const RECIPES: [&str; 18] = [
    "table1_switching_states",
    "table2_feature_study",
    "table3_training_conditions",
    "table4_training_results",
    "table5_parameters",
    "fig1_topology",
    "fig2_mpc_flowchart",
    "fig3_ann_block_diagram",
    "fig4_confusion",
    "fig5_ann_step",
    "fig6_mpc_step",
    "fig7_ann_spectrum",
    "fig8_mpc_spectrum",
    "fig9_ann_capacitors",
    "fig10_mpc_capacitors",
    "fig11_ann_mismatch",
    "fig12_mpc_mismatch",
    "fig13_thd_bars",
];

/// Reference step of the dynamic-response experiment.
pub const STEP_TIME: f64 = 0.05;
pub const STEP_FROM: f64 = 10.0;
pub const STEP_TO: f64 = 5.0;
pub const STEP_DURATION: f64 = 0.1;
/// Load-inductance change of the mismatch experiment.
pub const MISMATCH_TIME: f64 = 0.1;
pub const MISMATCH_L: f64 = 5e-3;

/// Scale knobs shared by every recipe. Loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecipeSettings {
    /// Training-condition selector, e.g. `C1..C11`.
    pub conditions: String,
    /// Simulated seconds per training condition.
    pub condition_duration: f64,
    pub discard: f64,
    /// Length of each closed-loop evaluation run.
    pub run_duration: f64,
    pub weights: CostWeights,
    pub train: TrainConfig,
    pub thd: ThdOptions,
    /// Highest frequency written to spectrum files.
    pub spectrum_max_freq: f64,
    pub settle_band_pct: f64,
    pub settle: SettleOptions,
}

impl Default for RecipeSettings {
    fn default() -> Self {
        Self {
            conditions: "C1..C11".into(),
            condition_duration: scenarios::DEFAULT_DURATION,
            discard: scenarios::DEFAULT_DISCARD,
            run_duration: 0.2,
            weights: CostWeights::default(),
            train: TrainConfig::default(),
            thd: ThdOptions::default(),
            spectrum_max_freq: 5000.0,
            settle_band_pct: 5.0,
            settle: SettleOptions::default(),
        }
    }
}

impl RecipeSettings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn training_scenarios(&self, seed: u64) -> Result<Vec<ScenarioConfig>> {
        Ok(scenarios::select(&self.conditions)?
            .into_iter()
            .map(|s| s.with_duration(self.condition_duration).with_discard(self.discard).with_seed(seed))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct RecipeContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub model: Option<PathBuf>,
    pub variant: FeatureVariant,
    pub settings: RecipeSettings,
}

impl RecipeContext {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed: 0,
            model: None,
            variant: FeatureVariant::X2,
            settings: RecipeSettings::default(),
        }
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn load_model(&self, recipe: &str) -> Result<(MlpModel, PathBuf)> {
        let path = self
            .model
            .clone()
            .ok_or_else(|| Error::InvalidParams(format!("recipe {recipe} needs a trained model (--model)")))?;
        let model = MlpModel::load(&path)?;
        if model.variant != self.variant {
            return Err(Error::VariantMismatch {
                model: model.variant.to_string(),
                requested: self.variant.to_string(),
            });
        }
        Ok((model, path))
    }
}

/// Files written by a recipe plus a short human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct RecipeOutput {
    pub name: String,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

impl RecipeOutput {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn note(&mut self, line: impl AsRef<str>) {
        self.summary.push_str(line.as_ref());
        self.summary.push('\n');
    }
}

pub fn run_recipe(name: &str, ctx: &RecipeContext) -> Result<RecipeOutput> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let out = match name {
        "table1_switching_states" => table1_switching_states(ctx),
        "table2_feature_study" => table2_feature_study(ctx),
        "table3_training_conditions" => table3_training_conditions(ctx),
        "table4_training_results" => table4_training_results(ctx),
        "table5_parameters" => table5_parameters(ctx),
        "fig1_topology" => fig1_topology(ctx),
        "fig2_mpc_flowchart" => fig2_mpc_flowchart(ctx),
        "fig3_ann_block_diagram" => fig3_ann_block_diagram(ctx),
        "fig4_confusion" => fig4_confusion(ctx),
        "fig5_ann_step" => step_recipe(ctx, name, true),
        "fig6_mpc_step" => step_recipe(ctx, name, false),
        "fig7_ann_spectrum" => spectrum_recipe(ctx, name, true),
        "fig8_mpc_spectrum" => spectrum_recipe(ctx, name, false),
        "fig9_ann_capacitors" => capacitor_recipe(ctx, name, true),
        "fig10_mpc_capacitors" => capacitor_recipe(ctx, name, false),
        "fig11_ann_mismatch" => mismatch_recipe(ctx, name, true),
        "fig12_mpc_mismatch" => mismatch_recipe(ctx, name, false),
        "fig13_thd_bars" => fig13_thd_bars(ctx),
        other => Err(Error::InvalidParams(format!(
            "unknown recipe {other}; known: {}",
            RECIPES.join(", ")
        ))),
    }?;
    let summary_path = ctx.path(&format!("{name}.summary.txt"));
    std::fs::write(&summary_path, &out.summary)?;
    let mut out = out;
    out.artifacts.push(summary_path);
    Ok(out)
}

/// Corpus generation, split and training, as used by the training recipes
/// and the acceptance suite.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub generated: Generated,
    pub split: (Dataset, Dataset, Dataset),
    pub model: MlpModel,
    pub report: TrainReport,
}

pub fn build_corpus(settings: &RecipeSettings, variant: FeatureVariant, seed: u64) -> Result<Generated> {
    let opts = GenerateOptions {
        weights: settings.weights,
        seed,
        ..GenerateOptions::new(variant)
    };
    generate_dataset(&settings.training_scenarios(seed)?, &opts)
}

pub fn train_policy(settings: &RecipeSettings, variant: FeatureVariant, seed: u64) -> Result<TrainedPolicy> {
    let generated = build_corpus(settings, variant, seed)?;
    let (tr, va, te) = split_dataset(&generated.dataset, &SplitSpec::with_seed(seed))?;
    let cfg = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let (model, mut report) = train(&tr, &va, &cfg)?;
    let test = evaluate(&model, &Batch::from_dataset(&te, &model.norm));
    report.instances.test = te.len() as u64;
    report.test = Some(test);
    Ok(TrainedPolicy {
        generated,
        split: (tr, va, te),
        model,
        report,
    })
}

fn write_confusion(path: &Path, eval: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["target".to_string()];
    header.extend((0..NUM_CLASSES).map(|c| format!("pred_V{c}")));
    header.extend(["recall".to_string(), "precision".to_string()]);
    w.write_record(&header)?;
    for t in 0..NUM_CLASSES {
        let mut row = vec![format!("V{t}")];
        row.extend(eval.confusion[t].iter().map(u64::to_string));
        row.push(eval.recall[t].to_string());
        row.push(eval.precision[t].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn table1_switching_states(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("table1_switching_states");
    let p = SystemParams::default();
    let (v1, v2) = (p.vdc / 3.0, 2.0 * p.vdc / 3.0);
    let path = ctx.path("table1_switching_states.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["vector", "s1", "s2", "s3", "expression", "v_xn"])?;
    for s in SwitchingState::ALL {
        w.write_record([
            format!("V{}", s.index()),
            u8::from(s.s1).to_string(),
            u8::from(s.s2).to_string(),
            u8::from(s.s3).to_string(),
            state_expression(s).to_string(),
            phase_output_voltage(s, v1, v2, p.vdc).to_string(),
        ])?;
    }
    w.flush()?;
    out.note(format!("pole voltages at vdc={} V with balanced capacitors", p.vdc));
    out.artifacts.push(path);
    Ok(out)
}

/// Symbolic pole voltage of each state.
pub fn state_expression(s: SwitchingState) -> &'static str {
    match s.index() {
        0 => "-Vdc/2",
        1 => "V1-Vdc/2",
        2 => "V2-V1-Vdc/2",
        3 => "V2-Vdc/2",
        4 => "Vdc/2-V2",
        5 => "Vdc/2-V2+V1",
        6 => "Vdc/2-V1",
        _ => "Vdc/2",
    }
}

fn table2_feature_study(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("table2_feature_study");
    let points: Vec<ScenarioConfig> = OPERATING_POINTS
        .iter()
        .map(|p| p.scenario().with_duration(ctx.settings.run_duration))
        .collect();
    let mut runs = Vec::new();
    for sc in &points {
        runs.push(run_with_model(&RunScript::mpc(sc.clone()), None)?);
    }
    let mut acc = String::from("variant,test_accuracy,best_hidden,best_epoch\n");
    for variant in FeatureVariant::ALL {
        let trained = train_policy(&ctx.settings, variant, ctx.seed)?;
        let model_path = ctx.path(&format!("table2_model_{variant}.txt"));
        trained.model.save(&model_path)?;
        out.artifacts.push(model_path.clone());
        let accuracy = trained.report.test.as_ref().map_or(f64::NAN, |t| t.accuracy);
        writeln!(
            acc,
            "{variant},{accuracy},{},{}",
            trained.report.best_hidden, trained.report.best_epoch
        )
        .expect("string write");
        for sc in &points {
            let script = RunScript::ann(sc.clone(), &model_path, variant);
            runs.push(run_with_model(&script, Some(&trained.model))?);
        }
        out.note(format!("{variant}: test accuracy {accuracy:.4}"));
    }
    let rows = compare_runs(&runs, &ctx.settings.thd)?;
    let path = ctx.path("table2_feature_study.csv");
    save_comparison_csv(&rows, &path)?;
    let acc_path = ctx.path("table2_accuracy.csv");
    std::fs::write(&acc_path, acc)?;
    out.artifacts.extend([path, acc_path]);
    Ok(out)
}

fn table3_training_conditions(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("table3_training_conditions");
    let path = ctx.path("table3_training_conditions.csv");
    std::fs::write(&path, scenarios::training_conditions_csv())?;
    let resolved = ctx.path("table3_resolved.toml");
    scenarios::save_file(&resolved, &ctx.settings.training_scenarios(ctx.seed)?)?;
    out.note(format!("{} conditions", scenarios::TRAINING_CONDITIONS.len()));
    out.artifacts.extend([path, resolved]);
    Ok(out)
}

fn table4_training_results(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("table4_training_results");
    let trained = train_policy(&ctx.settings, ctx.variant, ctx.seed)?;
    let data = ctx.path("table4_dataset.csv");
    trained.generated.dataset.save_csv(&data)?;
    let manifest = ctx.path("table4_dataset.manifest.toml");
    trained.generated.manifest.save(&manifest)?;
    let model = ctx.path("table4_model.txt");
    trained.model.save(&model)?;
    let report = ctx.path("table4_report.toml");
    std::fs::write(&report, trained.report.to_toml()?)?;
    let confusion = ctx.path("table4_confusion.csv");
    let test = trained.report.test.as_ref().expect("test evaluated");
    write_confusion(&confusion, test)?;
    let curve = ctx.path("table4_training_curve.csv");
    let mut text = String::from("hidden,epoch,train_loss\n");
    for p in &trained.report.sweep {
        for (e, l) in p.train_loss.iter().enumerate() {
            writeln!(text, "{},{},{}", p.hidden, e + 1, l).expect("string write");
        }
    }
    std::fs::write(&curve, text)?;
    out.note(format!("instances: {}", trained.generated.dataset.len()));
    out.note(format!(
        "best hidden {} validation error {:.4} at epoch {}",
        trained.report.best_hidden, trained.report.best_val_error, trained.report.best_epoch
    ));
    out.note(format!("test accuracy {:.4} ({})", test.accuracy, trained.report.optimizer));
    out.artifacts.extend([data, manifest, model, report, confusion, curve]);
    Ok(out)
}

fn table5_parameters(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("table5_parameters");
    let p = SystemParams::default();
    let path = ctx.path("table5_parameters.csv");
    let rows = [
        ("dc-link voltage", "V", p.vdc),
        ("load resistance", "ohm", p.r),
        ("load inductance", "mH", p.l * 1e3),
        ("flying capacitor", "uF", p.c1 * 1e6),
        ("sampling time", "us", p.ts * 1e6),
        ("fundamental frequency", "Hz", p.f0),
    ];
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["parameter", "unit", "value"])?;
    for (name, unit, value) in rows {
        w.write_record([name, unit, &value.to_string()])?;
    }
    w.flush()?;
    out.note(format!("nominal reference amplitude {} A", p.iref_amp));
    out.artifacts.push(path);
    Ok(out)
}

fn fig1_topology(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("fig1_topology");
    let p = SystemParams::default();
    let path = ctx.path("fig1_topology.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["element", "phase", "node_a", "node_b", "value"])?;
    w.write_record(["Vdc", "-", "P", "Nn", &p.vdc.to_string()])?;
    for x in PHASE_NAMES {
        let n = |s: &str| format!("{s}_{x}");
        for (k, (a, b)) in [("P", "c2p"), ("c2p", "c1p"), ("c1p", "out"), ("out", "c1n"), ("c1n", "c2n"), ("c2n", "Nn")]
            .iter()
            .enumerate()
        {
            let node = |s: &str| if s == "P" || s == "Nn" { s.to_string() } else { n(s) };
            w.write_record([format!("S{}", k + 1), x.to_string(), node(a), node(b), "switch".into()])?;
        }
        w.write_record(["C2".into(), x.to_string(), n("c2p"), n("c2n"), p.c2.to_string()])?;
        w.write_record(["C1".into(), x.to_string(), n("c1p"), n("c1n"), p.c1.to_string()])?;
        w.write_record(["R".into(), x.to_string(), n("out"), n("rl"), p.r.to_string()])?;
        w.write_record(["L".into(), x.to_string(), n("rl"), "O".into(), p.l.to_string()])?;
    }
    w.flush()?;
    out.note("three flying-capacitor legs feeding a star-connected RL load");
    out.artifacts.push(path);
    Ok(out)
}

fn fig2_mpc_flowchart(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("fig2_mpc_flowchart");
    let p = SystemParams::default();
    let consts = PredictorConstants::new(&p);
    let w = ctx.settings.weights;
    let mut meas = init_plant(&p);
    let t = 0.0025;
    meas.t = t;
    let refs = References::three_phase(p.iref_amp, &p, t);
    for x in 0..3 {
        meas.phases[x].i = 0.95 * refs[x].i_ref;
    }
    let last = [SwitchingState::ALL[0]; 3];
    let held = meas.pole_voltages(&last, p.vdc);
    let path = ctx.path("fig2_mpc_flowchart.csv");
    let mut wr = csv::Writer::from_path(&path)?;
    wr.write_record(["phase", "candidate", "v_xn", "v_on", "i_next", "v1_next", "v2_next", "cost", "selected"])?;
    for x in 0..3 {
        let others = [held[(x + 1) % 3], held[(x + 2) % 3]];
        let rows: Vec<_> = SwitchingState::ALL
            .iter()
            .map(|&s| {
                let ph = &meas.phases[x];
                let v_xn = phase_output_voltage(s, ph.v1, ph.v2, p.vdc);
                let v_on = common_mode_voltage(v_xn, others[0], others[1]);
                let pred = predict(ph, s, v_on, &consts, &p);
                (s, v_xn, v_on, pred, cost(&pred, &refs[x], &w))
            })
            .collect();
        let best = rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .4.total_cmp(&b.1 .4).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
            .expect("eight candidates");
        for (k, (s, v_xn, v_on, pred, j)) in rows.iter().enumerate() {
            wr.write_record([
                PHASE_NAMES[x].to_string(),
                format!("V{}", s.index()),
                v_xn.to_string(),
                v_on.to_string(),
                pred.i_next.to_string(),
                pred.v1_next.to_string(),
                pred.v2_next.to_string(),
                j.to_string(),
                u8::from(k == best).to_string(),
            ])?;
        }
        out.note(format!("phase {}: V{} selected", PHASE_NAMES[x], rows[best].0.index()));
    }
    wr.flush()?;
    out.artifacts.push(path);
    Ok(out)
}

fn fig3_ann_block_diagram(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("fig3_ann_block_diagram");
    let hidden = match &ctx.model {
        Some(_) => ctx.load_model("fig3_ann_block_diagram")?.0.hidden,
        None => ctx.settings.train.hidden_sizes.iter().copied().max().unwrap_or(16),
    };
    let v = ctx.variant;
    let path = ctx.path("fig3_ann_block_diagram.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["layer", "unit", "name"])?;
    let mut names: Vec<String> = v
        .columns()
        .iter()
        .filter(|c| **c != "s_opt_prev")
        .map(|c| c.to_string())
        .collect();
    if v.columns().contains(&"s_opt_prev") {
        names.extend((0..8).map(|k| format!("s_opt_prev=V{k}")));
    }
    for (k, n) in names.iter().enumerate() {
        w.write_record(["input", &k.to_string(), n])?;
    }
    for j in 0..hidden {
        w.write_record(["hidden", &j.to_string(), "tanh"])?;
    }
    for n in 0..NUM_CLASSES {
        w.write_record(["output", &n.to_string(), &format!("V{n}")])?;
    }
    w.flush()?;
    out.note(format!("{v}: {} inputs, {hidden} hidden, {NUM_CLASSES} outputs", names.len()));
    out.artifacts.push(path);
    Ok(out)
}

fn fig4_confusion(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("fig4_confusion");
    let eval = match &ctx.model {
        Some(_) => {
            let (model, _) = ctx.load_model("fig4_confusion")?;
            let corpus = build_corpus(&ctx.settings, ctx.variant, ctx.seed)?;
            let (_, _, te) = split_dataset(&corpus.dataset, &SplitSpec::with_seed(ctx.seed))?;
            evaluate(&model, &Batch::from_dataset(&te, &model.norm))
        }
        None => train_policy(&ctx.settings, ctx.variant, ctx.seed)?
            .report
            .test
            .expect("test evaluated"),
    };
    let path = ctx.path("fig4_confusion.csv");
    write_confusion(&path, &eval)?;
    out.note(format!("test accuracy {:.4} over {} instances", eval.accuracy, eval.total));
    out.artifacts.push(path);
    Ok(out)
}

/// Runs `script` with the neural controller when `ann`, else the expert.
fn run_pair_member(ctx: &RecipeContext, recipe: &str, scenario: ScenarioConfig, ann: bool) -> Result<TimeSeriesRun> {
    if ann {
        let (model, path) = ctx.load_model(recipe)?;
        run_with_model(&RunScript::ann(scenario, path, ctx.variant), Some(&model))
    } else {
        let mut script = RunScript::mpc(scenario);
        script.weights = ctx.settings.weights;
        run_with_model(&script, None)
    }
}

fn run_script(ctx: &RecipeContext, recipe: &str, mut script: RunScript, ann: bool) -> Result<TimeSeriesRun> {
    if ann {
        let (model, path) = ctx.load_model(recipe)?;
        script.controller = crate::controller::ControllerKind::Ann {
            model: path,
            variant: ctx.variant,
        };
        run_with_model(&script, Some(&model))
    } else {
        script.weights = ctx.settings.weights;
        run_with_model(&script, None)
    }
}

pub fn step_script(duration: f64) -> RunScript {
    let mut sc = scenarios::nominal().with_duration(duration);
    sc.params.iref_amp = STEP_FROM;
    RunScript::mpc(sc).with_events(vec![TimedEvent::new(STEP_TIME, Event::SetIrefAmp(STEP_TO))])
}

pub fn mismatch_script(duration: f64) -> RunScript {
    RunScript::mpc(scenarios::nominal().with_duration(duration))
        .with_events(vec![TimedEvent::new(MISMATCH_TIME, Event::SetPlantL(MISMATCH_L))])
}

/// Per-phase settling of a reference-step run.
pub fn step_settling(run: &TimeSeriesRun, band_pct: f64, opts: &SettleOptions) -> Result<[Settling; 3]> {
    let dt = run.sample_period();
    let start = run.meta.script.record_from;
    let r = |x: usize| {
        settling_time(&run.recording.i[x], &run.iref[x], dt, STEP_TIME - start, band_pct, opts)
    };
    Ok([r(0)?, r(1)?, r(2)?])
}

fn step_recipe(ctx: &RecipeContext, name: &str, ann: bool) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new(name);
    let run = run_script(ctx, name, step_script(STEP_DURATION), ann)?;
    let (csv, meta) = run.save(&ctx.out_dir, name)?;
    for (x, s) in step_settling(&run, ctx.settings.settle_band_pct, &ctx.settings.settle)?
        .iter()
        .enumerate()
    {
        match s {
            Settling::Settled { time } => out.note(format!("phase {}: settled {:.4} s after the step", PHASE_NAMES[x], time)),
            Settling::NotSettled => out.note(format!("phase {}: not settled", PHASE_NAMES[x])),
        }
    }
    out.artifacts.extend([csv, meta]);
    Ok(out)
}

fn note_thd(out: &mut RecipeOutput, reports: &[ThdReport; 3]) {
    for (x, r) in reports.iter().enumerate() {
        out.note(format!(
            "i_{}: THD {:.3}% (fundamental {:.3} A, harmonics 2..{}, {} cycles from {:.3} s)",
            PHASE_NAMES[x], r.thd, r.fundamental, r.max_harmonic, r.cycles, r.window_start
        ));
    }
}

fn spectrum_recipe(ctx: &RecipeContext, name: &str, ann: bool) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new(name);
    let run = run_pair_member(ctx, name, scenarios::nominal().with_duration(ctx.settings.run_duration), ann)?;
    let (series, meta) = run.save(&ctx.out_dir, &format!("{name}_run"))?;
    out.artifacts.extend([series, meta]);
    let thd = run_thd(&run, &ctx.settings.thd)?;
    let dt = run.sample_period();
    let start = ((thd[0].window_start / dt).round() as usize).min(run.recording.len());
    let spec = Spectrum::compute(&run.recording.i[0][start..], dt)?;
    let path = ctx.path(&format!("{name}.csv"));
    spec.write_csv(std::fs::File::create(&path)?, ctx.settings.spectrum_max_freq)?;
    let thd_path = ctx.path(&format!("{name}.thd.toml"));
    std::fs::write(&thd_path, toml::to_string(&ThdTable { phase: thd.to_vec() })?)?;
    note_thd(&mut out, &thd);
    out.artifacts.extend([path, thd_path]);
    Ok(out)
}

#[derive(Serialize)]
struct ThdTable {
    phase: Vec<ThdReport>,
}

fn capacitor_recipe(ctx: &RecipeContext, name: &str, ann: bool) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new(name);
    let run = run_pair_member(ctx, name, scenarios::nominal().with_duration(ctx.settings.run_duration), ann)?;
    let path = ctx.path(&format!("{name}.csv"));
    let rec = &run.recording;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "v1_a", "v2_a", "v1_b", "v2_b", "v1_c", "v2_c"])?;
    for j in 0..rec.len() {
        let mut row = vec![rec.t[j]];
        for x in 0..3 {
            row.extend([rec.v1[x][j], rec.v2[x][j]]);
        }
        w.serialize(row)?;
    }
    w.flush()?;
    let vdc = run.meta.script.scenario.params.vdc;
    for x in 0..3 {
        let dev = |v: &[f64], target: f64| v.iter().fold(0.0f64, |m, s| m.max((s - target).abs() / target));
        out.note(format!(
            "phase {}: worst deviation v1 {:.2}% v2 {:.2}%",
            PHASE_NAMES[x],
            100.0 * dev(&rec.v1[x], vdc / 3.0),
            100.0 * dev(&rec.v2[x], 2.0 * vdc / 3.0)
        ));
    }
    out.artifacts.push(path);
    Ok(out)
}

fn mismatch_recipe(ctx: &RecipeContext, name: &str, ann: bool) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new(name);
    let run = run_script(ctx, name, mismatch_script(ctx.settings.run_duration.max(0.2)), ann)?;
    let (csv, meta) = run.save(&ctx.out_dir, name)?;
    note_thd(&mut out, &run_thd(&run, &ctx.settings.thd)?);
    if let Some(d) = &run.meta.diagnostic {
        out.note(format!("diagnostic: {d}"));
    }
    out.artifacts.extend([csv, meta]);
    Ok(out)
}

fn fig13_thd_bars(ctx: &RecipeContext) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::new("fig13_thd_bars");
    let (model, path) = ctx.load_model("fig13_thd_bars")?;
    let mut runs = Vec::new();
    for name in THD_BAR_SCENARIOS {
        let sc = scenarios::builtin(name)?.with_duration(ctx.settings.run_duration);
        let mut mpc = RunScript::mpc(sc.clone());
        mpc.weights = ctx.settings.weights;
        runs.push(run_with_model(&mpc, None)?);
        runs.push(run_with_model(&RunScript::ann(sc, &path, ctx.variant), Some(&model))?);
    }
    let rows = compare_runs(&runs, &ctx.settings.thd)?;
    let csv = ctx.path("fig13_thd_bars.csv");
    save_comparison_csv(&rows, &csv)?;
    for pair in rows.chunks(2) {
        out.note(format!(
            "{}: mpc {:.3}% ann {:.3}%",
            pair[0].scenario_id, pair[0].thd_mean, pair[1].thd_mean
        ));
    }
    out.artifacts.push(csv);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_names_are_unique() {
        let mut names = RECIPES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), RECIPES.len());
    }

    #[test]
    fn static_recipes_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RecipeContext::new(dir.path());
        for name in [
            "table1_switching_states",
            "table3_training_conditions",
            "table5_parameters",
            "fig1_topology",
            "fig2_mpc_flowchart",
            "fig3_ann_block_diagram",
        ] {
            let out = run_recipe(name, &ctx).unwrap();
            for a in &out.artifacts {
                assert!(a.exists(), "{name}: {}", a.display());
            }
        }
        let table1 = std::fs::read_to_string(dir.path().join("table1_switching_states.csv")).unwrap();
        assert!(table1.contains("V5,1,0,1,Vdc/2-V2+V1,60"));
    }

    #[test]
    fn model_recipes_require_a_model() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RecipeContext::new(dir.path());
        assert!(run_recipe("fig13_thd_bars", &ctx).is_err());
        assert!(run_recipe("fig5_ann_step", &ctx).is_err());
        assert!(run_recipe("no_such_recipe", &ctx).is_err());
    }

    #[test]
    fn flowchart_selection_matches_expert() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RecipeContext::new(dir.path());
        run_recipe("fig2_mpc_flowchart", &ctx).unwrap();
        let text = std::fs::read_to_string(dir.path().join("fig2_mpc_flowchart.csv")).unwrap();
        assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 3);
    }
}
