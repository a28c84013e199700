//! Experiment orchestration: the train-merge-evaluate loop, the five-variant
//! ablation ladder, hyperparameter sweeps, and deterministic result files.
//!
//! A run is fully determined by `(config, seed)`: the stream, the backbone,
//! every adapter initialization and shuffle derive their sub-seeds from the
//! run seed, and no timestamps or durations reach the output files.

use crate::error::{Error, Result};
use crate::merge::{merge_adapter, MergeConfig};
use crate::metrics::{build_report, step_accuracy, MetricsReport, StepRecord};
use crate::model::{predict, AdapterParams, BackboneSpec, ModelState};
use crate::rng::{sub_seed, SeedDomain};
use crate::stream::{build_stream, StreamParams, StreamProtocol};
use crate::train::{train_task, trace_to_text, LossPoint, TrainConfig};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// The ablation ladder. Each rung adds one mechanism on top of the previous:
/// plain parameter averaging, spectral alignment, class-count weights,
/// rank-wise gating, and finally Balanced Softmax training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    Sm,
    SmCcw,
    SmCcwRtm,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::Sm,
        Variant::SmCcw,
        Variant::SmCcwRtm,
        Variant::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Sm => "sm",
            Variant::SmCcw => "sm_ccw",
            Variant::SmCcwRtm => "sm_ccw_rtm",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }

    fn uses_balanced_softmax(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one experiment needs; config-file keys match the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Stream.
    pub total_classes: usize,
    pub num_steps: usize,
    pub rho: f64,
    pub class_rho: f64,
    pub n_max: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise_scale: f64,
    // Model.
    pub input_dim: usize,
    pub feature_dim: usize,
    pub adapter_dim: usize,
    pub scale: f64,
    // Training.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    // Merge.
    pub head_ratio: f64,
    pub gamma_head: f64,
    pub gamma_tail: f64,
    // Run.
    pub variant: Variant,
    pub output_dir: PathBuf,
    pub seed_list: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            total_classes: 40,
            num_steps: 10,
            rho: 0.01,
            class_rho: 0.01,
            n_max: 100,
            test_per_class: 30,
            separation: 1.25,
            noise_scale: 1.0,
            input_dim: 24,
            feature_dim: 48,
            adapter_dim: 16,
            scale: 1.0,
            learning_rate: 0.07,
            epochs: 20,
            batch_size: 16,
            weight_decay: 5e-4,
            head_ratio: 0.3,
            gamma_head: 0.2,
            gamma_tail: 0.9,
            variant: Variant::Full,
            output_dir: PathBuf::from("out"),
            seed_list: vec![1, 2, 3, 4, 5],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        line: 0,
        message: format!("bad value for {key}: `{value}`"),
    })
}

/// Parses a comma-separated seed list.
pub fn parse_seed_list(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = value
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_num::<u64>("seed_list", t))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput { what: "seed_list" });
    }
    Ok(seeds)
}

impl RunConfig {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "total_classes" => self.total_classes = parse_num("total_classes", value)?,
            "num_steps" => self.num_steps = parse_num("num_steps", value)?,
            "rho" => self.rho = parse_num("rho", value)?,
            "class_rho" => self.class_rho = parse_num("class_rho", value)?,
            "n_max" => self.n_max = parse_num("n_max", value)?,
            "test_per_class" => self.test_per_class = parse_num("test_per_class", value)?,
            "separation" => self.separation = parse_num("separation", value)?,
            "noise_scale" => self.noise_scale = parse_num("noise_scale", value)?,
            "input_dim" => self.input_dim = parse_num("input_dim", value)?,
            "feature_dim" => self.feature_dim = parse_num("feature_dim", value)?,
            "adapter_dim" => self.adapter_dim = parse_num("adapter_dim", value)?,
            "scale" => self.scale = parse_num("scale", value)?,
            "learning_rate" => self.learning_rate = parse_num("learning_rate", value)?,
            "epochs" => self.epochs = parse_num("epochs", value)?,
            "batch_size" => self.batch_size = parse_num("batch_size", value)?,
            "weight_decay" => self.weight_decay = parse_num("weight_decay", value)?,
            "head_ratio" => self.head_ratio = parse_num("head_ratio", value)?,
            "gamma_head" => self.gamma_head = parse_num("gamma_head", value)?,
            "gamma_tail" => self.gamma_tail = parse_num("gamma_tail", value)?,
            "variant" => self.variant = Variant::parse(value.trim())?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "seed_list" => self.seed_list = parse_seed_list(value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a plain-text config: one `key=value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Renders the config in the same `key=value` format it parses.
    pub fn echo(&self) -> String {
        let seeds: Vec<String> = self.seed_list.iter().map(|s| s.to_string()).collect();
        format!(
            "total_classes={}\nnum_steps={}\nrho={}\nclass_rho={}\nn_max={}\n\
             test_per_class={}\nseparation={}\nnoise_scale={}\ninput_dim={}\n\
             feature_dim={}\nadapter_dim={}\nscale={}\nlearning_rate={}\nepochs={}\n\
             batch_size={}\nweight_decay={}\nhead_ratio={}\ngamma_head={}\n\
             gamma_tail={}\nvariant={}\noutput_dir={}\nseed_list={}\n",
            self.total_classes,
            self.num_steps,
            self.rho,
            self.class_rho,
            self.n_max,
            self.test_per_class,
            self.separation,
            self.noise_scale,
            self.input_dim,
            self.feature_dim,
            self.adapter_dim,
            self.scale,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.weight_decay,
            self.head_ratio,
            self.gamma_head,
            self.gamma_tail,
            self.variant,
            self.output_dir.display(),
            seeds.join(",")
        )
    }

    fn stream_params(&self) -> StreamParams {
        StreamParams {
            total_classes: self.total_classes,
            num_steps: self.num_steps,
            rho: self.rho,
            class_rho: self.class_rho,
            n_max: self.n_max,
            test_per_class: self.test_per_class,
            input_dim: self.input_dim,
            separation: self.separation,
            noise_scale: self.noise_scale,
        }
    }

    fn train_config(&self, step: usize, run_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            use_balanced_softmax: self.variant.uses_balanced_softmax(),
            seed: sub_seed(run_seed, SeedDomain::TaskTraining, step as u64),
        }
    }

    fn merge_config(&self, c_old: usize, c_new: usize) -> Result<MergeConfig> {
        match self.variant {
            Variant::Sm => MergeConfig::new(1, 1, self.head_ratio, 1.0, 1.0),
            Variant::SmCcw => MergeConfig::new(c_old, c_new, self.head_ratio, 1.0, 1.0),
            Variant::SmCcwRtm | Variant::Full => MergeConfig::new(
                c_old,
                c_new,
                self.head_ratio,
                self.gamma_head,
                self.gamma_tail,
            ),
            Variant::Base => unreachable!("base variant does not build a merge config"),
        }
    }
}

/// Unweighted elementwise parameter averaging, the direct-merge baseline.
fn direct_average_adapter(base: &AdapterParams, new: &AdapterParams) -> Result<AdapterParams> {
    if !base.same_architecture(new) {
        return Err(Error::ShapeMismatch {
            op: "direct_average_adapter",
            expected: (base.feature_dim(), base.hidden_dim()),
            got: (new.feature_dim(), new.hidden_dim()),
        });
    }
    let mut out = base.clone();
    for (dst, src) in out.w_down.data_mut().iter_mut().zip(new.w_down.data()) {
        *dst = 0.5 * (*dst + src);
    }
    for (dst, src) in out.w_up.data_mut().iter_mut().zip(new.w_up.data()) {
        *dst = 0.5 * (*dst + src);
    }
    for (dst, src) in out.ln_gain.iter_mut().zip(&new.ln_gain) {
        *dst = 0.5 * (*dst + *src);
    }
    for (dst, src) in out.ln_bias.iter_mut().zip(&new.ln_bias) {
        *dst = 0.5 * (*dst + *src);
    }
    Ok(out)
}

/// Everything one seed's run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub protocol: StreamProtocol,
    /// Adapter parameter sets present at each evaluation point.
    pub adapter_counts: Vec<usize>,
    pub loss_trace: Vec<LossPoint>,
}

/// One full continual pass: build the stream, then per step train a task
/// adapter, fold it into the base (step 1 installs it directly), and
/// evaluate on the accumulated class-balanced test set.
pub fn run_continual(cfg: &RunConfig, seed: u64) -> Result<RunOutput> {
    let (protocol, dataset) = build_stream(&cfg.stream_params(), seed)?;
    let backbone = BackboneSpec::new(
        cfg.input_dim,
        cfg.feature_dim,
        sub_seed(seed, SeedDomain::Backbone, 0),
    );
    let initial = AdapterParams::init(
        cfg.feature_dim,
        cfg.adapter_dim,
        cfg.scale,
        sub_seed(seed, SeedDomain::AdapterInit, 0),
    )?;
    let mut state = ModelState::new(backbone, initial)?;

    let mut records = Vec::with_capacity(protocol.num_steps);
    let mut adapter_counts = Vec::with_capacity(protocol.num_steps);
    let mut loss_trace = Vec::new();
    let mut seen_classes: Vec<usize> = Vec::new();

    for step in &protocol.steps {
        let at_step = |e: Error| Error::AtStep {
            step: step.step_index,
            inner: Box::new(e),
        };
        let task_classes = step.class_ids.clone();
        state.head.grow(&task_classes).map_err(at_step)?;

        let task_data = dataset.train_subset(&task_classes);
        let tcfg = cfg.train_config(step.step_index, seed);
        let outcome = train_task(&mut state, &task_data, &task_classes, &tcfg).map_err(at_step)?;
        loss_trace.extend(outcome.trace);

        if step.step_index == 1 {
            state.adapter = outcome.adapter;
        } else {
            let c_old = seen_classes.len();
            let c_new = task_classes.len();
            state.adapter = match cfg.variant {
                Variant::Base => {
                    direct_average_adapter(&state.adapter, &outcome.adapter).map_err(at_step)?
                }
                _ => merge_adapter(
                    &state.adapter,
                    &outcome.adapter,
                    &cfg.merge_config(c_old, c_new).map_err(at_step)?,
                )
                .map_err(at_step)?,
            };
        }
        seen_classes.extend(&task_classes);

        // Accumulated evaluation over every class seen so far.
        let test = dataset.test_subset(&seen_classes);
        let predictions: Vec<(usize, usize)> = test
            .iter()
            .map(|s| predict(&state, &s.input).map(|p| (p, s.label)))
            .collect::<Result<_>>()
            .map_err(at_step)?;
        let (accuracy, per_class) = step_accuracy(&predictions).map_err(at_step)?;
        adapter_counts.push(state.adapter_count());
        records.push(StepRecord {
            step_index: step.step_index,
            accumulated_class_count: seen_classes.len(),
            accuracy,
            per_class,
        });
    }

    let report = build_report(records, &protocol)?;
    Ok(RunOutput {
        report,
        protocol,
        adapter_counts,
        loss_trace,
    })
}

/// Mean and sample standard deviation of the headline metrics over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean_a_final: f64,
    pub std_a_final: f64,
    pub mean_a_bar: f64,
    pub std_a_bar: f64,
    pub mean_wa_bar: f64,
    pub std_wa_bar: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(reports: &[&MetricsReport]) -> Aggregate {
    let finals: Vec<f64> = reports.iter().map(|r| r.a_final).collect();
    let bars: Vec<f64> = reports.iter().map(|r| r.a_bar).collect();
    let wbars: Vec<f64> = reports.iter().map(|r| r.wa_bar).collect();
    let (mean_a_final, std_a_final) = mean_std(&finals);
    let (mean_a_bar, std_a_bar) = mean_std(&bars);
    let (mean_wa_bar, std_wa_bar) = mean_std(&wbars);
    Aggregate {
        mean_a_final,
        std_a_final,
        mean_a_bar,
        std_a_bar,
        mean_wa_bar,
        std_wa_bar,
    }
}

/// One seed's contribution to a [`RunResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub output: RunOutput,
    pub duration: Duration,
}

/// All seeds of one variant, with aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub per_seed: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

/// Runs the configured variant over every seed in the list.
pub fn run_batch(cfg: &RunConfig) -> Result<RunResult> {
    if cfg.seed_list.is_empty() {
        return Err(Error::EmptyInput { what: "seed_list" });
    }
    let mut per_seed = Vec::with_capacity(cfg.seed_list.len());
    for &seed in &cfg.seed_list {
        let start = Instant::now();
        let output = run_continual(cfg, seed)?;
        per_seed.push(SeedRun {
            seed,
            output,
            duration: start.elapsed(),
        });
    }
    let agg = {
        let reports: Vec<&MetricsReport> = per_seed.iter().map(|s| &s.output.report).collect();
        aggregate(&reports)
    };
    Ok(RunResult {
        variant: cfg.variant,
        per_seed,
        aggregate: agg,
    })
}

/// Runs all five variants over the same seed list. Streams depend only on
/// the seed, so every variant sees identical data; this is verified against
/// the protocol dumps before returning.
pub fn run_ablation(cfg: &RunConfig) -> Result<Vec<RunResult>> {
    let mut results = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut vcfg = cfg.clone();
        vcfg.variant = variant;
        results.push(run_batch(&vcfg)?);
    }
    for result in &results[1..] {
        for (a, b) in results[0].per_seed.iter().zip(&result.per_seed) {
            if a.output.protocol.dump() != b.output.protocol.dump() {
                return Err(Error::Parse {
                    line: 0,
                    message: format!(
                        "stream mismatch between variants {} and {} at seed {}",
                        results[0].variant, result.variant, a.seed
                    ),
                });
            }
        }
    }
    Ok(results)
}

/// Sweepable hyperparameters.
const SWEEP_PARAMS: [&str; 4] = ["head_ratio", "gamma_head", "gamma_tail", "rho"];

/// One multi-seed batch per sweep value, same seeds throughout.
pub fn run_sensitivity(cfg: &RunConfig, param: &str, values: &[f64]) -> Result<Vec<(f64, RunResult)>> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::UnknownKey(param.to_string()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "sweep values" });
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut vcfg = cfg.clone();
        vcfg.set(param, &format!("{value}"))?;
        rows.push((value, run_batch(&vcfg)?));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Result files. All writes go through a temp-file rename so partially
// written files never appear under the final name.
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Atomic text write: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(io_err(path))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn summary_header() -> &'static str {
    "variant,seeds,mean_A_T,std_A_T,mean_Abar,std_Abar,mean_wAbar,std_wAbar\n"
}

fn summary_row(result: &RunResult) -> String {
    let a = &result.aggregate;
    format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        result.variant,
        result.per_seed.len(),
        a.mean_a_final,
        a.std_a_final,
        a.mean_a_bar,
        a.std_a_bar,
        a.mean_wa_bar,
        a.std_wa_bar
    )
}

/// Writes per-seed metrics CSVs, training logs, protocol dumps, a summary
/// CSV, and the config echo. Rerunning with identical config and seeds
/// reproduces every file byte for byte.
pub fn emit_results(results: &[RunResult], cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    atomic_write(&out_dir.join("config.txt"), &cfg.echo())?;

    let mut summary = String::from(summary_header());
    let mut dumped_seeds: BTreeSet<u64> = BTreeSet::new();
    for result in results {
        summary.push_str(&summary_row(result));
        for seed_run in &result.per_seed {
            let tag = format!("{}_seed{}", result.variant, seed_run.seed);
            atomic_write(
                &out_dir.join(format!("metrics_{tag}.csv")),
                &crate::metrics::report_to_csv(&seed_run.output.report),
            )?;
            atomic_write(
                &out_dir.join(format!("trainlog_{tag}.txt")),
                &trace_to_text(&seed_run.output.loss_trace),
            )?;
            if dumped_seeds.insert(seed_run.seed) {
                atomic_write(
                    &out_dir.join(format!("protocol_seed{}.txt", seed_run.seed)),
                    &seed_run.output.protocol.dump(),
                )?;
            }
        }
    }
    atomic_write(&out_dir.join("summary.csv"), &summary)
}

/// Writes the sweep table: one row per (value, aggregate).
pub fn emit_sweep(
    rows: &[(f64, RunResult)],
    param: &str,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    atomic_write(&out_dir.join("config.txt"), &cfg.echo())?;
    let mut table = String::from("param,value,seeds,mean_A_T,std_A_T,mean_Abar,mean_wAbar\n");
    for (value, result) in rows {
        let a = &result.aggregate;
        table.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            param,
            value,
            result.per_seed.len(),
            a.mean_a_final,
            a.std_a_final,
            a.mean_a_bar,
            a.mean_wa_bar
        ));
    }
    atomic_write(&out_dir.join("sweep.csv"), &table)
}
