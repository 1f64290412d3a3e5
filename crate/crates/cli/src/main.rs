//! `elpq` command-line tool.
//!
//! Exit status: 0 on success, 2 when an accuracy constraint could not be
//! met, 1 on any error (including bad arguments).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use elpq::analysis::{self, NoiseMode};
use elpq::driver::{self, MethodologyConfig, SweepFile};
use elpq::engine::{self, reference::FloatNet, FixedPointConfig, PreparedModel};
use elpq::quantizer::CompensationMode;
use elpq::systolic::{self, ArrayConfig, CostTable};
use elpq::tensorio::{load_dataset, load_model, write_model, Dataset, Model};
use elpq::FormatSpec;

#[derive(Parser)]
#[command(name = "elpq", version, about = "ELP_BSD post-training quantization toolkit")]
struct Cli {
    /// Write the JSON/CSV result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quantize a float model's weights to an ELP_BSD format.
    Quantize(QuantizeArgs),
    /// Top-1 accuracy at a given activation width.
    Eval(EvalArgs),
    /// Find the critical activation bit-width.
    Search(SearchArgs),
    /// Full methodology: search, quantize, compensate, accuracy loop.
    Pipeline(PipelineArgs),
    /// Accuracy (and PDP) for every format x activation width.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Distribution, correlation, bias-noise and variance studies.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Replay a quantized model on the systolic array.
    Simulate(SimulateArgs),
    /// Logits of one sample through the integer engine.
    Infer(InferArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// FormatSpec JSON file or inline JSON.
    #[arg(long)]
    format: String,
    #[arg(long)]
    no_compensate: bool,
    #[arg(long, value_enum, default_value = "channel")]
    mode: Mode,
    /// Directory for the quantized model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Channel,
    Filter,
}

impl From<Mode> for CompensationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Channel => CompensationMode::Channel,
            Mode::Filter => CompensationMode::Filter,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    act_bits: u32,
    /// Samples used to calibrate binary points.
    #[arg(long, default_value_t = 100)]
    calib: usize,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ac: f64,
    #[arg(long)]
    bw_max: u32,
    #[arg(long, default_value_t = 2)]
    bw_min: u32,
    #[arg(long, default_value_t = 100)]
    subset: usize,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: String,
    #[arg(long)]
    ac: f64,
    #[arg(long)]
    bw_max: u32,
    #[arg(long, default_value_t = 2)]
    bw_min: u32,
    #[arg(long, default_value_t = 100)]
    subset: usize,
    #[arg(long)]
    no_compensate: bool,
    #[arg(long, value_enum, default_value = "channel")]
    mode: Mode,
    /// Directory for the quantized model.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Cost table; adds per-layer PDP/energy estimates to the report.
    #[arg(long)]
    cost: Option<PathBuf>,
    #[arg(long)]
    design: Option<String>,
    #[arg(long, default_value = "32x32")]
    array: String,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Summary statistics of every weight and bias tensor.
    Dist {
        #[arg(long)]
        model: PathBuf,
    },
    /// Correlation of feature maps with their shifted selves.
    IntraCorr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model layer whose input maps are analysed.
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 2)]
        max_shift: usize,
    },
    /// Channel-by-channel correlation matrix of one sample.
    InterCorr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Accuracy after adding noise to one layer's biases.
    BiasNoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long, value_enum, default_value = "constant")]
        mode: NoiseArg,
        /// Comma-separated magnitudes (constant/split-sign) or sigmas.
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        /// Interpret levels as multiples of the layer's max |bias|.
        #[arg(long)]
        relative: bool,
        /// Filters to perturb; all by default.
        #[arg(long)]
        filters: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Predicted vs. Monte Carlo excess variance of a noisy dot product.
    Variance {
        #[arg(long, default_value_t = 20)]
        sets: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Constant,
    SplitSign,
    Gaussian,
}

impl From<NoiseArg> for NoiseMode {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Constant => NoiseMode::Constant,
            NoiseArg::SplitSign => NoiseMode::SplitSign,
            NoiseArg::Gaussian => NoiseMode::Gaussian,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Quantized model manifest.
    #[arg(long)]
    model: PathBuf,
    /// Array size as ROWSxCOLS.
    #[arg(long, default_value = "32x32")]
    array: String,
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Cost-table entry; the first entry by default.
    #[arg(long)]
    design: Option<String>,
    /// Dataset to draw the input from; a seeded random input otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, default_value_t = 8)]
    act_bits: u32,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, default_value_t = 8)]
    act_bits: u32,
    #[arg(long, default_value_t = 100)]
    calib: usize,
}

struct Output(Option<PathBuf>);

impl Output {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.0 {
            Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => Box::new(std::io::stdout().lock()),
        })
    }

    fn json<T: Serialize>(&self, v: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, v)?;
        writeln!(w)?;
        Ok(())
    }

    fn csv<T: Serialize>(&self, rows: &[T]) -> Result<()> {
        analysis::write_csv(rows, self.writer()?)?;
        Ok(())
    }
}

fn read_format(arg: &str) -> Result<FormatSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading format {arg}"))?
    };
    serde_json::from_str(&text).context("parsing format spec")
}

fn read_cost(path: &Path) -> Result<CostTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(CostTable::from_json(&text)?)
}

fn parse_array(s: &str, model: &Model) -> Result<ArrayConfig> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("array `{s}` is not ROWSxCOLS"))?;
    let digits = model
        .layers
        .iter()
        .find_map(|l| l.weights.as_ref().and_then(|w| w.as_quantized()))
        .map(|q| q.format().digits().len())
        .context("model has no quantized layers")?;
    Ok(ArrayConfig::new(r.trim().parse()?, c.trim().parse()?, digits)?)
}

fn layer_index(model: &Model, name: &str) -> Result<usize> {
    if let Some(k) = model.layers.iter().position(|l| l.name() == name) {
        return Ok(k);
    }
    match name.parse::<usize>() {
        Ok(k) if k < model.layers.len() => Ok(k),
        _ => bail!("no layer named `{name}`"),
    }
}

fn write_quantized_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_model(model, dir, "model.json")?;
    Ok(())
}

fn simulate(model: &Model, fp: &FixedPointConfig, input: &[f32], array: &str, cost: Option<&Path>, design: Option<&str>) -> Result<Vec<systolic::SimSummary>> {
    let array = parse_array(array, model)?;
    let table = cost.map(read_cost).transpose()?;
    let pair = match &table {
        Some(t) => {
            let name = match design {
                Some(d) => d.to_string(),
                None => t.designs.first().context("cost table is empty")?.name.clone(),
            };
            Some((t, name))
        }
        None => None,
    };
    Ok(systolic::simulate_model(
        model,
        input,
        fp,
        &array,
        pair.as_ref().map(|(t, n)| (*t, n.as_str())),
    )?)
}

#[derive(Serialize)]
struct EvalReport {
    act_bits: u32,
    float_accuracy: f64,
    /// Bit-exact for quantized models, activation-only for float ones.
    accuracy: f64,
    quantized: bool,
    samples: usize,
}

#[derive(Serialize)]
struct DistRow {
    layer: String,
    tensor: &'static str,
    count: usize,
    mean: f64,
    std: f64,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
    tail_2sigma: f64,
    tail_3sigma: f64,
}

impl DistRow {
    fn new(layer: &str, tensor: &'static str, values: &[f64]) -> Result<Self> {
        let s = analysis::distribution_stats(values)?;
        Ok(DistRow {
            layer: layer.to_string(),
            tensor,
            count: s.count,
            mean: s.mean,
            std: s.std,
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            tail_2sigma: s.tail_2sigma,
            tail_3sigma: s.tail_3sigma,
        })
    }
}

#[derive(Serialize)]
struct CorrRow {
    a: usize,
    b: usize,
    r: Option<f64>,
}

#[derive(Serialize)]
struct InferReport {
    sample: usize,
    label: i32,
    predicted: usize,
    logits: Vec<f64>,
}

fn calibrated(model: &Model, data: &Dataset, bits: u32, calib: usize) -> Result<FixedPointConfig> {
    Ok(FixedPointConfig::calibrate(model, &data.head(calib), bits)?)
}

/// Returns true when a constraint was left unmet.
fn run(cli: Cli) -> Result<bool> {
    let out = Output(cli.out);
    match cli.cmd {
        Cmd::Quantize(a) => {
            let model = load_model(&a.model)?;
            let format = read_format(&a.format)?;
            let mode = (!a.no_compensate).then(|| a.mode.into());
            let (q, layers) = driver::quantize_model(&model, &format, mode)?;
            if let Some(dir) = &a.model_out {
                write_quantized_model(&q, dir)?;
            }
            out.json(&layers)?;
        }
        Cmd::Eval(a) => {
            let model = load_model(&a.model)?;
            let data = load_dataset(&a.data)?;
            let float_accuracy = driver::float_accuracy(&model, &data)?;
            let accuracy = if model.is_quantized() {
                engine::evaluate_accuracy(&model, &data, &calibrated(&model, &data, a.act_bits, a.calib)?)?
            } else {
                driver::act_quant_accuracy(&model, &data, a.act_bits)?
            };
            out.json(&EvalReport {
                act_bits: a.act_bits,
                float_accuracy,
                accuracy,
                quantized: model.is_quantized(),
                samples: data.len(),
            })?;
        }
        Cmd::Search(a) => {
            let model = load_model(&a.model)?;
            let data = load_dataset(&a.data)?;
            // the format is unused by the search itself
            let cfg = MethodologyConfig::new(FormatSpec::single_signed(0..8, 1.0)?, a.ac, a.bw_max, a.bw_min, a.subset)?;
            let s = driver::search_cbwa(&model, &data, &cfg)?;
            out.json(&s)?;
            return Ok(!s.constraint_met);
        }
        Cmd::Pipeline(a) => {
            let model = load_model(&a.model)?;
            let data = load_dataset(&a.data)?;
            let mut cfg = MethodologyConfig::new(read_format(&a.format)?, a.ac, a.bw_max, a.bw_min, a.subset)?;
            cfg.compensation = (!a.no_compensate).then(|| a.mode.into());
            let (q, mut report) = driver::run_pipeline(&model, &data, &cfg)?;
            if let Some(cost) = &a.cost {
                report.pdp_estimates = Some(simulate(
                    &q,
                    &report.fixed_point,
                    data.sample(0),
                    &a.array,
                    Some(cost),
                    a.design.as_deref(),
                )?);
            }
            if let Some(dir) = &a.model_out {
                write_quantized_model(&q, dir)?;
            }
            let mut w = out.writer()?;
            w.write_all(report.to_json()?.as_bytes())?;
            return Ok(!report.constraint_met);
        }
        Cmd::Sweep { config } => {
            let f = SweepFile::load(&config)?;
            let model = load_model(&f.model)?;
            let data = load_dataset(&f.data)?;
            let cost = f.cost.as_deref().map(read_cost).transpose()?;
            out.csv(&driver::sweep(&model, &data, &f.sweep, cost.as_ref())?)?;
        }
        Cmd::Analyze(cmd) => analyze(cmd, &out)?,
        Cmd::Simulate(a) => {
            let model = load_model(&a.model)?;
            let (input, calib) = match &a.data {
                Some(d) => {
                    let data = load_dataset(d)?;
                    if a.sample >= data.len() {
                        bail!("sample {} out of range ({} samples)", a.sample, data.len());
                    }
                    (data.sample(a.sample).to_vec(), data.head(100))
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(a.sample as u64);
                    let n: usize = model.input_dims.iter().product();
                    let x: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                    let mut dims = vec![1];
                    dims.extend_from_slice(&model.input_dims);
                    let t = elpq::Tensor::from_f32(dims, x.clone())?;
                    (x, Dataset::new(t, vec![0])?)
                }
            };
            let fp = FixedPointConfig::calibrate(&model, &calib, a.act_bits)?;
            let rows = simulate(&model, &fp, &input, &a.array, a.cost.as_deref(), a.design.as_deref())?;
            out.json(&rows)?;
            if rows.iter().any(|r| !r.matches_engine) {
                bail!("simulator and engine disagree");
            }
        }
        Cmd::Infer(a) => {
            let model = load_model(&a.model)?;
            let data = load_dataset(&a.data)?;
            if a.sample >= data.len() {
                bail!("sample {} out of range ({} samples)", a.sample, data.len());
            }
            let fp = calibrated(&model, &data, a.act_bits, a.calib)?;
            let logits = PreparedModel::new(&model, &fp)?.infer(data.sample(a.sample))?;
            out.json(&InferReport {
                sample: a.sample,
                label: data.label(a.sample),
                predicted: engine::argmax(&logits),
                logits,
            })?;
        }
    }
    Ok(false)
}

fn analyze(cmd: AnalyzeCmd, out: &Output) -> Result<()> {
    match cmd {
        AnalyzeCmd::Dist { model } => {
            let model = load_model(&model)?;
            let mut rows = Vec::new();
            for l in &model.layers {
                if let Some(w) = &l.weights {
                    rows.push(DistRow::new(l.name(), "weights", &w.values())?);
                }
                if let Some(b) = l.bias_values() {
                    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
                    rows.push(DistRow::new(l.name(), "bias", &b)?);
                }
            }
            out.csv(&rows)
        }
        AnalyzeCmd::IntraCorr {
            model,
            data,
            layer,
            images,
            max_shift,
        } => {
            let model = load_model(&model)?;
            let data = load_dataset(&data)?;
            let k = layer_index(&model, &layer)?;
            let (dims, maps) = analysis::feature_maps(&model, &data, k, images)?;
            if dims.len() != 3 {
                bail!("layer `{layer}` input is not a [c, h, w] feature map");
            }
            let plane = dims[1] * dims[2];
            let planes: Vec<&[f64]> = maps.iter().flat_map(|m| m.chunks(plane)).collect();
            out.csv(&analysis::intra_corr_map(&planes, [dims[1], dims[2]], max_shift))
        }
        AnalyzeCmd::InterCorr {
            model,
            data,
            layer,
            sample,
        } => {
            let model = load_model(&model)?;
            let data = load_dataset(&data)?;
            if sample >= data.len() {
                bail!("sample {sample} out of range ({} samples)", data.len());
            }
            let k = layer_index(&model, &layer)?;
            let dims = model.shapes()?[k].clone();
            if dims.len() != 3 {
                bail!("layer `{layer}` input is not a [c, h, w] feature map");
            }
            let x = FloatNet::new(&model)?.trace(data.sample(sample))?.swap_remove(k);
            let m = analysis::inter_corr(&x, [dims[0], dims[1], dims[2]])?;
            let rows: Vec<CorrRow> = (0..m.channels)
                .flat_map(|a| (0..m.channels).map(move |b| (a, b)))
                .map(|(a, b)| CorrRow { a, b, r: m.get(a, b) })
                .collect();
            out.csv(&rows)
        }
        AnalyzeCmd::BiasNoise {
            model,
            data,
            layer,
            mode,
            levels,
            relative,
            filters,
            seeds,
        } => {
            let model = load_model(&model)?;
            let data = load_dataset(&data)?;
            let k = layer_index(&model, &layer)?;
            let bias = model.layers[k]
                .bias_values()
                .with_context(|| format!("layer `{layer}` has no bias"))?;
            let unit = if relative {
                bias.iter().fold(0.0f64, |m, &b| m.max((b as f64).abs()))
            } else {
                1.0
            };
            let levels: Vec<f64> = levels.iter().map(|l| l * unit).collect();
            let n = filters.unwrap_or(bias.len());
            out.csv(&analysis::bias_noise_sweep(&model, &data, k, n, mode.into(), &levels, &seeds)?)
        }
        AnalyzeCmd::Variance { sets, samples, seed } => {
            let params = analysis::random_variance_params(sets, seed);
            out.csv(&analysis::variance_table(&params, samples, seed)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
