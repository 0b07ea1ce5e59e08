mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{read_model, read_tensor, RunArgs};
use siglass::inference::inference;
use siglass::simulate::{simulate, StudySpec};
use siglass::synth::SynthSpec;
use siglass::{Error, Tensor};

#[derive(Parser)]
#[command(name = "siglass", version, about = "Selective p-values for thresholded saliency regions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one image and write the result as JSON.
    Infer(RunArgs),
    /// Monte-Carlo study on synthetic images shaped like the model input.
    Simulate(SimulateArgs),
    /// Write synthetic images, masks and labels to a directory.
    Datagen(DatagenArgs),
    /// Summarize a model document.
    ModelInfo { model: PathBuf },
    /// Plain forward pass.
    Forward(ForwardArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Signal added inside the square; 0 gives null images.
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    local_size: Option<usize>,
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// `C,H,W`.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 8, 8])]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    signal: f64,
    #[arg(long)]
    local_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    loc: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForwardArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tensor file per graph input, in order.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Encode output data as base64 doubles.
    #[arg(long)]
    b64: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIGLASS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(a) => cmd_infer(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Datagen(a) => cmd_datagen(&a),
        Command::ModelInfo { model } => cmd_model_info(&model),
        Command::Forward(a) => cmd_forward(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let degenerate = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_degenerate));
            ExitCode::from(if degenerate { 2 } else { 1 })
        }
    }
}

fn emit(out: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn cmd_infer(args: &RunArgs) -> Result<ExitCode> {
    let r = args.resolve(true)?;
    let res = inference(&r.graph, &r.hypothesis, &r.inputs, r.reference.as_ref(), &r.cov, &r.options)?;
    let mut doc = serde_json::to_value(&res)?;
    doc["score_map"] = serde_json::to_value(&res.score_map)?;
    emit(r.out.as_deref(), &doc)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let r = args.run.resolve(false)?;
    let trials = args.trials.or(r.trials).unwrap_or(100);
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let sig = r
        .graph
        .inputs()
        .get(r.hypothesis.i_idx)
        .ok_or_else(|| anyhow!("input index {} out of range", r.hypothesis.i_idx))?;
    if r.graph.inputs().len() != 1 {
        bail!("simulate needs a single-input model");
    }
    let shape: [usize; 3] = match sig.shape.as_slice() {
        [1, c, h, w] => [*c, *h, *w],
        s => bail!("simulate needs a 1 x C x H x W input, model declares {s:?}"),
    };
    let mut data =
        SynthSpec::new(trials, shape, args.signal.or(r.signal).unwrap_or(0.0), args.seed.or(r.seed).unwrap_or(0));
    data.local_size = args.local_size;
    let report = simulate(&r.graph, &r.hypothesis, &r.cov, &r.options, &StudySpec { data, trials })?;
    if !report.degenerate.is_empty() {
        log::warn!("{} of {trials} trials were degenerate and excluded", report.degenerate.len());
    }
    let mut doc = serde_json::to_value(&report)?;
    doc["requested_trials"] = json!(trials);
    emit(r.out.as_deref(), &doc)?;
    Ok(if report.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_datagen(args: &DatagenArgs) -> Result<ExitCode> {
    if args.shape.len() != 3 {
        bail!("--shape takes C,H,W, got {:?}", args.shape);
    }
    let spec = SynthSpec {
        n_samples: args.n,
        shape: [args.shape[0], args.shape[1], args.shape[2]],
        loc: args.loc,
        scale: args.scale,
        local_signal: args.signal,
        local_size: args.local_size,
        seed: args.seed,
    };
    spec.validate()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let write = |name: String, value: &Value| -> Result<()> {
        let p = args.out.join(name);
        std::fs::write(&p, serde_json::to_string(value)? + "\n")
            .with_context(|| format!("cannot write {}", p.display()))
    };
    write("spec.json".into(), &serde_json::to_value(&spec)?)?;
    for i in 0..spec.n_samples {
        let s = spec.sample(i as u64)?;
        write(format!("sample_{i:05}.json"), &serde_json::to_value(&s.image)?)?;
        write(format!("sample_{i:05}.mask.json"), &json!({ "label": s.label, "mask": s.mask }))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_model_info(path: &Path) -> Result<ExitCode> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read model {}", path.display()))?;
    let raw: Value =
        serde_json::from_slice(&bytes).with_context(|| format!("cannot parse model {}", path.display()))?;
    let nodes = raw["nodes"].as_array().cloned().unwrap_or_default();
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for n in &nodes {
        *hist.entry(n["op_type"].as_str().unwrap_or("?").to_string()).or_default() += 1;
    }
    println!("nodes: {}", nodes.len());
    println!("operators:");
    for (op, count) in &hist {
        println!("  {op}: {count}");
    }
    for key in ["inputs", "outputs"] {
        println!("{key}:");
        for sig in raw[key].as_array().into_iter().flatten() {
            println!("  {} {}", sig["name"].as_str().unwrap_or("?"), sig["shape"]);
        }
    }
    match siglass::ir::parse_model(&bytes) {
        Ok(g) => {
            println!("piecewise nodes: {}", g.piecewise_node_count());
            println!("verdict: supported");
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::UnsupportedOperator(bad)) => {
            println!("verdict: unsupported");
            for b in &bad {
                println!("  {b}");
            }
            Ok(ExitCode::from(1))
        }
        Err(e) => {
            println!("verdict: invalid");
            Err(anyhow::Error::new(e).context(format!("cannot load model {}", path.display())))
        }
    }
}

fn cmd_forward(args: &ForwardArgs) -> Result<ExitCode> {
    let graph = read_model(&args.model)?;
    let inputs = args.input.iter().map(|p| read_tensor(p)).collect::<Result<Vec<Tensor>>>()?;
    let outputs = graph.forward(&inputs)?;
    let docs: Vec<Value> = outputs
        .iter()
        .zip(graph.outputs())
        .map(|(t, sig)| {
            if args.b64 {
                json!({ "name": sig.name, "shape": t.shape(), "data_b64": t.to_b64() })
            } else {
                json!({ "name": sig.name, "shape": t.shape(), "data": t.data() })
            }
        })
        .collect();
    emit(args.out.as_deref(), &json!({ "outputs": docs }))?;
    Ok(ExitCode::SUCCESS)
}
