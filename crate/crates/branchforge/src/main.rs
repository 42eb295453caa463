use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use branchforge::commands;
use branchforge::config::{parse_config, FlagValues, Settings};
use branchforge::CliError;

#[derive(Parser)]
#[command(name = "branchforge", version, about = "Branch-targeted test generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate MiniLang programs into the data directory
    GenCorpus,
    /// Serialize the code property graph of every program
    BuildCpg,
    /// Synthesize ground-truth tests and write the dataset
    Curate,
    /// Train the graph encoder and language model jointly
    Train,
    /// Train the text-only baseline (no graph encoder)
    TrainFt,
    /// Generate one test per target branch with a checkpoint
    Infer,
    /// Generate, execute and score tests with a checkpoint
    Eval,
    /// Train and score every encoder ablation cell over several seeds
    Ablate,
    /// Run gradient, round-trip, metric-oracle and harness checks
    Selfcheck,
}

#[derive(Args)]
struct Flags {
    /// key=value file; explicit flags win over its entries
    #[arg(long, global = true)]
    config: Option<String>,
    /// RNG seed [default: 7 for gen-corpus/curate, 0 for training and decoding]
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Data directory [default: $BRANCHFORGE_DATA]
    #[arg(long, global = true)]
    data_dir: Option<String>,
    /// Output location [default: a subdirectory of the data directory]
    #[arg(long, global = true)]
    out: Option<String>,
    /// Checkpoint file for infer/eval
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Number of programs to generate [default: 200]
    #[arg(long, global = true)]
    programs: Option<String>,
    /// Branch cap per program [default: 1000]
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Graph encoder: attention, mean or none [default: attention]
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Branch embedding: node or pool [default: node]
    #[arg(long, global = true)]
    branch_agg: Option<String>,
    /// greedy or temp:<t> [default: greedy]
    #[arg(long, global = true)]
    decode: Option<String>,
    /// Training steps [default: 2000]
    #[arg(long, global = true)]
    steps: Option<String>,
    /// Batch size [default: 8]
    #[arg(long, global = true)]
    batch: Option<String>,
    /// Learning rate [default: 0.0003]
    #[arg(long, global = true)]
    lr: Option<String>,
    /// Decoupled weight decay [default: 0.0001]
    #[arg(long, global = true)]
    weight_decay: Option<String>,
    /// Loop iterations unrolled during branch enumeration [default: 2]
    #[arg(long, global = true)]
    loop_bound: Option<String>,
    /// Split evaluated by infer/eval: train, val or test [default: test]
    #[arg(long, global = true)]
    split: Option<String>,
    /// Comma-separated seeds for ablate [default: 0,1,2]
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Also write tab-separated metric series
    #[arg(long, global = true)]
    emit_plot_data: bool,
    /// Write a trace dump per generated test
    #[arg(long, global = true)]
    dump_traces: bool,
}

impl Flags {
    fn values(&self) -> FlagValues {
        let mut f = FlagValues::default();
        let pairs: [(&'static str, &Option<String>); 17] = [
            ("seed", &self.seed),
            ("data-dir", &self.data_dir),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("programs", &self.programs),
            ("delta", &self.delta),
            ("variant", &self.variant),
            ("branch-agg", &self.branch_agg),
            ("decode", &self.decode),
            ("steps", &self.steps),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("weight-decay", &self.weight_decay),
            ("loop-bound", &self.loop_bound),
            ("split", &self.split),
            ("seeds", &self.seeds),
            ("config", &self.config),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                f.values.insert(k, v.clone());
            }
        }
        f.switches.insert("emit-plot-data", self.emit_plot_data);
        f.switches.insert("dump-traces", self.dump_traces);
        f
    }
}

fn dispatch(cli: &Cli) -> Result<Vec<String>, CliError> {
    let file = match &cli.flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_config(&text)?
        }
        None => Default::default(),
    };
    let s = Settings::resolve(&cli.flags.values(), &file, std::env::var("BRANCHFORGE_DATA").ok())?;
    match cli.command {
        Command::GenCorpus => commands::gen_corpus(&s),
        Command::BuildCpg => commands::build_cpgs(&s),
        Command::Curate => commands::curate(&s),
        Command::Train => commands::train(&s, false),
        Command::TrainFt => commands::train(&s, true),
        Command::Infer => commands::infer(&s),
        Command::Eval => commands::eval(&s),
        Command::Ablate => commands::ablate(&s),
        Command::Selfcheck => commands::selfcheck(&s),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
