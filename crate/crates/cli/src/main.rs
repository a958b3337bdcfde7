mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "eductive", version, about = "Compile, evaluate and operate eductive programs and instances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a source file to a `.geer.json` file.
    Compile {
        source: PathBuf,
        /// Defaults to the source path with a `.geer.json` extension.
        out: Option<PathBuf>,
    },
    /// Evaluate a demand such as `N @ {t:5}` against a compiled program.
    Eval(EvalArgs),
    /// Run a scenario against a simulated instance and write its forensic export.
    Sim {
        topology: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short, long, default_value = "forensic.log")]
        out: PathBuf,
        /// Also print the final store dump.
        #[arg(long)]
        dump: bool,
    },
    #[command(subcommand)]
    Node(NodeCommand),
    #[command(subcommand)]
    Tier(TierCommand),
    #[command(subcommand)]
    Instance(InstanceCommand),
    #[command(subcommand)]
    Store(StoreCommand),
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Render a compiled program or a forensic log as Graphviz DOT.
    Graph {
        input: PathBuf,
        /// Output path; stdout if omitted.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Compiled program (source text is accepted too).
    geer: PathBuf,
    demand: String,
    /// Evaluate in this process without tiers (the default).
    #[arg(long, conflicts_with = "instance")]
    local: bool,
    /// Submit to an instance: a gateway address, or none to boot a
    /// simulated one in this process.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    instance: Option<String>,
    /// Topology for the in-process instance.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tick budget for the in-process instance.
    #[arg(long, default_value_t = 60_000)]
    ticks: u64,
}

#[derive(Args, Debug, Clone)]
struct Remote {
    /// Gateway address of a running node.
    #[arg(long, default_value = "127.0.0.1:7070")]
    instance: String,
}

#[derive(Subcommand, Debug)]
enum NodeCommand {
    /// Boot an instance and serve operator requests until shut down.
    Start {
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Ask a running node to shut down.
    Stop(Remote),
}

#[derive(Subcommand, Debug)]
enum TierCommand {
    Allocate {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        node: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
    Deallocate {
        #[arg(long)]
        id: String,
        #[command(flatten)]
        remote: Remote,
    },
}

#[derive(Subcommand, Debug)]
enum InstanceCommand {
    Status(Remote),
    /// Print the instance's forensic log.
    Export(Remote),
}

#[derive(Subcommand, Debug)]
enum StoreCommand {
    Dump(Remote),
}

#[derive(Subcommand, Debug)]
enum PipelineCommand {
    /// Train on a corpus and classify another (or the same) one.
    Run {
        /// Training corpus: one subdirectory per subject id.
        corpus: PathBuf,
        /// Corpus to classify; defaults to the training corpus.
        #[arg(long)]
        classify: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run the stages in this process instead of on a simulated instance.
        #[arg(long)]
        local: bool,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic four-subject CSV corpus.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        per_subject: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile { source, out } => ops::compile(&source, out),
        Command::Eval(a) => ops::eval(a),
        Command::Sim { topology, scenario, seed, out, dump } => ops::sim(&topology, &scenario, seed, &out, dump),
        Command::Node(NodeCommand::Start { topology, seed, listen }) => ops::node_start(topology.as_deref(), seed, &listen),
        Command::Node(NodeCommand::Stop(r)) => ops::node_stop(&r.instance),
        Command::Tier(TierCommand::Allocate { kind, count, node, remote }) => {
            ops::tier_allocate(&remote.instance, &kind, count, node)
        }
        Command::Tier(TierCommand::Deallocate { id, remote }) => ops::tier_deallocate(&remote.instance, &id),
        Command::Instance(InstanceCommand::Status(r)) => ops::instance_status(&r.instance),
        Command::Instance(InstanceCommand::Export(r)) => ops::instance_export(&r.instance),
        Command::Store(StoreCommand::Dump(r)) => ops::store_dump(&r.instance),
        Command::Pipeline(PipelineCommand::Run { corpus, classify, config, local, topology, seed, out }) => {
            ops::pipeline(ops::PipelineRun { corpus, classify, config, local, topology, seed, out })
        }
        Command::Pipeline(PipelineCommand::Synth { dir, seed, per_subject, noise }) => {
            ops::synth(&dir, seed, per_subject, noise)
        }
        Command::Graph { input, dot } => ops::graph(&input, dot.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(e) = &f.error {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(f.code)
        }
    }
}
