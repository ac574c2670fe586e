use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use jptdp::autodiff::Adam;
use jptdp::checkpoint;
use jptdp::conllu::{read_conllu, to_conllu_string, write_conllu};
use jptdp::eval::{evaluate, EvalOptions};
use jptdp::model::{ArcLoss, Hyperparams};
use jptdp::trainer::{predict_treebank, train, EpochReport, TrainConfig};

#[derive(Parser)]
#[command(
    name = "jptdp",
    version,
    about = "Joint POS tagger and graph-based dependency parser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CoNLL-U treebank and write the best-epoch checkpoint.
    Train(TrainArgs),
    /// Fill UPOS, HEAD and DEPREL of a CoNLL-U file.
    Predict(PredictArgs),
    /// Score a predicted CoNLL-U file against gold.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArcLossArg {
    PerPosition,
    Global,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    train: PathBuf,
    /// Development set; without it the training file is split 4:1.
    #[arg(long, value_name = "PATH")]
    dev: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, env = "JPTDP_SEED", default_value_t = 1)]
    seed: u64,
    /// Drop the character-based word vectors.
    #[arg(long)]
    no_chars: bool,
    /// Allow several tokens to attach to ROOT.
    #[arg(long)]
    multi_root: bool,
    /// Keep the file order instead of shuffling every epoch.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, default_value_t = 64)]
    char_dim: usize,
    #[arg(long, default_value_t = 64)]
    char_hidden: usize,
    #[arg(long, default_value_t = 128)]
    word_dim: usize,
    #[arg(long, default_value_t = 128)]
    lstm_dim: usize,
    #[arg(long, default_value_t = 2)]
    lstm_layers: usize,
    #[arg(long, default_value_t = 100)]
    mlp_hidden: usize,
    #[arg(long, default_value_t = 0.25)]
    word_dropout: f64,
    #[arg(long, default_value_t = 0.2)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value_t = ArcLossArg::PerPosition)]
    arc_loss: ArcLossArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    #[arg(long, value_name = "PATH")]
    pred: PathBuf,
    /// Ignore tokens whose gold UPOS is PUNCT.
    #[arg(long)]
    exclude_punct: bool,
    /// Compare relations up to the first ':' only.
    #[arg(long)]
    strip_deprel_subtypes: bool,
    /// Print a JSON object instead of key=value lines.
    #[arg(long)]
    json: bool,
}

impl TrainArgs {
    fn hyper(&self) -> Hyperparams {
        Hyperparams {
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            word_dim: self.word_dim,
            ctx_state_dim: self.lstm_dim,
            ctx_layers: self.lstm_layers,
            mlp_hidden: self.mlp_hidden,
            word_dropout_alpha: self.word_dropout,
            noise_sigma: self.noise_sigma,
            margin: self.margin,
            epochs: self.epochs,
            seed: self.seed,
            use_chars: !self.no_chars,
            multi_root: self.multi_root,
            arc_loss: match self.arc_loss {
                ArcLossArg::PerPosition => ArcLoss::PerPosition,
                ArcLossArg::Global => ArcLoss::Global,
            },
            adam: Adam {
                lr: self.learning_rate,
                ..Adam::default()
            },
        }
    }
}

fn epoch_line(r: &EpochReport, total: usize) -> String {
    format!(
        "epoch {}/{} loss={:.6} dev_upos={:.4} dev_uas={:.4} dev_las={:.4} dev_mixed={:.4}{}",
        r.epoch,
        total,
        r.mean_loss,
        r.dev.upos_acc,
        r.dev.uas,
        r.dev.las,
        r.dev.mixed,
        if r.is_best { " *" } else { "" }
    )
}

fn cmd_train(args: TrainArgs) -> jptdp::Result<()> {
    if let Err(e) = args.hyper().validate() {
        Cli::command().error(ErrorKind::ValueValidation, e).exit();
    }
    let config = TrainConfig {
        train_path: args.train.clone(),
        dev_path: args.dev.clone(),
        model_out_path: Some(args.model.clone()),
        hyper: args.hyper(),
        shuffle: !args.no_shuffle,
    };
    let epochs = config.hyper.epochs;
    let outcome = train(&config, |r| {
        println!("{}", epoch_line(r, epochs));
        eprintln!("epoch {} took {:.1}s", r.epoch, r.seconds);
    })?;
    println!(
        "best epoch {} dev_mixed={:.4}",
        outcome.checkpoint.epoch_of_best, outcome.checkpoint.best_dev_mixed
    );
    eprintln!("wrote {}", args.model.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> jptdp::Result<()> {
    let ckpt = checkpoint::deserialize(&args.model)?;
    let input = read_conllu(&args.input)?;
    let start = Instant::now();
    let output = predict_treebank(&ckpt.model, &input)?;
    let secs = start.elapsed().as_secs_f64();
    match &args.output {
        Some(path) => write_conllu(&output, path)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(to_conllu_string(&output).as_bytes())
                .map_err(|e| jptdp::Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })?;
        }
    }
    let words = input.token_count();
    eprintln!(
        "predicted {words} words in {secs:.2}s ({:.0} words/second)",
        words as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> jptdp::Result<()> {
    let gold = read_conllu(&args.gold)?;
    let pred = read_conllu(&args.pred)?;
    let opts = EvalOptions {
        include_punct: !args.exclude_punct,
        strip_subtypes: args.strip_deprel_subtypes,
    };
    let metrics = evaluate(&gold, &pred, opts)?;
    if args.json {
        println!("{}", metrics.to_json());
    } else {
        print!("{}", metrics.to_key_value());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
