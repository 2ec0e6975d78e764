use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dagsm::baseline::{ChainState, TraditionalModel};
use dagsm::explorer::{explore_cached, ExploreOptions};
use dagsm::mdp::{ExplicitMdp, MdpAction};
use dagsm::sweep::{parse_config_file, run_sweep, write_csv, ModelKind, SweepConfig};
use dagsm::{AttackModel, Error, ModelParams, Result, StateKey};

/// Solve selfish-mining MDPs for DAG protocols and write one CSV row per
/// (model, alpha, gamma) point.
///
/// Without arguments this runs the Bitcoin validation sweep of both
/// models at height limit 7.
#[derive(Parser, Debug)]
#[command(name = "dagsm", version)]
struct Cli {
    /// Protocol name (bitcoin, ethereum).
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated models: generic, traditional.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated attacker hash-rate shares.
    #[arg(long)]
    alpha: Option<String>,
    /// Comma-separated communication advantages.
    #[arg(long)]
    gamma: Option<String>,
    /// Dag height limit.
    #[arg(long)]
    limit: Option<String>,
    /// Expected progress before probabilistic termination.
    #[arg(long)]
    horizon: Option<String>,
    /// Value-iteration stopping threshold.
    #[arg(long)]
    epsilon: Option<String>,
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for explored-MDP cache files.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Print the block table of the state with this hex key and exit.
    #[arg(long, value_name = "KEY")]
    dump_state: Option<String>,
    /// Print the transitions of the state with this hex key and exit.
    #[arg(long, value_name = "KEY")]
    dump_transitions: Option<String>,
    /// Write one policy CSV per sweep point into this directory.
    #[arg(long, value_name = "DIR")]
    dump_policy: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Leave the wall_time_ms column empty for reproducible output.
    #[arg(long)]
    no_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dagsm: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_resource() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => Default::default(),
    };
    let mut set = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            settings.insert(key.to_string(), v);
        }
    };
    set("protocol", cli.protocol);
    set("model", cli.model);
    set("alpha", cli.alpha);
    set("gamma", cli.gamma);
    set("limit", cli.limit);
    set("horizon", cli.horizon);
    set("epsilon", cli.epsilon);
    set("out", cli.out.map(|p| p.display().to_string()));
    set("cache_dir", cli.cache_dir.map(|p| p.display().to_string()));
    set(
        "policy_dir",
        cli.dump_policy.map(|p| p.display().to_string()),
    );
    set("threads", cli.threads.map(|t| t.to_string()));

    let mut config = SweepConfig::default();
    config.apply(&settings)?;
    config.validate()?;

    if let Some(t) = settings.get("threads") {
        let n: usize = t
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid thread count `{t}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    if let Some(hex) = &cli.dump_state {
        return dump(&config, hex, false);
    }
    if let Some(hex) = &cli.dump_transitions {
        return dump(&config, hex, true);
    }

    let rows = run_sweep(&config)?;
    let timing = !cli.no_timing;
    match settings.get("out") {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            write_csv(&rows, std::io::BufWriter::new(file), timing)
        }
        None => write_csv(&rows, std::io::stdout().lock(), timing),
    }
}

/// Explores the first configured point and prints one state.
fn dump(config: &SweepConfig, hex: &str, transitions: bool) -> Result<()> {
    let key = StateKey::from_hex(hex)?;
    let (alpha, gamma) = (config.alphas[0], config.gammas[0]);
    let options = ExploreOptions {
        state_budget: config.state_budget,
    };
    let mut out = std::io::stdout().lock();
    if config.models.contains(&ModelKind::Generic) {
        let protocol = dagsm::by_name(&config.protocol)?;
        let model = AttackModel::new(
            protocol.as_ref(),
            ModelParams::new(alpha, gamma, config.limit)?,
        )?;
        let ex = explore_cached(&model, &options, config.cache_dir.as_deref())?;
        let s = find(&ex.mdp, &key)?;
        if transitions {
            print_transitions(&mut out, &ex.mdp, s)?;
        } else {
            write!(out, "{}", key.to_dag()?.dump())?;
        }
    } else {
        let model = TraditionalModel::new(alpha, gamma, config.limit)?;
        let ex = explore_cached(&model, &options, config.cache_dir.as_deref())?;
        let s = find(&ex.mdp, &key)?;
        if transitions {
            print_transitions(&mut out, &ex.mdp, s)?;
        } else {
            writeln!(out, "{}", ChainState::from_key(&key)?)?;
        }
    }
    Ok(())
}

fn find<A: MdpAction>(mdp: &ExplicitMdp<A>, key: &StateKey) -> Result<usize> {
    mdp.index_of(key)
        .ok_or_else(|| Error::NotFound(format!("{key} is not in the explored state space")))
}

fn print_transitions<A: MdpAction>(
    out: &mut impl Write,
    mdp: &ExplicitMdp<A>,
    s: usize,
) -> Result<()> {
    writeln!(
        out,
        "action\tprobability\tsuccessor\treward_attacker\treward_defender\tprogress"
    )?;
    for (a, ts) in mdp.actions[s].iter().zip(&mdp.transitions[s]) {
        for t in ts {
            writeln!(
                out,
                "{a}\t{}\t{}\t{}\t{}\t{}",
                t.probability,
                mdp.states[t.successor],
                t.reward_attacker,
                t.reward_defender,
                t.progress
            )?;
        }
    }
    Ok(())
}
