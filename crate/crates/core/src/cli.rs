use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use listrank::harness::{
    bias_table, build_bias_groups, efficiency_report, efficiency_table, rerank, run_positional_bias,
    run_shuffle_robustness, shuffle_table, Algorithm, EfficiencyConfig, PositiveSelection, Report, ShuffleConfig,
    UnitProvider,
};
use listrank::io::{read_candidates_scored, read_qrels, read_run, write_run, ScoredCandidates};
use listrank::metrics::{evaluate, Metric};
use listrank::sliding::{predict_sliding_calls_with, SlidingConfig};
use listrank::stub::{consistent_responder, StubServer};
use listrank::tournament::{ReplacementPolicy, Strategy, TournamentConfig};
use listrank::unit::{CallLedger, LedgerSnapshot, RankingUnit, RemoteConfig, RemoteUnit, SyntheticOracle, SyntheticOracleConfig};
use listrank::{PassageId, Qrels, Query};

/// Bad flag combination; exits with status 2 like clap's own errors.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Parser, Debug)]
#[command(name = "listrank", version, about = "Listwise top-k reranking with tournament sort")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rerank candidate lists and write a run file.
    Rerank(RerankArgs),
    /// Score a run file against qrels.
    Evaluate(EvaluateArgs),
    /// Positional-bias experiment.
    Bias(BiasArgs),
    /// Initial-order shuffle robustness experiment.
    Shuffle(ShuffleArgs),
    /// Predicted vs. measured unit calls.
    Calls(CallsArgs),
    /// Serve a consistent hash-based unit over HTTP.
    StubServer(StubArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum AlgoName {
    Tournament,
    Sliding,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum StrategyName {
    Cached,
    Rebuild,
    Batch,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum OracleName {
    Synthetic,
    Remote,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricName {
    Ndcg,
    Mrr,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SelectionName {
    All,
    OnePerQuery,
}

#[derive(Args, Debug, Clone, Serialize)]
struct AlgoArgs {
    #[arg(long, value_enum, default_value = "tournament")]
    algo: AlgoName,
    /// Unit window size (sliding: window width).
    #[arg(long, visible_alias = "w", default_value_t = 5)]
    m: usize,
    /// Winners kept per tournament node.
    #[arg(long, default_value_t = 1)]
    r: usize,
    /// Sliding stride.
    #[arg(long, visible_alias = "s")]
    stride: Option<usize>,
    /// Sliding passes (default ceil(k / (w - s))).
    #[arg(long)]
    iterations: Option<usize>,
    /// Sliding: skip the settled prefix in the last pass.
    #[arg(long)]
    corrected: bool,
    #[arg(long, value_enum, default_value = "cached")]
    strategy: StrategyName,
    #[arg(long, default_value_t = 21)]
    replace_offset: usize,
    /// Clamp the replacement scan instead of wrapping around the list.
    #[arg(long)]
    no_wrap: bool,
}

impl AlgoArgs {
    fn build(&self, parallel: bool) -> anyhow::Result<Algorithm> {
        match self.algo {
            AlgoName::Tournament => {
                if self.stride.is_some() || self.iterations.is_some() || self.corrected {
                    return usage("--stride/--iterations/--corrected apply to --algo sliding only");
                }
                let r = self.r;
                let strategy = match self.strategy {
                    StrategyName::Cached => Strategy::CachedPath,
                    StrategyName::Rebuild => Strategy::FullRebuild,
                    StrategyName::Batch => Strategy::RootBatch,
                };
                let policy = ReplacementPolicy {
                    base_offset: self.replace_offset,
                    wrap: !self.no_wrap,
                };
                let cfg = TournamentConfig::new(self.m, r)
                    .and_then(|c| c.with_policy(policy))
                    .map_err(|e| Usage(e.to_string()))?
                    .with_strategy(strategy)
                    .with_parallel(parallel);
                Ok(Algorithm::Tournament(cfg))
            }
            AlgoName::Sliding => {
                let Some(stride) = self.stride else {
                    return usage("--algo sliding requires --stride");
                };
                let mut cfg = SlidingConfig::new(self.m, stride)
                    .map_err(|e| Usage(e.to_string()))?
                    .with_corrected_savings(self.corrected);
                if let Some(it) = self.iterations {
                    cfg = cfg.with_iterations(it).map_err(|e| Usage(e.to_string()))?;
                }
                Ok(Algorithm::Sliding(cfg))
            }
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct OracleArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    oracle: OracleName,
    /// Remote unit URL; falls back to $LISTRANK_ENDPOINT.
    #[arg(long, env = "LISTRANK_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Per-slot score bonus, comma separated (length m).
    #[arg(long, value_delimiter = ',')]
    bias_bonus: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

/// Synthetic base scores: qrels grades when judgments are given, otherwise
/// first-stage scores.
struct Provider {
    remote: Option<Arc<RemoteUnit>>,
    base: HashMap<String, HashMap<PassageId, f64>>,
    oracle: OracleArgs,
}

impl Provider {
    fn new(oracle: &OracleArgs, lists: &[ScoredCandidates], qrels: Option<&Qrels>) -> anyhow::Result<Self> {
        let remote = match oracle.oracle {
            OracleName::Remote => {
                let Some(endpoint) = oracle.endpoint.clone() else {
                    return usage("--oracle remote requires --endpoint or LISTRANK_ENDPOINT");
                };
                let mut cfg = RemoteConfig::new(endpoint);
                cfg.timeout = Duration::from_secs(oracle.timeout_secs);
                cfg.retries = oracle.retries;
                Some(Arc::new(RemoteUnit::new(cfg)?))
            }
            OracleName::Synthetic => None,
        };
        let base = lists
            .iter()
            .map(|s| {
                let qid = s.list.query().qid.clone();
                let scores = match qrels {
                    Some(q) => q.judged(&qid).into_iter().map(|(d, g)| (d.clone(), f64::from(g))).collect(),
                    None => s.first_stage.clone(),
                };
                (qid, scores)
            })
            .collect();
        Ok(Self {
            remote,
            base,
            oracle: oracle.clone(),
        })
    }
}

impl UnitProvider for Provider {
    fn unit_for(&self, query: &Query) -> listrank::Result<Arc<dyn RankingUnit>> {
        if let Some(remote) = &self.remote {
            return Ok(remote.clone());
        }
        let base = self.base.get(&query.qid).cloned().unwrap_or_default();
        let cfg = SyntheticOracleConfig::new(base)
            .with_noise(self.oracle.noise_sigma, self.oracle.seed)
            .with_position_bonus(self.oracle.bias_bonus.clone());
        Ok(Arc::new(SyntheticOracle::new(cfg)))
    }
}

#[derive(Args, Debug, Serialize)]
struct RerankArgs {
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Candidate file (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Judgments for the synthetic oracle.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "listrank")]
    tag: String,
    /// Worker threads (queries and tree levels run concurrently when > 1).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_enum, default_value = "ndcg")]
    metric: MetricName,
    #[arg(long, default_value_t = 10)]
    cutoff: usize,
}

#[derive(Args, Debug, Serialize)]
struct BiasArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, value_enum, default_value = "all")]
    selection: SelectionName,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args, Debug, Serialize)]
struct ShuffleArgs {
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    cutoff: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args, Debug, Serialize)]
struct CallsArgs {
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

/// Parses `argv` (including the program name), runs, and returns the exit status.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            e.print().ok();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn pool(threads: usize) -> anyhow::Result<rayon::ThreadPool> {
    if threads == 0 {
        return usage("--parallel must be >= 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn echo(command: &str, args: &impl Serialize) -> anyhow::Result<serde_json::Value> {
    let config = json!({ "command": command, "args": args });
    println!("config {}", serde_json::to_string(&config)?);
    Ok(config)
}

fn merge(total: &mut LedgerSnapshot, s: &LedgerSnapshot) {
    total.total += s.total;
    total.fallbacks += s.fallbacks;
    for (k, v) in &s.by_level {
        *total.by_level.entry(*k).or_default() += v;
    }
    for (k, v) in &s.by_pass {
        *total.by_pass.entry(*k).or_default() += v;
    }
}

fn print_ledger(snapshot: &LedgerSnapshot, per_query: Option<&BTreeMap<String, u64>>) -> anyhow::Result<()> {
    println!(
        "ledger {}",
        serde_json::to_string(&json!({ "calls": snapshot, "per_query": per_query }))?
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Rerank(a) => cmd_rerank(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bias(a) => cmd_bias(a),
        Command::Shuffle(a) => cmd_shuffle(a),
        Command::Calls(a) => cmd_calls(a),
        Command::StubServer(a) => {
            let server = StubServer::bind(&a.addr, consistent_responder())
                .with_context(|| format!("binding {}", a.addr))?;
            println!("listening on {}", server.endpoint());
            server.wait();
            Ok(())
        }
    }
}

fn cmd_rerank(a: RerankArgs) -> anyhow::Result<()> {
    echo("rerank", &a)?;
    let algo = a.algo.build(a.parallel > 1)?;
    if a.k == 0 {
        return usage("--k must be >= 1");
    }
    let lists = read_candidates_scored(&a.input)?;
    let qrels = a.qrels.as_ref().map(read_qrels).transpose()?;
    let provider = Provider::new(&a.oracle, &lists, qrels.as_ref())?;

    let results = pool(a.parallel)?.install(|| {
        lists
            .par_iter()
            .map(|s| {
                let ledger = CallLedger::new();
                let unit = provider.unit_for(s.list.query())?;
                let k = a.k.min(s.list.n());
                let ranking = rerank(&s.list, k, &algo, unit.as_ref(), &ledger)?;
                Ok((ranking, ledger.snapshot()))
            })
            .collect::<listrank::Result<Vec<_>>>()
    })?;

    let mut total = LedgerSnapshot::default();
    let mut per_query = BTreeMap::new();
    let mut rankings = Vec::with_capacity(results.len());
    for (ranking, snap) in results {
        merge(&mut total, &snap);
        per_query.insert(ranking.query.qid.clone(), snap.total);
        rankings.push(ranking);
    }
    write_run(&rankings, &a.out, &a.tag)?;
    print_ledger(&total, Some(&per_query))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    echo("evaluate", &a)?;
    if a.cutoff == 0 {
        return usage("--cutoff must be >= 1");
    }
    let rankings = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let metric = match a.metric {
        MetricName::Ndcg => Metric::Ndcg,
        MetricName::Mrr => Metric::Mrr,
    };
    let report = evaluate(&rankings, &qrels, metric, a.cutoff)?;
    for (qid, v) in &report.per_query {
        println!("{}\t{qid}\t{v:.5}", report.metric_name);
    }
    println!("{}\tall\t{:.5}", report.metric_name, report.mean);
    print_ledger(&LedgerSnapshot::default(), None)?;
    Ok(())
}

fn cmd_bias(a: BiasArgs) -> anyhow::Result<()> {
    let config = echo("bias", &a)?;
    let lists = read_candidates_scored(&a.input)?;
    let qrels = read_qrels(&a.qrels)?;
    let provider = Provider::new(&a.oracle, &lists, Some(&qrels))?;
    let selection = match a.selection {
        SelectionName::All => PositiveSelection::All,
        SelectionName::OnePerQuery => PositiveSelection::OnePerQuery,
    };
    if !a.oracle.bias_bonus.is_empty() && a.oracle.bias_bonus.len() != a.m {
        return usage(format!("--bias-bonus needs {} values", a.m));
    }
    let plain: Vec<_> = lists.into_iter().map(|s| s.list).collect();
    let set = build_bias_groups(&plain, &qrels, a.m, a.oracle.seed, selection).map_err(|e| Usage(e.to_string()))?;
    if set.groups.is_empty() {
        bail!("no usable bias groups ({} pairs, all discarded)", set.candidate_pairs);
    }
    let ledger = CallLedger::new();
    let report = pool(a.parallel)?.install(|| run_positional_bias(&set.groups, &provider, &ledger))?;
    print!("{}", bias_table(&report));
    println!(
        "pairs {} emitted {} discarded {} (positive not retrieved {}, too few negatives {})",
        set.candidate_pairs,
        set.groups.len(),
        set.discarded(),
        set.missing_positive,
        set.too_few_negatives
    );
    if let Some(path) = &a.json {
        let body = json!({
            "report": report,
            "candidate_pairs": set.candidate_pairs,
            "emitted": set.groups.len(),
            "missing_positive": set.missing_positive,
            "too_few_negatives": set.too_few_negatives,
        });
        std::fs::write(path, Report::new(config, body).to_json()?)?;
    }
    print_ledger(&ledger.snapshot(), None)?;
    Ok(())
}

fn cmd_shuffle(a: ShuffleArgs) -> anyhow::Result<()> {
    let config = echo("shuffle", &a)?;
    let algo = a.algo.build(false)?;
    if a.seeds.is_empty() {
        return usage("--seeds needs at least one value");
    }
    let lists = read_candidates_scored(&a.input)?;
    let qrels = read_qrels(&a.qrels)?;
    let provider = Provider::new(&a.oracle, &lists, Some(&qrels))?;
    let plain: Vec<_> = lists.into_iter().map(|s| s.list).collect();
    let mut cfg = ShuffleConfig::new(algo);
    cfg.seeds = a.seeds.clone();
    cfg.k = a.k;
    cfg.cutoff = a.cutoff;
    let ledger = CallLedger::new();
    let report = pool(a.parallel)?.install(|| run_shuffle_robustness(&plain, &qrels, &cfg, &provider, &ledger))?;
    print!("{}", shuffle_table(&report));
    if let Some(path) = &a.json {
        std::fs::write(path, Report::new(config, &report).to_json()?)?;
    }
    print_ledger(&ledger.snapshot(), None)?;
    Ok(())
}

fn cmd_calls(a: CallsArgs) -> anyhow::Result<()> {
    let config = echo("calls", &a)?;
    let algo = a.algo.build(false)?;
    if a.n == 0 || a.k == 0 || a.k > a.n {
        return usage("calls needs 1 <= k <= n");
    }
    let mut configs = vec![EfficiencyConfig { algorithm: algo, n: a.n, k: a.k }];
    if let Algorithm::Sliding(s) = algo {
        // show both accountings side by side
        let other = s.with_corrected_savings(!s.corrected_savings);
        configs.push(EfficiencyConfig {
            algorithm: Algorithm::Sliding(other),
            n: a.n,
            k: a.k,
        });
        configs.sort_by_key(|c| matches!(c.algorithm, Algorithm::Sliding(s) if s.corrected_savings));
        let passes = s.passes_for(a.k);
        println!(
            "sliding naive {} corrected {}",
            predict_sliding_calls_with(a.n, s.window, s.stride, passes, false),
            predict_sliding_calls_with(a.n, s.window, s.stride, passes, true)
        );
    }
    let rows = efficiency_report(&configs)?;
    print!("{}", efficiency_table(&rows));
    if let Some(path) = &a.json {
        std::fs::write(path, Report::new(config, &rows).to_json()?)?;
    }
    let mut total = LedgerSnapshot::default();
    for r in &rows {
        merge(&mut total, &r.ledger);
    }
    print_ledger(&total, None)?;
    if rows.iter().any(|r| !r.matches) {
        bail!("measured calls differ from prediction");
    }
    Ok(())
}
