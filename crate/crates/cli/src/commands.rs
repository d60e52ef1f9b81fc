use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use diml_core::losses::{margin_loss, ms_loss, proxy_nca_loss, LossConfig, MarginParams, MsParams, ProxyBank};
use diml_core::matching::{explain_match_with, MarginalMode};
use diml_core::metrics::evaluate;
use diml_core::ot::{
    exact_ot_oracle, sinkhorn, transport_cost, CostMatrix, MarginalPair, SinkhornConfig, TransportPlan,
};
use diml_core::{batch_rerank, pool_grid, read_feature_bank, Gallery, GalleryItem, RankedList, RetrievalConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{EvalArgs, ExplainArgs, LossEvalArgs, LossKind, RerankArgs, SolveArgs, SolverArgs};
use crate::output::{emit, RunManifest};
use crate::Failure;

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load(path: &Path) -> Result<Gallery, Failure> {
    read_feature_bank(path).map_err(|e| Failure::Data(anyhow!(e).context(format!("reading bank {}", path.display()))))
}

fn check_solver(s: &SolverArgs) -> CmdResult {
    s.config().validate().map_err(|e| usage(e.to_string()))
}

/// Caps the requested grid at the smallest bank grid, so that banks exported
/// at a coarser resolution still run with default flags.
fn effective_grid(requested: usize, banks: &[&Gallery]) -> Result<usize, Failure> {
    if requested == 0 {
        return Err(usage("--grid must be at least 1"));
    }
    let cap = banks
        .iter()
        .map(|g| g.shape().0.min(g.shape().1))
        .min()
        .unwrap_or(requested);
    if requested > cap {
        eprintln!("warning: --grid {requested} exceeds the bank grid; using {cap}");
        return Ok(cap);
    }
    Ok(requested)
}

fn pooled(g: &Gallery, grid: usize) -> Result<Gallery, Failure> {
    let items = g
        .items()
        .iter()
        .map(|it| Ok(GalleryItem::new(it.id.clone(), it.label, pool_grid(&it.fmap, grid)?)))
        .collect::<Result<Vec<_>, diml_core::Error>>()?;
    Ok(Gallery::new(items)?)
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Data(e.into()))
}

#[derive(Serialize)]
struct RerankEcho<'a> {
    bank: String,
    queries: Option<String>,
    leave_one_out: bool,
    retrieval: &'a RetrievalConfig,
    threads: usize,
}

pub fn rerank(args: &RerankArgs) -> CmdResult {
    check_solver(&args.solver)?;
    let pool = thread_pool(args.threads)?;

    let started = Instant::now();
    let gallery = load(&args.banks.bank)?;
    let queries = args.banks.queries.as_deref().map(load).transpose()?;
    let mut banks = vec![&gallery];
    banks.extend(queries.as_ref());
    let config = RetrievalConfig {
        top_k: args.k,
        grid: effective_grid(args.grid, &banks)?,
        sinkhorn: args.solver.config(),
        combine: args.combine.into(),
        marginals: args.marginals.into(),
    };
    let echo = RerankEcho {
        bank: args.banks.bank.display().to_string(),
        queries: args.banks.queries.as_ref().map(|p| p.display().to_string()),
        leave_one_out: queries.is_none(),
        retrieval: &config,
        threads: pool.current_num_threads(),
    };
    let mut manifest = RunManifest::new("rerank", echo);
    manifest.stage("load", started);

    let started = Instant::now();
    let lists = pool.install(|| match &queries {
        Some(q) => batch_rerank(q, &gallery, &config),
        None => batch_rerank(&gallery, &gallery, &config),
    })?;
    manifest.stage("rerank", started);

    let mut bytes = Vec::new();
    for list in &lists {
        serde_json::to_writer(&mut bytes, list)?;
        bytes.push(b'\n');
    }
    emit(args.out.as_deref(), &bytes)?;
    if let Some(out) = &args.out {
        manifest.input("bank", &args.banks.bank)?;
        if let Some(q) = &args.banks.queries {
            manifest.input("queries", q)?;
        }
        manifest.finish(out, &bytes)?;
    }
    Ok(())
}

fn read_rankings(path: &Path) -> Result<Vec<RankedList>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading rankings {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: malformed ranking", path.display(), n + 1))
                .map_err(Failure::Data)
        })
        .collect()
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let rankings = read_rankings(&args.rankings)?;
    let gallery = load(&args.banks.bank)?;
    let gallery_labels = gallery.labels();
    let query_labels: HashMap<String, u32> = match &args.banks.queries {
        Some(p) => load(p)?.labels(),
        None => gallery_labels.clone(),
    };
    let answerable = rankings
        .iter()
        .filter(|l| {
            let q = query_labels.get(&l.query_id);
            q.is_some() && l.entries.iter().any(|e| gallery_labels.get(&e.gallery_id) == q)
        })
        .count();
    if answerable == 0 {
        eprintln!(
            "warning: no query has a same-class candidate; all {} queries are excluded",
            rankings.len()
        );
    }
    let report = evaluate(&rankings, &query_labels, &gallery_labels)?;
    let excluded = rankings.len() - report.query_count;
    if excluded > 0 {
        eprintln!("warning: {excluded} queries without a same-class candidate were excluded");
    }
    let table = format!(
        "{:<8} {:>8}\n{:<8} {:>8.2}\n{:<8} {:>8.2}\n{:<8} {:>8.2}\n{:<8} {:>8}\n",
        "metric",
        "%",
        "P@1",
        100.0 * report.p_at_1,
        "RP",
        100.0 * report.r_precision,
        "MAP@R",
        100.0 * report.map_at_r,
        "queries",
        report.query_count
    );
    let mut out = serde_json::to_vec(&report)?;
    out.push(b'\n');
    out.extend_from_slice(table.as_bytes());
    emit(None, &out)?;
    Ok(())
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn explain(args: &ExplainArgs) -> CmdResult {
    check_solver(&args.solver)?;
    if args.top_m == 0 {
        return Err(usage("--top-m must be at least 1"));
    }
    let gallery = load(&args.banks.bank)?;
    let queries = args.banks.queries.as_deref().map(load).transpose()?;
    let qbank = queries.as_ref().unwrap_or(&gallery);
    let find = |g: &Gallery, id: &str, role: &str| {
        g.get(id)
            .map(|it| it.fmap.clone())
            .ok_or_else(|| Failure::Data(anyhow!("unknown {role} id {id:?}")))
    };
    let a = find(qbank, &args.query, "query")?;
    let b = find(&gallery, &args.target, "target")?;
    let grid = effective_grid(args.grid, &[&gallery, qbank])?;
    let (a, b) = (pool_grid(&a, grid)?, pool_grid(&b, grid)?);
    let mode: MarginalMode = args.marginals.into();
    let e = explain_match_with(&a, &b, mode, &args.solver.config(), args.top_m)?;

    let top_pairs: Vec<_> = e
        .top_pairs
        .iter()
        .map(|p| json!({"i": p.i, "j": p.j, "flow": p.flow, "sim": p.sim, "contribution": p.contribution()}))
        .collect();
    let doc = json!({
        "id_a": args.query,
        "id_b": args.target,
        "grid": grid,
        "lambda": args.solver.lambda,
        "marginals": mode,
        "baseline_score": e.baseline_score,
        "structural_score": e.structural_score,
        "marginal_s": e.marginal_s,
        "marginal_t": e.marginal_t,
        "rescaled_plan": rows(&e.rescaled_plan),
        "top_pairs": top_pairs,
        "converged": e.plan.converged,
        "iterations_used": e.plan.iterations_used,
        "marginal_error": e.plan.marginal_error,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    emit(args.out.as_deref(), &bytes)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveInput {
    cost: Vec<Vec<f64>>,
    mu_s: Option<Vec<f64>>,
    mu_t: Option<Vec<f64>>,
    lambda: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    log_domain: Option<bool>,
}

fn plan_json(cost: &CostMatrix, p: &TransportPlan) -> Result<serde_json::Value, Failure> {
    Ok(json!({
        "plan": rows(&p.plan),
        "transport_cost": transport_cost(cost, p)?,
        "converged": p.converged,
        "iterations_used": p.iterations_used,
        "marginal_error": p.marginal_error,
        "diagnostic": p.diagnostic,
    }))
}

pub fn solve(args: &SolveArgs) -> CmdResult {
    let text = if args.input.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?
    };
    let input: SolveInput = serde_json::from_str(&text).context("malformed solver input")?;
    let cost = CostMatrix::from_rows(&input.cost)?;
    let (m, n) = (cost.n_source(), cost.n_target());
    let uniform = MarginalPair::uniform(m, n)?;
    let marginals = MarginalPair::new(
        input.mu_s.unwrap_or_else(|| uniform.mu_s().to_vec()),
        input.mu_t.unwrap_or_else(|| uniform.mu_t().to_vec()),
    )?;
    let defaults = SinkhornConfig::default();
    let config = SinkhornConfig {
        lambda: input.lambda.unwrap_or(defaults.lambda),
        max_iters: input.max_iters.unwrap_or(defaults.max_iters),
        tol: input.tol.unwrap_or(defaults.tol),
        log_domain: input.log_domain.unwrap_or(defaults.log_domain),
    };
    let plan = sinkhorn(&cost, &marginals, &config)?;
    let mut doc = plan_json(&cost, &plan)?;
    doc["config"] = serde_json::to_value(config)?;
    if args.exact {
        let exact = exact_ot_oracle(&cost, &marginals)?;
        doc["exact"] = plan_json(&cost, &exact)?;
    }
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    emit(args.out.as_deref(), &bytes)?;
    Ok(())
}

pub fn loss_eval(args: &LossEvalArgs) -> CmdResult {
    check_solver(&args.solver)?;
    let raw = load(&args.bank)?;
    let raw_proxies = args.proxies.as_deref().map(load).transpose()?;
    let mut banks = vec![&raw];
    banks.extend(raw_proxies.as_ref());
    let grid = effective_grid(args.grid, &banks)?;
    let batch = pooled(&raw, grid)?;
    let config = LossConfig {
        sinkhorn: args.solver.config(),
        marginals: args.marginals.into(),
    };

    let (value, terms) = match args.loss {
        LossKind::Margin => {
            let params = MarginParams {
                sigma: args.sigma,
                beta: args.beta,
            };
            if !(params.sigma >= 0.0 && params.sigma.is_finite() && params.beta.is_finite()) {
                return Err(usage("--sigma must be finite and nonnegative, --beta finite"));
            }
            let items = batch.items();
            if items.len() < 2 {
                return Err(Failure::Data(anyhow!("margin loss needs at least two items")));
            }
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for k in 0..items.len() {
                for l in k + 1..items.len() {
                    let same = items[k].label == items[l].label;
                    sum += margin_loss(&items[k].fmap, &items[l].fmap, same, &params, &config)?;
                    pairs += 1;
                }
            }
            (sum / pairs as f64, pairs)
        }
        LossKind::Ms => {
            let params = MsParams {
                alpha: args.alpha,
                beta: args.ms_beta,
                lambda: args.ms_lambda,
                epsilon: args.epsilon,
            };
            if !(params.alpha > 0.0 && params.beta > 0.0) {
                return Err(usage("--alpha and --ms-beta must be positive"));
            }
            (ms_loss(&batch, &params, &config)?, batch.len())
        }
        LossKind::ProxyNca => {
            let proxies = match &raw_proxies {
                Some(p) => ProxyBank::new(
                    pooled(p, grid)?
                        .items()
                        .iter()
                        .map(|it| (it.label, it.fmap.clone()))
                        .collect(),
                )?,
                None => ProxyBank::from_gallery(&batch)?,
            };
            (proxy_nca_loss(&batch, &proxies, &config)?, batch.len())
        }
    };
    let loss = match args.loss {
        LossKind::Margin => "margin",
        LossKind::Ms => "ms",
        LossKind::ProxyNca => "proxy_nca",
    };
    let doc = json!({"loss": loss, "value": value, "terms": terms, "grid": grid, "lambda": args.solver.lambda});
    let mut bytes = serde_json::to_vec(&doc)?;
    bytes.push(b'\n');
    emit(None, &bytes)?;
    Ok(())
}
