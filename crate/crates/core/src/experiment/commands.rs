use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{prepare_outputs, scaling_exponent, ExperimentConfig, Outcome, Point, RunOptions, SweepParameter, STREAM_STRIDE};
use crate::diagnostics::{esjd, iact_of, lag1_correlation, log_log_slope};
use crate::error::{Error, Result};
use crate::families::{preconditioned_eigenvalues, FamilyKind};
use crate::rng::RandomStream;
use crate::sampler::{run_parallel_chains, run_unadjusted, ChainConfig, ChainResult, MomentsMode, Start, Welford};
use crate::theory::{predict_acceptance, predict_jump};

const PREDICTIONS_HEADER: [&str; 9] = [
    "param", "d", "mu", "sigma2", "accept_pred", "accept_limit", "mode", "esjd_pred", "esjd_bound",
];
const SCALING_HEADER: [&str; 12] = [
    "d", "h", "L", "accept_rate", "accept_se", "accept_pred", "accept_limit", "mode", "esjd", "esjd_se", "esjd_pred",
    "esjd_limit",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub param: f64,
    pub d: usize,
    pub mu: f64,
    pub sigma2: f64,
    pub accept_pred: f64,
    pub accept_limit: f64,
    pub mode: usize,
    pub esjd_pred: f64,
    pub esjd_bound: f64,
}

fn predictions_for(point: &Point) -> Result<Vec<PredictionRow>> {
    let model = point.spectral_model(None)?;
    let acc = predict_acceptance(&model, 0.0)?;
    let limit = point.limits()?.map_or(f64::NAN, |l| l.acceptance);
    point
        .modes
        .iter()
        .map(|&i| {
            let j = predict_jump(&model, i)?;
            Ok(PredictionRow {
                param: point.param,
                d: point.dim(),
                mu: acc.mu,
                sigma2: acc.sigma2,
                accept_pred: acc.acceptance,
                accept_limit: limit,
                mode: i,
                esjd_pred: j.esjd(),
                esjd_bound: j.u3_bound.abs(),
            })
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_csv(
        path,
        &PREDICTIONS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.param.to_string(),
                r.d.to_string(),
                r.mu.to_string(),
                r.sigma2.to_string(),
                r.accept_pred.to_string(),
                r.accept_limit.to_string(),
                r.mode.to_string(),
                r.esjd_pred.to_string(),
                r.esjd_bound.to_string(),
            ]
        }),
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `predictions.csv` for every sweep point.
pub fn cmd_predict(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let dir = opts.out_dir(Some(cfg))?;
    let points = cfg.points()?;
    let paths = prepare_outputs(&dir, &["predictions.csv"], opts.force)?;
    let rows: Vec<Vec<PredictionRow>> = points.par_iter().map(predictions_for).collect::<Result<_>>()?;
    write_predictions(&paths[0], &rows.concat())?;
    Ok(Outcome::Success)
}

/// Per-chain summary: one row of `chains.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRow {
    pub param: f64,
    pub chain: usize,
    pub accept_rate: f64,
    pub modes: Vec<usize>,
    pub esjd: Vec<f64>,
    pub lag1: Vec<f64>,
    pub iact: Vec<f64>,
}

fn run_point(point: &Point, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ChainResult>> {
    let proposal = point.build_proposal()?;
    let start = if opts.cold_start {
        Start::Explicit(DVector::zeros(point.dim()))
    } else {
        Start::ExactSample
    };
    let chain_cfg = ChainConfig::new(cfg.chain.n_steps)
        .burn_in(cfg.chain.burn_in)
        .start(start)
        .moments(MomentsMode::Off)
        .store_projections(true)
        .directions(point.directions()?);
    let seed = opts.seed.unwrap_or(cfg.chain.seed);
    let base = point.index as u64 * STREAM_STRIDE;
    if point.proposal.family == FamilyKind::Ula {
        (0..cfg.chain.n_chains as u64)
            .into_par_iter()
            .map(|k| run_unadjusted(&point.target, &proposal, &chain_cfg, &mut RandomStream::new(seed, base + k)))
            .collect()
    } else {
        run_parallel_chains(&point.target, &proposal, &chain_cfg, seed, base, cfg.chain.n_chains)
    }
}

fn chain_rows(point: &Point, results: &[ChainResult]) -> Vec<ChainRow> {
    results
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let labels: Vec<String> = point.modes.iter().map(|i| format!("mode{i}")).collect();
            ChainRow {
                param: point.param,
                chain: k,
                accept_rate: r.acceptance_rate(),
                modes: point.modes.clone(),
                esjd: labels.iter().map(|l| esjd(r, l).map_or(f64::NAN, |e| e.esjd)).collect(),
                lag1: labels.iter().map(|l| lag1_correlation(r, l).map_or(f64::NAN, |e| e.direct)).collect(),
                iact: labels.iter().map(|l| iact_of(r, l).map_or(f64::NAN, |e| e.iact)).collect(),
            }
        })
        .collect()
}

fn write_chains(path: &Path, modes: &[usize], rows: &[ChainRow]) -> Result<()> {
    let mut header = vec!["param".to_string(), "chain".into(), "accept_rate".into()];
    for i in modes {
        header.extend([format!("esjd_{i}"), format!("lag1_{i}"), format!("iact_{i}")]);
    }
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![r.param.to_string(), r.chain.to_string(), r.accept_rate.to_string()];
            for k in 0..r.modes.len() {
                rec.extend([r.esjd[k].to_string(), r.lag1[k].to_string(), r.iact[k].to_string()]);
            }
            rec
        }),
    )
}

/// One empirical-vs-predicted comparison in `verdict.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictCheck {
    pub param: f64,
    pub quantity: String,
    pub n_chains: usize,
    pub empirical: f64,
    /// Between-chain standard error; `NaN` for a single chain.
    pub se: f64,
    pub predicted: f64,
    pub lower: f64,
    pub upper: f64,
    /// `None` when no standard error is available.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub evaluated: usize,
    pub checks: Vec<VerdictCheck>,
}

type Table = (Vec<String>, Vec<csv::StringRecord>);
type Group = (f64, Vec<f64>, BTreeMap<usize, Vec<f64>>);

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("missing column {name}")))
}

fn field(rec: &csv::StringRecord, idx: usize) -> Result<f64> {
    rec.get(idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("unparsable CSV field {idx} in {rec:?}")))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let mut w = Welford::default();
    for &v in values {
        w.push(v);
    }
    let se = if values.len() >= 2 { w.standard_error() } else { f64::NAN };
    (w.mean, se)
}

fn window_check(param: f64, quantity: String, samples: &[f64], predicted: f64, slack: f64) -> VerdictCheck {
    let (empirical, se) = mean_and_se(samples);
    let half = slack + 3.0 * se;
    let pass = se.is_finite().then(|| (empirical - predicted).abs() <= half);
    VerdictCheck {
        param,
        quantity,
        n_chains: samples.len(),
        empirical,
        se,
        predicted,
        lower: predicted - half,
        upper: predicted + half,
        pass,
    }
}

/// Rebuilds the verdict from `chains.csv` and `predictions.csv` alone.
/// Acceptance must fall within 3 between-chain SE of the prediction; each
/// mode's ESJD within the jump bound plus 3 SE.
pub fn verdict_from_csv(chains: &Path, predictions: &Path) -> Result<Verdict> {
    let (ch, crows) = read_table(chains)?;
    let (ph, prows) = read_table(predictions)?;
    let (c_param, c_acc) = (column(&ch, "param")?, column(&ch, "accept_rate")?);
    let p_cols: Vec<usize> = PREDICTIONS_HEADER.iter().map(|n| column(&ph, n)).collect::<Result<_>>()?;

    // param bits → (param, accept samples, mode → esjd samples)
    let mut groups: BTreeMap<u64, Group> = BTreeMap::new();
    let mode_cols: Vec<(usize, usize)> = ch
        .iter()
        .enumerate()
        .filter_map(|(k, h)| h.strip_prefix("esjd_").and_then(|m| m.parse().ok()).map(|m| (m, k)))
        .collect();
    let mut order = Vec::new();
    for rec in &crows {
        let param = field(rec, c_param)?;
        let g = groups.entry(param.to_bits()).or_insert_with(|| {
            order.push(param.to_bits());
            (param, Vec::new(), BTreeMap::new())
        });
        g.1.push(field(rec, c_acc)?);
        for &(m, k) in &mode_cols {
            g.2.entry(m).or_default().push(field(rec, k)?);
        }
    }
    let mut checks = Vec::new();
    let mut seen_accept = std::collections::HashSet::new();
    for rec in &prows {
        let v: Vec<f64> = p_cols.iter().map(|&k| field(rec, k)).collect::<Result<_>>()?;
        let (param, accept_pred, mode, esjd_pred, esjd_bound) = (v[0], v[4], v[6] as usize, v[7], v[8]);
        let Some((_, acc, modes)) = groups.get(&param.to_bits()) else {
            continue;
        };
        if seen_accept.insert(param.to_bits()) {
            checks.push(window_check(param, "accept_rate".into(), acc, accept_pred, 0.0));
        }
        if let Some(samples) = modes.get(&mode) {
            checks.push(window_check(param, format!("esjd_{mode}"), samples, esjd_pred, esjd_bound));
        }
    }
    let evaluated = checks.iter().filter(|c| c.pass.is_some()).count();
    let pass = checks.iter().all(|c| c.pass != Some(false));
    Ok(Verdict { pass, evaluated, checks })
}

/// Runs every sweep point, writes `chains.csv`, `predictions.csv` and
/// `verdict.json`. Fails when any evaluated comparison fails.
pub fn cmd_sample(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let dir = opts.out_dir(Some(cfg))?;
    let points = cfg.points()?;
    let paths = prepare_outputs(&dir, &["chains.csv", "predictions.csv", "verdict.json"], opts.force)?;
    let ula = cfg.proposal.family == FamilyKind::Ula;
    let (rows, preds): (Vec<Vec<ChainRow>>, Vec<Vec<PredictionRow>>) = points
        .par_iter()
        .map(|p| {
            let results = run_point(p, cfg, opts)?;
            let preds = if ula { Vec::new() } else { predictions_for(p)? };
            Ok((chain_rows(p, &results), preds))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    write_chains(&paths[0], &cfg.chain.directions, &rows.concat())?;
    write_predictions(&paths[1], &preds.concat())?;
    let verdict = verdict_from_csv(&paths[0], &paths[1])?;
    write_json(&paths[2], &verdict)?;
    Ok(Outcome::from_pass(verdict.pass))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub d: usize,
    pub h: f64,
    pub steps: usize,
    pub accept_rate: f64,
    pub accept_se: f64,
    pub accept_pred: f64,
    pub accept_limit: f64,
    pub mode: usize,
    pub esjd: f64,
    pub esjd_se: f64,
    pub esjd_pred: f64,
    pub esjd_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSlope {
    pub mode: usize,
    /// Least-squares slope of `ln ESJD` against `ln d`.
    pub slope: f64,
    pub expected_slope: f64,
    /// `max_d |ESJD/limit − 1|`.
    pub max_limit_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub expected_slope: f64,
    /// `max_d − min_d` of the empirical acceptance.
    pub acceptance_spread: f64,
    pub slopes: Vec<ModeSlope>,
}

/// Fits `scaling.csv`; `expected_slope` is `−r` for Langevin families and
/// `0` for HMC.
pub fn scaling_summary_from_csv(path: &Path, expected_slope: f64) -> Result<ScalingSummary> {
    let (h, rows) = read_table(path)?;
    let (cd, ca, cm, ce, cl) = (
        column(&h, "d")?,
        column(&h, "accept_rate")?,
        column(&h, "mode")?,
        column(&h, "esjd")?,
        column(&h, "esjd_limit")?,
    );
    let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
    let mut per_mode: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for rec in &rows {
        let d = field(rec, cd)?;
        acc.insert(d as u64, field(rec, ca)?);
        per_mode
            .entry(field(rec, cm)? as usize)
            .or_default()
            .push((d, field(rec, ce)?, field(rec, cl)?));
    }
    let (lo, hi) = acc.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let slopes = per_mode
        .into_iter()
        .map(|(mode, pts)| {
            let ds: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let es: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let dev = pts.iter().fold(0.0f64, |m, p| m.max((p.1 / p.2 - 1.0).abs()));
            Ok(ModeSlope {
                mode,
                slope: log_log_slope(&ds, &es)?,
                expected_slope,
                max_limit_rel_dev: dev,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScalingSummary {
        expected_slope,
        acceptance_spread: hi - lo,
        slopes,
    })
}

/// Dimension sweep: acceptance and mode ESJD per `d`, written to
/// `scaling.csv`, with the log-log fit in `scaling.json`.
pub fn cmd_scaling(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let sweep = cfg
        .sweep
        .as_ref()
        .filter(|s| s.parameter == SweepParameter::Dim)
        .ok_or_else(|| Error::Config("scaling needs a sweep over \"d\"".into()))?;
    if sweep.values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep.values must be ascending for scaling".into()));
    }
    if cfg.proposal.family == FamilyKind::Ula {
        return Err(Error::Config("scaling needs an MH-adjusted family".into()));
    }
    let dir = opts.out_dir(Some(cfg))?;
    let points = cfg.points()?;
    let paths = prepare_outputs(&dir, &["scaling.csv", "scaling.json"], opts.force)?;
    let rows: Vec<Vec<ScalingRow>> = points
        .par_iter()
        .map(|p| {
            let results = run_point(p, cfg, opts)?;
            let chains = chain_rows(p, &results);
            let preds = predictions_for(p)?;
            let limits = p.limits()?.expect("adjusted family has limits");
            let (accept_rate, accept_se) = mean_and_se(&chains.iter().map(|c| c.accept_rate).collect::<Vec<_>>());
            let lambdas = preconditioned_eigenvalues(p.target.precision(), p.proposal.preconditioner.as_ref())?;
            p.modes
                .iter()
                .enumerate()
                .map(|(k, &mode)| {
                    let (esjd, esjd_se) = mean_and_se(&chains.iter().map(|c| c.esjd[k]).collect::<Vec<_>>());
                    Ok(ScalingRow {
                        d: p.dim(),
                        h: p.proposal.h,
                        steps: p.proposal.steps,
                        accept_rate,
                        accept_se,
                        accept_pred: preds[k].accept_pred,
                        accept_limit: limits.acceptance,
                        mode,
                        esjd,
                        esjd_se,
                        esjd_pred: preds[k].esjd_pred,
                        esjd_limit: limits.jump(p.dim(), lambdas[mode], p.integration_time()),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    write_csv(
        &paths[0],
        &SCALING_HEADER,
        rows.concat().iter().map(|r| {
            vec![
                r.d.to_string(),
                r.h.to_string(),
                r.steps.to_string(),
                r.accept_rate.to_string(),
                r.accept_se.to_string(),
                r.accept_pred.to_string(),
                r.accept_limit.to_string(),
                r.mode.to_string(),
                r.esjd.to_string(),
                r.esjd_se.to_string(),
                r.esjd_pred.to_string(),
                r.esjd_limit.to_string(),
            ]
        }),
    )?;
    let kappa = points[0].kappa;
    let expected = if cfg.proposal.family == FamilyKind::Hmc {
        0.0
    } else {
        -scaling_exponent(cfg.proposal.family, kappa)
    };
    let summary = scaling_summary_from_csv(&paths[0], expected)?;
    write_json(&paths[1], &summary)?;
    Ok(Outcome::Success)
}
