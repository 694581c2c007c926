//! End-to-end runs over an [`Instance`]: certificate, solve, oracle cross-check.
//!
//! The command-line tool is a thin shell over these functions, so every file
//! it writes can be reproduced by calling them with the same options.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::conditions::{
    build_envelope, check_bracket, check_growth_condition, default_mu, default_z_max, estimate_e2,
    growth_constants, k_hat, lemma_slacks, sample_envelope, verify_e0, verify_e1, verify_e1prime,
    verify_e3, verify_e3prime, Bracket, Certificate, CheckRecord, E3Grid, GrowthVariant,
    Witness,
};
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::io::to_json_string;
use crate::kernel::LinearParams;
use crate::oracle::{collocate_dense, shoot_periodic, DenseConfig, ShootConfig};
use crate::par::Execution;
use crate::problems::{Instance, Route};
use crate::solver::{
    default_shift_inputs, pick_shift, solve, ShiftInputs, SolveConfig, SolveResult,
};

/// Agreement required between the solver and the oracle.
pub const ORACLE_TOL: f64 = 1e-6;
/// Residual required of a gallery solution.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub n: usize,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    pub delta_cap: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            n: 256,
            a: None,
            b: None,
            delta: None,
            delta_cap: None,
            samples: 200,
            seed: 7,
            exec: Execution::default(),
        }
    }
}

fn require_bracket(inst: &Instance, n: usize) -> Result<Bracket> {
    inst.bracket(n)?.ok_or_else(|| {
        Error::Domain(format!("instance '{}' has no lower/upper solution pair", inst.label))
    })
}

fn failed(name: &str, err: &Error) -> CheckRecord {
    CheckRecord::new(name, f64::NEG_INFINITY, 0.0, Witness::default()).with_note(err.to_string())
}

/// Runs every hypothesis check along the instance's route and collects the
/// records. A check that cannot be evaluated is recorded as failing with the
/// error as its note, so the certificate is always complete.
pub fn certify(inst: &Instance, opts: &CertifyOptions) -> Result<Certificate> {
    if opts.a.is_some() != opts.b.is_some() {
        return Err(Error::Domain("a and b must be given together".into()));
    }
    let br = require_bracket(inst, opts.n)?;
    let prob = &inst.prob;
    let mut cert = Certificate::new(&inst.label);
    let (lo, up) = check_bracket(prob, &br)?;
    cert.push(lo);
    cert.push(up);
    let delta = opts.delta.unwrap_or(inst.delta);
    let delta_cap = opts.delta_cap.unwrap_or(inst.delta_cap);
    cert.params.delta = Some(delta);
    cert.params.delta_cap = Some(delta_cap);

    match inst.route {
        Route::Envelope | Route::EnvelopeDifference => {
            let (a, b) = match (opts.a, opts.b, inst.shift) {
                (Some(a), Some(b), _) => (a, b),
                (_, _, Some(s)) => s,
                _ => {
                    let inputs = default_shift_inputs(prob, &br, opts.exec)?;
                    let ch = pick_shift(prob, &br, &inputs, opts.exec)?;
                    cert.params.big_n = Some(ch.big_n);
                    cert.params.ell = Some(inputs.ell);
                    cert.params.mu = Some(inputs.mu);
                    (ch.a, ch.b)
                }
            };
            let p = LinearParams::new(a, b)?;
            cert.params.a = Some(a);
            cert.params.b = Some(b);
            cert.params.k0 = Some(p.k0);
            cert.params.samples = Some(opts.samples);
            cert.params.seed = Some(opts.seed);

            let e0 = verify_e0(prob, &br, &p, delta)?;
            let tol = e0.atol;
            cert.push(e0);
            let (s1, s2) = lemma_slacks(&br, &p, delta)?;
            cert.push(CheckRecord::new("band", s1, tol, Witness::default()));
            cert.push(CheckRecord::new("slope", s2, tol, Witness::default()));

            let name = if inst.route == Route::Envelope { "E1" } else { "E1'" };
            let samples = build_envelope(&br, &p, delta_cap, delta)
                .and_then(|env| sample_envelope(&env, opts.samples, opts.seed, opts.exec));
            match samples {
                Ok(samples) => {
                    let rec = if inst.route == Route::Envelope {
                        verify_e1(prob, &br, &p, delta_cap, &samples, opts.exec)?
                    } else {
                        verify_e1prime(prob, &br, &p, delta_cap, &samples, opts.exec)?
                    };
                    cert.push(rec);
                }
                Err(e @ (Error::Infeasible(_) | Error::Domain(_))) => {
                    cert.push(failed(name, &e).sampled())
                }
                Err(e) => return Err(e),
            }
        }
        Route::Growth => certify_growth(inst, &br, opts, &mut cert)?,
    }
    Ok(cert)
}

fn certify_growth(
    inst: &Instance,
    br: &Bracket,
    opts: &CertifyOptions,
    cert: &mut Certificate,
) -> Result<()> {
    let prob = &inst.prob;
    let (f1, _) = prob
        .split
        .clone()
        .ok_or_else(|| Error::Domain(format!("instance '{}' has no f1 + f2 split", inst.label)))?;
    let c_fun: Vec<f64> = match &inst.growth_c {
        Some(c) => (0..=br.n()).map(|i| c.eval(br.alpha.t(i))).collect(),
        None => vec![0.0; br.n() + 1],
    };
    let c_max = c_fun.iter().fold(0.0f64, |m, v| m.max(*v));

    let mu = default_mu(prob, br);
    let e2 = estimate_e2(prob, br, mu, opts.exec)?;
    let (ell, mu) = (e2.ell, e2.mu);
    cert.push(e2.record);

    let slopes = br
        .alpha_prime()
        .iter()
        .chain(br.beta_prime())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let y_probe = 1e3 * (1.0 + slopes);
    let upper = check_growth_condition(prob, br, &c_fun, GrowthVariant::Upper, y_probe)?;
    let variant = if upper.pass {
        cert.push(upper);
        GrowthVariant::Upper
    } else {
        let lower = check_growth_condition(prob, br, &c_fun, GrowthVariant::Lower, y_probe)?;
        if lower.pass {
            cert.push(lower);
            GrowthVariant::Lower
        } else {
            cert.push(upper);
            cert.push(lower);
            return Ok(());
        }
    };

    let constants = |c: &[f64]| match variant {
        GrowthVariant::Upper => growth_constants(&f1, br, c),
        GrowthVariant::Lower => {
            let (rf1, _) = prob.reversed().split.expect("reversal keeps the split");
            let rc: Vec<f64> = c.iter().rev().copied().collect();
            growth_constants(&rf1, &br.reversed(), &rc)
        }
    };
    // A limit equal to c(t) gives no finite threshold for the bound with c
    // itself. The band condition c(β-α) < 1 is strict, so c is raised by half
    // of the remaining room and the checks below run with the raised value.
    let (consts, c_fun, note) = match constants(&c_fun) {
        Ok(g) => (g, c_fun, None),
        Err(Error::Infeasible(msg)) => {
            let gaps = (0..=br.n()).map(|i| br.beta.values()[i] - br.alpha.values()[i]);
            let (room, width) = gaps.zip(&c_fun).fold((f64::INFINITY, 0.0f64), |(r, w), (g, c)| {
                (r.min(1.0 - c * g), w.max(g))
            });
            if !(room > 0.0 && width > 0.0) {
                cert.push(failed("E3", &Error::Infeasible(msg)));
                return Ok(());
            }
            let eps = 0.5 * room / width;
            let raised: Vec<f64> = c_fun.iter().map(|c| c + eps).collect();
            match constants(&raised) {
                Ok(g) => (g, raised, Some(format!("c raised by {eps:e} to obtain a growth threshold"))),
                Err(e @ Error::Infeasible(_)) => {
                    cert.push(failed("E3", &e));
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
        Err(e) => return Err(e),
    };
    let c_max = c_fun.iter().fold(c_max, |m, v| m.max(*v));
    let grid = E3Grid::default();
    let z = default_z_max(br, consts.big_l, c_max);
    let (l, k) = (consts.big_l, consts.big_k);
    let report = match variant {
        GrowthVariant::Upper => verify_e3(prob, br, &c_fun, l, k, z, grid, opts.exec)?,
        GrowthVariant::Lower => verify_e3prime(prob, br, &c_fun, l, k, z, grid, opts.exec)?,
    };
    let mut record = report.record;
    if let Some(n) = note {
        record = record.with_note(n);
    }
    cert.push(record);
    cert.push(report.band);

    let kh = k_hat(prob, br, consts.big_k, 33)?;
    cert.params.mu = Some(mu);
    cert.params.ell = Some(ell);
    cert.params.c = Some(report.c_attained);
    cert.params.big_l = Some(consts.big_l);
    cert.params.big_k = Some(consts.big_k);
    cert.params.k_hat = Some(kh);
    let inputs = ShiftInputs {
        ell,
        mu,
        c: report.c_attained,
        big_l: consts.big_l,
        k_hat: kh,
    };
    if report.c_attained < 1.0 {
        let ch = pick_shift(prob, br, &inputs, opts.exec)?;
        let (a, b) = match (opts.a, opts.b) {
            (Some(a), Some(b)) => (a, b),
            _ => (ch.a, ch.b),
        };
        cert.params.a = Some(a);
        cert.params.b = Some(b);
        cert.params.big_n = Some(ch.big_n);
        cert.params.k0 = Some(LinearParams::new(a, b)?.k0);
    }
    Ok(())
}

/// Solves an instance on its own bracket. The instance's preferred shift is
/// used unless the configuration names one.
pub fn solve_instance(inst: &Instance, cfg: &SolveConfig) -> Result<SolveResult> {
    let mut cfg = cfg.clone();
    if cfg.a.is_none() && cfg.b.is_none() {
        if let Some((a, b)) = inst.shift {
            cfg.a = Some(a);
            cfg.b = Some(b);
        }
    }
    let br = inst.bracket(cfg.n)?;
    let mut r = solve(&inst.prob, br.as_ref(), None, &cfg)?;
    if let Some(bound) = inst.slope_bound {
        let d = r.x.derivative_or_err()?;
        let m = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > bound {
            r.warnings.push(format!(
                "max |x'| = {m:e} exceeds the admissible slope bound {bound:e}"
            ));
        }
    }
    Ok(r)
}

/// Max node deviation between `x` and `y`, where `y` may be a refinement of `x`.
pub fn sup_deviation(x: &GridFunction, y: &GridFunction) -> Result<f64> {
    if !y.n().is_multiple_of(x.n()) {
        return Err(Error::Grid(format!(
            "cannot compare {} intervals against {}",
            x.n(),
            y.n()
        )));
    }
    let s = y.n() / x.n();
    Ok((0..=x.n()).fold(0.0f64, |m, i| m.max((x.values()[i] - y.values()[i * s]).abs())))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub method: String,
    pub deviation: f64,
    pub note: Option<String>,
}

/// Shooting from the instance's guess; dense collocation at `4n` when
/// shooting fails or disagrees.
pub fn oracle_check(inst: &Instance, sol: &SolveResult) -> Result<OracleCheck> {
    let n = sol.x.n();
    let shoot = shoot_periodic(&inst.prob, inst.guess, &ShootConfig { n, ..Default::default() });
    let note = match &shoot {
        Ok(s) => {
            let dev = sup_deviation(&sol.x, &s.x)?;
            if dev <= ORACLE_TOL {
                return Ok(OracleCheck {
                    method: "shooting".into(),
                    deviation: dev,
                    note: None,
                });
            }
            format!("shooting deviates by {dev:e}")
        }
        Err(e) => format!("shooting failed: {e}"),
    };
    let fine = GridFunction::try_sample(4 * n, |t| sol.x.interp(t))?;
    let dense = collocate_dense(&inst.prob, &fine, &DenseConfig::default())?;
    Ok(OracleCheck {
        method: "collocation".into(),
        deviation: sup_deviation(&sol.x, &dense)?,
        note: Some(note),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GalleryRow {
    pub instance: String,
    pub n: usize,
    pub method: String,
    pub residual: f64,
    pub oracle: String,
    pub oracle_deviation: f64,
    pub certificate: String,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct GalleryEntry {
    pub row: GalleryRow,
    pub certificate: Option<Certificate>,
    pub solution: Option<SolveResult>,
}

/// Certificate, solve and oracle cross-check for one instance. Failures of
/// any stage are reported in the row instead of aborting.
pub fn run_instance(inst: &Instance, cert_opts: &CertifyOptions, cfg: &SolveConfig) -> GalleryEntry {
    let mut notes = Vec::new();
    let cert = certify(inst, cert_opts)
        .map_err(|e| notes.push(format!("certify: {e}")))
        .ok();
    let sol = solve_instance(inst, cfg)
        .map_err(|e| notes.push(format!("solve: {e}")))
        .ok();
    let oracle = sol.as_ref().and_then(|s| {
        oracle_check(inst, s)
            .map_err(|e| notes.push(format!("oracle: {e}")))
            .ok()
    });
    if let Some(o) = oracle.as_ref().and_then(|o| o.note.clone()) {
        notes.push(o);
    }
    if let Some(c) = &cert {
        for r in c.failing() {
            notes.push(format!("{} margin {:e}", r.name, r.margin));
        }
    }
    let status = match &cert {
        Some(c) if c.pass => "pass",
        Some(_) => "fail",
        None => "error",
    };
    let residual = sol.as_ref().map_or(f64::NAN, |s| s.residual);
    let deviation = oracle.as_ref().map_or(f64::NAN, |o| o.deviation);
    let mut pass = status == "pass" && residual <= RESIDUAL_TOL && deviation <= ORACLE_TOL;
    if let (Some(s), Some(exact)) = (&sol, inst.exact) {
        let err = s.x.values().iter().fold(0.0f64, |m, v| m.max((v - exact).abs()));
        if err > ORACLE_TOL {
            pass = false;
            notes.push(format!("exact solution missed by {err:e}"));
        }
    }
    if let Some(s) = &sol {
        notes.extend(s.warnings.iter().cloned());
    }
    GalleryEntry {
        row: GalleryRow {
            instance: inst.label.clone(),
            n: cfg.n,
            method: sol.as_ref().map_or_else(String::new, |s| s.method.clone()),
            residual,
            oracle: oracle.as_ref().map_or_else(String::new, |o| o.method.clone()),
            oracle_deviation: deviation,
            certificate: status.into(),
            pass,
            note: notes.join("; "),
        },
        certificate: cert,
        solution: sol,
    }
}

pub fn run_gallery(
    instances: &[Instance],
    cert_opts: &CertifyOptions,
    cfg: &SolveConfig,
) -> Vec<GalleryEntry> {
    instances.iter().map(|i| run_instance(i, cert_opts, cfg)).collect()
}

/// Writes `summary.csv` plus a certificate JSON, a result JSON and a
/// solution CSV per instance.
pub fn write_gallery(dir: &Path, entries: &[GalleryEntry]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "instance",
        "n",
        "method",
        "residual",
        "oracle",
        "oracle_deviation",
        "certificate",
        "pass",
        "note",
    ])?;
    for e in entries {
        let r = &e.row;
        w.write_record([
            r.instance.clone(),
            r.n.to_string(),
            r.method.clone(),
            crate::funcspace::fmt17(r.residual),
            r.oracle.clone(),
            crate::funcspace::fmt17(r.oracle_deviation),
            r.certificate.clone(),
            r.pass.to_string(),
            r.note.clone(),
        ])?;
        if let Some(c) = &e.certificate {
            fs::write(dir.join(format!("{}.cert.json", r.instance)), to_json_string(c)?)?;
        }
        if let Some(s) = &e.solution {
            fs::write(dir.join(format!("{}.result.json", r.instance)), to_json_string(s)?)?;
            s.x.write_csv(fs::File::create(dir.join(format!("{}.solution.csv", r.instance)))?)?;
        }
    }
    w.flush()?;
    Ok(())
}
