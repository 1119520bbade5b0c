use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use zherald::analysis::{
    click_lag_histogram, compare_to_model, compute_rates, estimate_efficiencies, fmt17, gaussian_fit,
    gaussian_fit_with_shape, FitResult, Rate, RateSummary, ScanPoint, ShapeHint, RATES_CSV_HEADER,
};
use zherald::config::RunConfig;
use zherald::model::{model_curve, write_curve_csv, ProfileShape};
use zherald::sim::{run_simulation, scan_delays, symmetric_delays, SimOutput, RNG_ALGORITHM};
use zherald::tags::{
    process_stream, read_tags, read_tags_csv, write_tags, write_tags_csv, Channel, GateResult,
    PulseEventTable, TagStream,
};

use crate::manifest::{recorded_delays, Manifest};
use crate::{AnalyzeArgs, CliError, CompareArgs, ModelArgs, PipelineArgs, ScanArgs, SimulateArgs};

/// Buffered writer to a file, or stdout when no path is given.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn finish(mut w: impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

pub fn model(a: &ModelArgs) -> Result<(), CliError> {
    let mut cfg = a.config.load()?;
    let sim = &mut cfg.sim;
    if let (Some(e1), Some(e2)) = (a.eta1p, a.eta2p) {
        sim.source.kappa1 = 1.0;
        sim.source.kappa2 = 1.0;
        sim.det1.eta = e1;
        sim.det2.eta = e2;
    }
    if let Some(v) = a.numax {
        sim.profile.nu_max = v;
    }
    if let Some(v) = a.gamma {
        sim.source.gamma = v;
    }
    if let Some(v) = a.tau {
        sim.profile.tau = v;
    }
    let delays = match (&cfg.scan_delays_ps, &sim.profile.shape) {
        (Some(d), _) => d.clone(),
        (None, ProfileShape::Tabulated(t)) if !t.is_empty() => {
            let (lo, hi) = (t[0].0, t[t.len() - 1].0);
            let n = a.points as usize;
            (0..n)
                .map(|i| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                .collect()
        }
        (None, _) => symmetric_delays(a.span * sim.profile.tau, a.points as usize),
    };
    let rows = model_curve(&sim.source, sim.det1.eta, sim.det2.eta, &sim.profile, &delays)?;
    let mut out = sink(a.out.as_deref())?;
    write_curve_csv(&rows, &mut out)?;
    out.flush().map_err(|e| CliError::io(a.out.as_deref().unwrap_or(Path::new("-")), e))
}

fn tag_file_name(index: usize) -> String {
    format!("tags_{index:03}.zht1")
}

fn truth_json(out: &SimOutput) -> Value {
    let t = &out.truth;
    json!({
        "n_pulses": t.n_pulses,
        "pairs_emitted": t.pairs_emitted,
        "outcome_counts": t.outcome_counts,
        "gate_clicks": t.gate_clicks,
        "dark_clicks": t.dark_clicks,
        "afterpulse_clicks": t.afterpulse_clicks,
        "stray_clicks": t.stray_clicks,
        "blocked_by_dead": t.blocked_by_dead,
    })
}

/// Simulate every configured delay into `dir`; returns files with their delays.
fn simulate_into(cfg: &RunConfig, dir: &Path, csv: bool, manifest: &mut Manifest) -> Result<Vec<(PathBuf, f64)>, CliError> {
    cfg.sim.validate()?;
    mkdir(dir)?;
    let runs: Vec<(f64, SimOutput, u64)> = match &cfg.scan_delays_ps {
        Some(delays) => scan_delays(&cfg.sim, delays)?
            .into_iter()
            .enumerate()
            .map(|(i, (dt, out))| (dt, out, zherald::sim::derive_seed(cfg.sim.seed, i as u64)))
            .collect(),
        None => vec![(cfg.sim.delta_t_ps, run_simulation(&cfg.sim)?, cfg.sim.seed)],
    };
    let conf_path = dir.join("effective.conf");
    fs::write(&conf_path, cfg.to_kv_string()).map_err(io_at(&conf_path))?;
    manifest.output(&conf_path, json!({}))?;
    manifest.set("config", json!(cfg.to_kv_string()));
    manifest.set("seed", json!(cfg.sim.seed));
    manifest.set("rng", json!(RNG_ALGORITHM));

    let mut files = Vec::with_capacity(runs.len());
    for (i, (delta_t, out, seed)) in runs.iter().enumerate() {
        let path = dir.join(tag_file_name(i));
        let mut w = create(&path)?;
        write_tags(&out.stream, &mut w)?;
        finish(w, &path)?;
        let extra = json!({
            "index": i,
            "delta_t_ps": delta_t,
            "nu": out.nu,
            "seed": seed,
            "n_tags": out.stream.tags.len(),
            "truth": truth_json(out),
        });
        manifest.output(&path, extra)?;
        if csv {
            let csv_path = path.with_extension("csv");
            let mut w = create(&csv_path)?;
            write_tags_csv(&out.stream, &mut w)?;
            finish(w, &csv_path)?;
            manifest.output(&csv_path, json!({ "index": i, "delta_t_ps": delta_t }))?;
        }
        eprintln!(
            "simulated {} (delay {delta_t} ps, nu {:.6}, {} tags)",
            path.display(),
            out.nu,
            out.stream.tags.len()
        );
        files.push((path, *delta_t));
    }
    Ok(files)
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = a.config.load()?;
    let mut manifest = Manifest::new("simulate", &a.out);
    if let Some(c) = &a.config.config {
        manifest.input(c)?;
    }
    simulate_into(&cfg, &a.out, a.csv, &mut manifest)?;
    manifest.write()?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<TagStream, CliError> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    let ctx = Some(path.display().to_string());
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let parsed = if is_csv {
        read_tags_csv(BufReader::new(file))
    } else {
        read_tags(BufReader::new(file))
    };
    parsed.map_err(|e| CliError::core(e, ctx))
}

struct FileResult {
    summary: RateSummary,
    rep_period_ps: u32,
    gate: GateResult,
    lags: [Vec<u64>; 2],
    table: PulseEventTable,
}

fn analyze_file(path: &Path, delta_t: f64, p: &PipelineArgs) -> Result<FileResult, CliError> {
    let ctx = || Some(path.display().to_string());
    let stream = read_stream(path)?;
    let (table, gate) =
        process_stream(&stream, p.gate_ps, p.dead_pulses).map_err(|e| CliError::core(e, ctx()))?;
    let summary = compute_rates(&table, delta_t).map_err(|e| CliError::core(e, ctx()))?;
    let lags = Channel::DETECTORS.map(|c| click_lag_histogram(&table, c, p.lag_max));
    Ok(FileResult {
        summary,
        rep_period_ps: stream.header.rep_period_ps,
        gate,
        lags,
        table,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn points(results: &[FileResult], pick: impl Fn(&RateSummary) -> Rate) -> Vec<ScanPoint> {
    results
        .iter()
        .map(|r| {
            let v = pick(&r.summary);
            ScanPoint {
                delta_t: r.summary.delta_t,
                value: v.value,
                stderr: v.stderr,
            }
        })
        .collect()
}

fn fit_line(series: &str, fit: &zherald::Result<FitResult>) -> String {
    match fit {
        Ok(f) => f.json_line(series),
        Err(e) => {
            eprintln!("warning: {series} fit: {e}");
            json!({ "series": series, "error": e.to_string() }).to_string()
        }
    }
}

/// Fit lines for the coincidence dip, heralded and unheralded D2 rates,
/// followed by the efficiencies inverted from the two ratios.
fn fit_scan(results: &[FileResult], p: &PipelineArgs) -> Vec<String> {
    let coinc = gaussian_fit(&points(results, |s| s.coincidence), ShapeHint::Dip);
    let fit_other = |pts: Vec<ScanPoint>| match (&coinc, p.free_shape) {
        (Ok(shape), false) => gaussian_fit_with_shape(&pts, shape),
        _ => gaussian_fit(&pts, ShapeHint::Auto),
    };
    let heralded = fit_other(points(results, |s| s.heralded_rate));
    let unheralded = fit_other(points(results, |s| s.singles2));
    let mut lines = vec![
        fit_line("coincidence", &coinc),
        fit_line("heralded", &heralded),
        fit_line("unheralded", &unheralded),
    ];
    let eff = match (&heralded, &unheralded) {
        (Ok(h), Ok(u)) => estimate_efficiencies(h, u, p.numax),
        (Err(e), _) | (_, Err(e)) => Err(zherald::Error::Degenerate(format!("no fit: {e}"))),
    };
    lines.push(match eff {
        Ok((e1, e2)) => format!(
            "{{\"series\":\"efficiencies\",\"nu_max\":{},\"eta1p\":{},\"eta2p\":{}}}",
            fmt17(p.numax),
            fmt17(e1.value()),
            fmt17(e2.value())
        ),
        Err(e) => {
            eprintln!("warning: efficiencies: {e}");
            json!({ "series": "efficiencies", "error": e.to_string() }).to_string()
        }
    });
    lines
}

fn z_lines(results: &[FileResult], names: &[String], model: &RunConfig) -> Result<Vec<String>, CliError> {
    let s = &model.sim;
    let mut lines = Vec::new();
    for (r, name) in results.iter().zip(names) {
        let nu = s.profile.nu(r.summary.delta_t)?;
        for z in compare_to_model(&r.summary, &s.source, &s.det1, &s.det2, nu)? {
            let line = z.json_line(r.summary.delta_t);
            lines.push(format!("{{\"file\":{},{}", json!(name), &line[1..]));
        }
    }
    Ok(lines)
}

fn write_lines(path: &Path, header: Option<&str>, lines: &[String]) -> Result<(), CliError> {
    let mut w = create(path)?;
    if let Some(h) = header {
        writeln!(w, "{h}").map_err(io_at(path))?;
    }
    for l in lines {
        writeln!(w, "{l}").map_err(io_at(path))?;
    }
    finish(w, path)
}

fn analyze_into(
    files: &[(PathBuf, f64)],
    p: &PipelineArgs,
    model: Option<&RunConfig>,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    mkdir(dir)?;
    let results: Vec<FileResult> = files
        .par_iter()
        .map(|(f, dt)| analyze_file(f, *dt, p))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = files.iter().map(|(f, _)| file_label(f)).collect();

    let mut csv = Vec::new();
    let mut jsonl = Vec::new();
    let mut lags = Vec::new();
    for (i, (r, name)) in results.iter().zip(&names).enumerate() {
        csv.push(format!("{i},{name},{}", r.summary.csv_row(r.rep_period_ps)));
        let line = r.summary.json_line(r.rep_period_ps);
        jsonl.push(format!(
            "{{\"index\":{i},\"file\":{},\"gate_total\":{:?},\"gate_rejected\":{:?},{}",
            json!(name),
            r.gate.total,
            r.gate.rejected,
            &line[1..]
        ));
        for (ch, hist) in Channel::DETECTORS.iter().zip(&r.lags) {
            for (lag, count) in hist.iter().enumerate() {
                lags.push(format!("{i},{},{},{count}", ch.name(), lag + 1));
            }
        }
    }
    let mut written = Vec::new();
    let rates_csv = dir.join("rates.csv");
    write_lines(&rates_csv, Some(&format!("index,file,{RATES_CSV_HEADER}")), &csv)?;
    written.push(rates_csv);
    let rates_jsonl = dir.join("rates.jsonl");
    write_lines(&rates_jsonl, None, &jsonl)?;
    written.push(rates_jsonl);
    let lags_csv = dir.join("lags.csv");
    write_lines(&lags_csv, Some("index,channel,lag,count"), &lags)?;
    written.push(lags_csv);

    let mut distinct: Vec<f64> = results.iter().map(|r| r.summary.delta_t).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() >= 5 {
        let fits = dir.join("fits.jsonl");
        write_lines(&fits, None, &fit_scan(&results, p))?;
        written.push(fits);
    } else if results.len() > 1 {
        eprintln!("note: fewer than 5 distinct delays, no fits");
    }
    if let Some(m) = model {
        let path = dir.join("compare.jsonl");
        write_lines(&path, None, &z_lines(&results, &names, m)?)?;
        written.push(path);
    }
    if p.tables {
        for (i, r) in results.iter().enumerate() {
            let path = dir.join(format!("table_{i:03}.csv"));
            let mut w = create(&path)?;
            r.table.write_csv(&mut w)?;
            finish(w, &path)?;
            written.push(path);
        }
    }

    manifest.set(
        "analysis",
        json!({
            "gate_ps": p.gate_ps,
            "dead_pulses": p.dead_pulses,
            "lag_max": p.lag_max,
            "free_shape": p.free_shape,
            "nu_max": p.numax,
            "delays_ps": files.iter().map(|(_, d)| *d).collect::<Vec<_>>(),
        }),
    );
    for path in &written {
        manifest.output(path, json!({}))?;
    }
    for (r, name) in results.iter().zip(&names) {
        let s = &r.summary;
        eprintln!(
            "{name}: delay {} ps, {} live pulses, heralded {:.4e} +- {:.1e}, singles2 {:.4e}, coincidence {:.4e}",
            s.delta_t,
            s.counts.live,
            s.heralded_rate.value,
            s.heralded_rate.stderr,
            s.singles2.value,
            s.coincidence.value
        );
    }
    Ok(())
}

fn resolve_delays(files: &[PathBuf], given: &Option<Vec<f64>>) -> Result<Vec<(PathBuf, f64)>, CliError> {
    if let Some(d) = given {
        if d.len() != files.len() {
            return Err(CliError::Usage(format!(
                "{} delays given for {} files",
                d.len(),
                files.len()
            )));
        }
        return Ok(files.iter().cloned().zip(d.iter().copied()).collect());
    }
    Ok(files
        .iter()
        .map(|f| {
            let dir = f.parent().unwrap_or(Path::new("."));
            let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
            let dt = recorded_delays(dir)
                .and_then(|m| m.get(&file_label(f)).copied())
                .unwrap_or(0.0);
            (f.clone(), dt)
        })
        .collect())
}

fn load_model(path: &Option<PathBuf>) -> Result<Option<RunConfig>, CliError> {
    path.as_ref()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_at(p))?;
            RunConfig::parse(&text).map_err(|e| CliError::core(e, Some(p.display().to_string())))
        })
        .transpose()
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let files = resolve_delays(&a.files, &a.delays)?;
    let model = load_model(&a.model_config)?;
    let mut manifest = Manifest::new("analyze", &a.out);
    for (f, _) in &files {
        manifest.input(f)?;
    }
    if let Some(m) = &a.model_config {
        manifest.input(m)?;
    }
    analyze_into(&files, &a.pipeline, model.as_ref(), &a.out, &mut manifest)?;
    manifest.write()?;
    Ok(())
}

pub fn scan(a: &ScanArgs) -> Result<(), CliError> {
    let mut cfg = a.config.load()?;
    if cfg.scan_delays_ps.is_none() {
        cfg.scan_delays_ps = Some(symmetric_delays(3.0 * cfg.sim.profile.tau, a.points as usize));
    }
    let mut manifest = Manifest::new("scan", &a.out);
    if let Some(c) = &a.config.config {
        manifest.input(c)?;
    }
    let files = simulate_into(&cfg, &a.out, false, &mut manifest)?;
    let mut pipeline = a.pipeline.clone();
    if a.pipeline.numax == 0.975 {
        pipeline.numax = cfg.sim.profile.nu_max;
    }
    analyze_into(&files, &pipeline, Some(&cfg), &a.out, &mut manifest)?;
    manifest.write()?;
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<(), CliError> {
    let cfg = a.config.load()?;
    let files = resolve_delays(&a.files, &a.delays)?;
    let p = PipelineArgs {
        gate_ps: a.gate_ps,
        dead_pulses: a.dead_pulses,
        lag_max: 1,
        free_shape: false,
        numax: cfg.sim.profile.nu_max,
        tables: false,
    };
    let results: Vec<FileResult> = files
        .par_iter()
        .map(|(f, dt)| analyze_file(f, *dt, &p))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = files.iter().map(|(f, _)| file_label(f)).collect();
    let mut out = sink(a.out.as_deref())?;
    let at = a.out.clone().unwrap_or_else(|| PathBuf::from("-"));
    for line in z_lines(&results, &names, &cfg)? {
        writeln!(out, "{line}").map_err(io_at(&at))?;
    }
    out.flush().map_err(io_at(&at))
}
