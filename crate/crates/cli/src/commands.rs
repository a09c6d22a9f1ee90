use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use spikesort_core::density::histogram;
use spikesort_core::eval::{isi_histogram, match_and_score, match_peaks};
use spikesort_core::sorters::{sort_algo1, sort_algo2, sort_pca_kmeans};
use spikesort_core::spike_io::{
    compute_rms, detect_spikes, encode_spike_matrix, encode_signal, extract_aligned, read_labels_file, read_signal,
    read_spike_matrix, sidecar_path, signal_metadata, write_labels, write_spike_csv,
};
use spikesort_core::subspace::{itr_trace_ratio, pca_basis, project, scatter};
use spikesort_core::synth::{generate, read_truth_file, write_truth};
use spikesort_core::{
    Algo1Config, Algo2Config, DetectionConfig, HistogramConfig, LabelAssignment, PeakConfig, SortResult,
    SynthConfig, TemplateMode,
};

use crate::error::{CliError, CliResult};
use crate::output::{Run, RunManifest};
use crate::{Algo, Command, DetectArgs, EvalArgs, FeaturesArgs, ReplayArgs, SortArgs, SweepArgs, SynthArgs};

pub fn run(command: Command, args: &[String]) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a, args),
        Command::Detect(a) => detect(a, args),
        Command::Sort(a) => sort(a, args),
        Command::Eval(a) => eval(a, args),
        Command::Features(a) => features(a, args),
        Command::Sweep(a) => sweep(a, args),
        Command::Replay(a) => replay(a),
    }
}

fn parse<T: std::str::FromStr<Err = spikesort_core::Error>>(text: &str) -> CliResult<T> {
    text.parse().map_err(|e: spikesort_core::Error| CliError::Usage(e.to_string()))
}

fn manifest_beside(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn synth(a: SynthArgs, args: &[String]) -> CliResult<()> {
    if a.templates == 0 {
        return Err(CliError::Usage("--templates must be at least 1".into()));
    }
    let mode: TemplateMode = parse(&a.mode)?;
    let mut cfg = SynthConfig::with_defaults(a.templates, mode, a.duration, a.sigma, a.seed)?;
    cfg.noise_model = parse(&a.noise)?;
    cfg.firing_rate_hz = a.rate;
    cfg.sample_rate_hz = a.sample_rate;
    let ds = generate(&cfg)?;

    let mut run = Run::new("synth", args);
    run.seed(a.seed);
    run.config(&json!({ "mode": a.mode, "synth": cfg }));
    let signal_path = a.out_dir.join(format!("{}.f32", a.name));
    run.write(&signal_path, &encode_signal(&ds.signal))?;
    run.write(&sidecar_path(&signal_path), signal_metadata(&ds.signal).as_bytes())?;
    let mut truth = Vec::new();
    write_truth(&mut truth, &ds)?;
    run.write(&a.out_dir.join(format!("{}_truth.csv", a.name)), &truth)?;
    run.finish(&a.out_dir.join(format!("{}.manifest.json", a.name)))?;
    println!("{} spikes from {} units in {} samples", ds.len(), a.templates, ds.signal.len());
    Ok(())
}

fn detect(a: DetectArgs, args: &[String]) -> CliResult<()> {
    let det = DetectionConfig {
        threshold_multiplier: a.threshold,
        polarity: parse(&a.polarity)?,
        lockout_samples: a.lockout.unwrap_or(a.post.max(1)),
        pre_peak: a.pre,
        post_peak: a.post,
    };
    det.validate()?;
    let mut run = Run::new("detect", args);
    run.config(&det);
    run.input(&a.input);
    let signal = read_signal(&a.input)?;

    let peaks = match &a.truth {
        Some(truth_path) => {
            run.input(truth_path);
            let truth = read_truth_file(truth_path)?;
            truth
                .times
                .into_iter()
                .filter(|&t| t >= det.pre_peak && t + det.post_peak < signal.len())
                .collect()
        }
        // an all-zero record has no threshold to cross
        None if compute_rms(&signal)? == 0.0 => Vec::new(),
        None => detect_spikes(&signal, &det)?,
    };
    let spikes = extract_aligned(&signal, &peaks, &det)?;

    run.write(&a.out, &encode_spike_matrix(&spikes))?;
    let times: String = std::iter::once("peak_index".to_string())
        .chain(peaks.iter().map(usize::to_string))
        .map(|l| l + "\n")
        .collect();
    run.write(&a.out.with_extension("times.csv"), times.as_bytes())?;
    if a.csv {
        let mut csv = Vec::new();
        write_spike_csv(&mut csv, &spikes)?;
        run.write(&a.out.with_extension("csv"), &csv)?;
    }
    run.finish(&manifest_beside(&a.out))?;
    println!("{} spikes", spikes.n());
    Ok(())
}

fn read_times(path: &Path) -> CliResult<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            r.get(0)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| CliError::Data(format!("{}: row {} is not a sample index", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Serialize)]
struct SortSettings<'a> {
    algo: &'a str,
    algo1: Option<Algo1Config>,
    algo2: Option<Algo2Config>,
    k: Option<usize>,
    dim: Option<usize>,
    restarts: usize,
}

fn sort(a: SortArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("sort", args);
    run.seed(a.seed);
    let histogram = HistogramConfig {
        smoothing_bins: a.smoothing_bins,
        ..HistogramConfig::default()
    };
    let peaks = PeakConfig {
        prominence_frac: a.prominence,
        ..PeakConfig::default()
    };
    let (algo, result): (&str, SortResult);
    match a.algo {
        Algo::One => {
            let cfg = Algo1Config {
                d_max: a.d_max,
                k_max: a.k_max,
                seed: a.seed,
                histogram,
                peaks,
                restarts: a.restarts,
                single_cluster_ad: Some(a.ad_threshold),
                ..Algo1Config::default()
            };
            run.config(&SortSettings { algo: "1", algo1: Some(cfg.clone()), algo2: None, k: None, dim: None, restarts: a.restarts });
            run.input(&a.input);
            let spikes = read_spike_matrix(&a.input)?;
            (algo, result) = ("algo1", sort_algo1(&spikes, &cfg)?);
        }
        Algo::Two => {
            let cfg = Algo2Config {
                ad_threshold: a.ad_threshold,
                min_cluster_size: a.min_cluster_size,
                max_depth: a.max_depth,
                seed: a.seed,
                restarts: a.restarts,
                outlier_sd: a.outlier_sd,
                ..Algo2Config::default()
            };
            run.config(&SortSettings { algo: "2", algo1: None, algo2: Some(cfg.clone()), k: None, dim: None, restarts: a.restarts });
            run.input(&a.input);
            let spikes = read_spike_matrix(&a.input)?;
            (algo, result) = ("algo2", sort_algo2(&spikes, &cfg)?);
        }
        Algo::PcaKmeans => {
            let k = a
                .k
                .ok_or_else(|| CliError::Usage("--algo pca-kmeans needs --k (the baseline is told the unit count)".into()))?;
            run.config(&SortSettings { algo: "pca-kmeans", algo1: None, algo2: None, k: Some(k), dim: Some(a.dim), restarts: a.restarts });
            run.input(&a.input);
            let spikes = read_spike_matrix(&a.input)?;
            (algo, result) = ("pca-kmeans", sort_pca_kmeans(&spikes, k, a.dim, a.seed, a.restarts)?);
        }
    }

    let mut labels = Vec::new();
    write_labels(&mut labels, &result.assignment)?;
    run.write(&a.out_dir.join("labels.csv"), &labels)?;
    run.write(&a.out_dir.join("features.csv"), features_csv(&result.features, None).as_bytes())?;
    let diagnostics = json!({
        "algorithm": algo,
        "detected_k": result.detected_k,
        "feature_dim": result.projection.dim(),
        "outliers": result.assignment.outlier_count(),
        "details": result.diagnostics,
    });
    let text = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize") + "\n";
    run.write(&a.out_dir.join("diagnostics.json"), text.as_bytes())?;
    run.finish(&a.out_dir.join("manifest.json"))?;
    println!("{} clusters, {} outliers", result.detected_k, result.assignment.outlier_count());
    Ok(())
}

/// One row per spike: `f0,f1,…` and optionally its label.
fn features_csv(features: &DMatrix<f64>, labels: Option<&LabelAssignment>) -> String {
    let d = features.nrows();
    let mut s = (0..d).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",");
    if labels.is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for (j, col) in features.column_iter().enumerate() {
        let row: Vec<String> = col.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        if let Some(l) = labels {
            let _ = write!(s, ",{}", l.labels()[j]);
        }
        s.push('\n');
    }
    s
}

fn eval(a: EvalArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("eval", args);
    run.config(&json!({ "tolerance": a.tolerance, "sample_rate_hz": a.sample_rate }));
    run.input(&a.labels);
    run.input(&a.truth);
    let found = read_labels_file(&a.labels)?;
    let truth = read_truth_file(&a.truth)?;

    // pair every sorted spike with a truth row
    let (found, truth_labels, overlap, times, missed) = match &a.times {
        Some(path) => {
            run.input(path);
            let times = read_times(path)?;
            if times.len() != found.len() {
                return Err(CliError::Data(format!(
                    "{} peak times for {} labels",
                    times.len(),
                    found.len()
                )));
            }
            let pairs = match_peaks(&times, &truth.times, a.tolerance);
            let mut kept_labels = Vec::new();
            let mut kept_times = Vec::new();
            let (mut t_labels, mut t_overlap) = (Vec::new(), Vec::new());
            for (i, p) in pairs.iter().enumerate() {
                if let Some(j) = *p {
                    kept_labels.push(found.labels()[i]);
                    kept_times.push(times[i]);
                    t_labels.push(truth.labels[j]);
                    t_overlap.push(truth.overlap[j]);
                }
            }
            let missed = truth.times.len() - kept_labels.len();
            let matched = LabelAssignment::new(kept_labels, found.k())?;
            (matched, t_labels, t_overlap, kept_times, missed)
        }
        None => {
            if found.len() != truth.labels.len() {
                return Err(CliError::Data(format!(
                    "{} labels but {} truth rows; pass --times to match by peak time",
                    found.len(),
                    truth.labels.len()
                )));
            }
            (found, truth.labels.clone(), truth.overlap.clone(), truth.times.clone(), 0)
        }
    };
    let report = match_and_score(&found, &truth_labels, &overlap)?;
    let text = format!("{}missed_truth={missed}\n", report.to_key_value());
    run.write(&a.out_dir.join("report.txt"), text.as_bytes())?;
    run.write(&a.out_dir.join("confusion.csv"), report.confusion_csv().as_bytes())?;

    let mut isi = String::from("cluster,bin_lo,bin_hi,count\n");
    for c in 0..found.k() as i64 {
        if let Ok(h) = isi_histogram(&times, found.labels(), a.sample_rate, c) {
            for (b, count) in h.counts.iter().enumerate() {
                let _ = writeln!(isi, "{c},{},{},{count}", h.edges[b], h.edges[b + 1]);
            }
        }
    }
    run.write(&a.out_dir.join("isi.csv"), isi.as_bytes())?;
    run.finish(&a.out_dir.join("manifest.json"))?;
    println!("accuracy {:.2}% over {} spikes", report.accuracy_pct, report.n_scored);
    Ok(())
}

fn features(a: FeaturesArgs, args: &[String]) -> CliResult<()> {
    if !(1..=2).contains(&a.dim) {
        return Err(CliError::Usage("--dim must be 1 or 2".into()));
    }
    let mut run = Run::new("features", args);
    run.input(&a.input);
    run.input(&a.labels);
    let spikes = read_spike_matrix(&a.input)?;
    let labels = read_labels_file(&a.labels)?;
    if labels.len() != spikes.n() {
        return Err(CliError::Data(format!("{} labels for {} spikes", labels.len(), spikes.n())));
    }
    let k = labels.occupied_clusters();
    // the learned basis needs K - 1 >= dim; fewer clusters fall back to PCA
    let (basis, projection) = if k > a.dim {
        let scat = scatter(&spikes.data, &labels)?;
        ("trace-ratio", itr_trace_ratio(&scat, a.dim, 1e-10, 100)?.projection)
    } else {
        ("pca", pca_basis(&spikes.data, a.dim)?)
    };
    run.config(&json!({ "dim": a.dim, "basis": basis }));
    let y = project(&spikes.data, &projection)?;
    run.write(&a.out_dir.join("features.csv"), features_csv(&y, Some(&labels)).as_bytes())?;

    let first: Vec<f64> = y.row(0).iter().copied().collect();
    let h = histogram(&first)?;
    let mut text = String::from("bin_lo,bin_hi,count,smoothed\n");
    for b in 0..h.bins() {
        let _ = writeln!(text, "{:e},{:e},{},{:e}", h.edges[b], h.edges[b + 1], h.counts[b], h.smoothed[b]);
    }
    run.write(&a.out_dir.join("histogram.csv"), text.as_bytes())?;
    run.finish(&a.out_dir.join("manifest.json"))?;
    println!("{} spikes projected to {} dimension(s) ({basis})", spikes.n(), a.dim);
    Ok(())
}

#[derive(Serialize)]
struct Row {
    set: usize,
    sigma: f64,
    pca_kmeans_d2: f64,
    pca_kmeans_d10: f64,
    algo1: f64,
    algo2: f64,
    algo1_k3: u64,
    algo2_k3: u64,
    datasets: u64,
}

fn sweep(a: SweepArgs, args: &[String]) -> CliResult<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let mut run = Run::new("sweep", args);
    run.seed(a.seed);
    run.config(&json!({ "sigmas": a.sigmas, "sets": a.sets, "seeds": a.seeds, "duration_s": a.duration }));
    let det = DetectionConfig::default();
    let mut rows = Vec::new();
    for &set in &a.sets {
        let mode = match set {
            1 => TemplateMode::Easy,
            2 => TemplateMode::Hard,
            other => return Err(CliError::Usage(format!("unknown set {other}; use 1 (easy) or 2 (hard)"))),
        };
        for &sigma in &a.sigmas {
            let mut sums = [0.0; 4];
            let mut k3 = [0u64; 2];
            for s in 0..a.seeds {
                let cfg = SynthConfig::with_defaults(3, mode, a.duration, sigma, a.seed + s)?;
                let ds = generate(&cfg)?;
                let (spikes, kept) = ds.truth_spikes(&det, 0)?;
                let truth: Vec<usize> = kept.iter().map(|&i| ds.truth_labels[i]).collect();
                let overlap: Vec<bool> = kept.iter().map(|&i| ds.overlap_flags[i]).collect();
                let score = |r: &SortResult| -> CliResult<f64> { Ok(match_and_score(&r.assignment, &truth, &overlap)?.accuracy_pct) };
                let a1 = sort_algo1(&spikes, &Algo1Config::default())?;
                let a2 = sort_algo2(&spikes, &Algo2Config::default())?;
                sums[0] += score(&sort_pca_kmeans(&spikes, 3, 2, 0, 10)?)?;
                sums[1] += score(&sort_pca_kmeans(&spikes, 3, 10, 0, 10)?)?;
                sums[2] += score(&a1)?;
                sums[3] += score(&a2)?;
                k3[0] += u64::from(a1.detected_k == 3);
                k3[1] += u64::from(a2.detected_k == 3);
            }
            let n = a.seeds as f64;
            rows.push(Row {
                set,
                sigma,
                pca_kmeans_d2: sums[0] / n,
                pca_kmeans_d10: sums[1] / n,
                algo1: sums[2] / n,
                algo2: sums[3] / n,
                algo1_k3: k3[0],
                algo2_k3: k3[1],
                datasets: a.seeds,
            });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    run.write(&a.out_dir.join("table.csv"), &bytes)?;
    run.finish(&a.out_dir.join("manifest.json"))?;

    println!("set  sigma  pca-km d2  pca-km d10  algo1  algo2");
    for r in &rows {
        println!(
            "{:<4} {:<6} {:>9.1}  {:>10.1}  {:>5.1}  {:>5.1}",
            r.set, r.sigma, r.pca_kmeans_d2, r.pca_kmeans_d10, r.algo1, r.algo2
        );
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    let mut args = manifest.args.clone();
    // the recorded seed wins over whatever the environment says now
    if let Some(seed) = manifest.seed {
        args.push("--seed".into());
        args.push(seed.to_string());
    }
    let command = crate::parse_recorded(&args)?;
    if matches!(command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot point at another replay".into()));
    }
    run(command, &manifest.args)
}
