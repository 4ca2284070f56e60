use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use cachefed::cache::{self, init_cache};
use cachefed::convergence::{
    certify_rate, lemma_checks, make_problem, BoundConstants, CertificationReport, LemmaReport, ProblemSpec,
    RateConfig, Verdict,
};
use cachefed::features::{
    generate_world, read_features, read_text_head, write_features, write_text_head, FeatureDataset, SynthSpec,
};
use cachefed::federation::{Federation, FederationConfig, LrSchedule};
use cachefed::io::{read_bytes, write_atomic};
use cachefed::partition::{
    heterogeneity_report, partition as split, PartitionSidecar, PartitionSpec, Scheme, DEFAULT_DIRICHLET_ALPHA,
};
use cachefed::reporting::{self, ExperimentRecord};
use cachefed::{Error, Result};

use crate::args::{load_section, render, ConvergenceArgs, GenSynthArgs, PartitionArgs, TrainArgs};

const LEMMA_CHECKPOINTS: usize = 20;

fn print_resolved<T: Serialize>(section: &str, resolved: &T) {
    println!("# resolved configuration");
    print!("{}", render(section, resolved));
    println!("# end configuration");
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn gen_synth(flags: GenSynthArgs) -> Result<()> {
    let file: GenSynthArgs = load_section(flags.config.as_deref(), "gen-synth")?;
    let d = SynthSpec::default();
    let a = flags.overlay(file).overlay(GenSynthArgs {
        config: None,
        classes: Some(d.num_classes),
        shots: Some(d.shots_per_class),
        dim: Some(d.feature_dim),
        separation: Some(d.class_separation),
        noise: Some(d.noise_scale),
        domain_gap: Some(d.domain_gap),
        text_noise: Some(d.text_noise),
        train_per_class: Some(d.train_per_class),
        test_per_class: Some(d.test_per_class),
        seed: Some(d.seed),
        out: Some(PathBuf::from("synth")),
    });
    print_resolved("gen-synth", &a);
    let spec = SynthSpec {
        num_classes: a.classes.unwrap(),
        shots_per_class: a.shots.unwrap(),
        feature_dim: a.dim.unwrap(),
        class_separation: a.separation.unwrap(),
        noise_scale: a.noise.unwrap(),
        domain_gap: a.domain_gap.unwrap(),
        text_noise: a.text_noise.unwrap(),
        train_per_class: a.train_per_class.unwrap(),
        test_per_class: a.test_per_class.unwrap(),
        seed: a.seed.unwrap(),
    };
    let world = generate_world(&spec)?;
    let prefix = a.out.unwrap();
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let outputs = [
        (with_suffix(&prefix, ".train.cff"), Some(&world.real_train)),
        (with_suffix(&prefix, ".test.cff"), Some(&world.real_test)),
        (with_suffix(&prefix, ".synthetic.cff"), Some(&world.synthetic_balanced)),
        (with_suffix(&prefix, ".text.cff"), None),
    ];
    for (path, data) in &outputs {
        match data {
            Some(ds) => write_features(path, ds, &world.catalog)?,
            None => write_text_head(path, &world.text_head, &world.catalog)?,
        }
        println!("{}  {}", sha256_file(path)?, path.display());
    }
    Ok(())
}

fn train_file(data: Option<&Path>, explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    let prefix = data.ok_or_else(|| Error::Invalid("give --data PREFIX or --train FILE".into()))?;
    let split = with_suffix(prefix, ".train.cff");
    if split.exists() {
        return Ok(split);
    }
    let extracted = with_suffix(prefix, ".features.cff");
    if extracted.exists() {
        return Ok(extracted);
    }
    Err(Error::Io {
        path: split,
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("neither this nor {} exists", extracted.display()),
        ),
    })
}

fn optional_file(data: Option<&Path>, explicit: Option<PathBuf>, suffix: &str) -> Option<PathBuf> {
    explicit.or_else(|| data.map(|p| with_suffix(p, suffix)).filter(|p| p.exists()))
}

fn parse_schedule(name: &str, gamma: f64) -> Result<LrSchedule> {
    match name {
        "constant" => Ok(LrSchedule::Constant),
        "inverse_t" => Ok(LrSchedule::InverseT { gamma }),
        other => Err(Error::Invalid(format!(
            "unknown lr schedule {other:?} (expected constant or inverse_t)"
        ))),
    }
}

fn check_compatible(what: &str, ds: &FeatureDataset, num_classes: usize, dim: usize) -> Result<()> {
    if ds.num_classes() != num_classes || ds.feature_dim() != dim {
        return Err(Error::Invalid(format!(
            "{what} has {} classes of dimension {}, text head has {num_classes} of dimension {dim}",
            ds.num_classes(),
            ds.feature_dim()
        )));
    }
    Ok(())
}

pub fn train(flags: TrainArgs) -> Result<()> {
    let file: TrainArgs = load_section(flags.config.as_deref(), "train")?;
    let mut a = flags.overlay(file);
    let data = a.data.clone();
    let train_path = train_file(data.as_deref(), a.train.take())?;
    let text_path = optional_file(data.as_deref(), a.text.take(), ".text.cff")
        .ok_or_else(|| Error::Invalid("no text head: give --text FILE or a --data prefix with PREFIX.text.cff".into()))?;
    a.test = Some(optional_file(data.as_deref(), a.test.take(), ".test.cff").unwrap_or_else(|| train_path.clone()));
    a.synthetic = optional_file(data.as_deref(), a.synthetic.take(), ".synthetic.cff");
    a.train = Some(train_path);
    a.text = Some(text_path);

    let d = FederationConfig::default();
    let a = a.overlay(TrainArgs {
        partition: Some("iid".into()),
        dirichlet_alpha: Some(DEFAULT_DIRICHLET_ALPHA),
        clients: Some(d.num_clients),
        rounds: Some(d.rounds),
        local_epochs: Some(d.local_epochs),
        lr: Some(d.lr),
        lr_schedule: Some("constant".into()),
        lr_gamma: Some(10.0),
        alpha: Some(d.alpha),
        beta: Some(d.beta),
        prox_mu: Some(d.prox_mu),
        cache_init: Some("synthetic".into()),
        seed: Some(d.seed),
        out: Some(PathBuf::from(".")),
        ..TrainArgs::default()
    });

    let (train_set, _) = read_features(a.train.as_deref().unwrap())?;
    let (head, catalog) = read_text_head(a.text.as_deref().unwrap())?;
    let (test_set, _) = read_features(a.test.as_deref().unwrap())?;
    let (c, dim) = (catalog.len(), head.feature_dim());
    check_compatible("training set", &train_set, c, dim)?;
    check_compatible("test set", &test_set, c, dim)?;
    let (balanced, a) = match &a.synthetic {
        Some(p) => (read_features(p)?.0, a),
        None => {
            let rarest = train_set.class_counts().into_iter().min().unwrap_or(0);
            let shots = a.shots.unwrap_or(16.min(rarest));
            let ds = train_set.balanced_subset(shots)?;
            (ds, TrainArgs { shots: Some(shots), ..a })
        }
    };
    check_compatible("cache set", &balanced, c, dim)?;
    print_resolved("train", &a);

    let scheme: Scheme = a.partition.as_deref().unwrap().parse()?;
    let seed = a.seed.unwrap();
    let cfg = FederationConfig {
        num_clients: a.clients.unwrap(),
        clients_per_round: a.clients_per_round,
        rounds: a.rounds.unwrap(),
        local_epochs: a.local_epochs.unwrap(),
        lr: a.lr.unwrap(),
        alpha: a.alpha.unwrap(),
        beta: a.beta.unwrap(),
        prox_mu: a.prox_mu.unwrap(),
        seed,
        lr_schedule: parse_schedule(a.lr_schedule.as_deref().unwrap(), a.lr_gamma.unwrap())?,
        batch_size: a.batch_size,
    };
    cfg.validate()?;
    let pspec = PartitionSpec {
        dirichlet_alpha: a.dirichlet_alpha.unwrap(),
        ..PartitionSpec::new(scheme, cfg.num_clients, seed)
    };
    let part = split(&train_set, &pspec)?;
    let mut initial = init_cache(&balanced)?;
    match a.cache_init.as_deref().unwrap() {
        "synthetic" => {}
        "random" => initial = initial.with_random_keys(seed),
        other => {
            return Err(Error::Invalid(format!(
                "unknown cache init {other:?} (expected synthetic or random)"
            )))
        }
    }
    println!("clients: {:?}", part.counts());

    let fed = Federation::new(initial, head, &train_set, test_set, &part)?;
    let state = fed.run(&cfg)?;
    let record = ExperimentRecord::new(&cfg, scheme, &state);
    let rows = record.rounds();
    for r in &rows {
        match r.mean_loss {
            Some(l) => println!("round {:>3}  accuracy {:.4}  loss {:.6}", r.round, r.accuracy, l),
            None => println!("round {:>3}  accuracy {:.4}", r.round, r.accuracy),
        }
    }

    let out = a.out.unwrap();
    ensure_dir(&out)?;
    let rounds_csv = out.join("rounds.csv");
    reporting::write_rounds_csv(&rounds_csv, &rows)?;
    reporting::write_rounds_jsonl(&out.join("rounds.jsonl"), &rows)?;
    reporting::write_json(&out.join("record.json"), &record)?;
    cache::save_checkpoint(&out.join("checkpoint.cfm"), &state.global_model)?;
    println!("wrote {}", rounds_csv.display());
    Ok(())
}

fn parse_participation(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Invalid(format!("participation must look like K/N, got {text:?}"));
    let (k, n) = text.split_once('/').ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    Ok((k, n))
}

#[derive(Serialize)]
struct ConvergenceSummary<'a> {
    problem: ProblemSpec,
    rate: RateConfig,
    smoothness: f64,
    strong_convexity: f64,
    heterogeneity_gap: f64,
    constants: BoundConstants,
    g_emp: f64,
    slope: f64,
    violations: usize,
    significant_violations: usize,
    high_variance: bool,
    verdict: Verdict,
    lemmas: Option<&'a LemmaReport>,
}

#[derive(Serialize)]
struct ConvergenceRow {
    t: usize,
    mean_gap: f64,
    bound: f64,
    violation_flag: u8,
}

const CONVERGENCE_COLUMNS: &str = "# columns: t (step, 1-based), mean_gap (F(c_bar_t) - F* averaged over runs), \
bound (rate bound at t), violation_flag (1 when mean_gap > bound)";

pub fn convergence(flags: ConvergenceArgs) -> Result<()> {
    let file: ConvergenceArgs = load_section(flags.config.as_deref(), "convergence")?;
    let mut a = flags.overlay(file);
    let (k, n) = match (&a.participation, a.clients) {
        (Some(p), clients) => {
            let (k, n) = parse_participation(p)?;
            if clients.is_some_and(|c| c != n) {
                return Err(Error::Invalid(format!(
                    "participation {p} disagrees with --clients {}",
                    clients.unwrap()
                )));
            }
            (k, n)
        }
        (None, Some(n)) => (n.div_ceil(2), n),
        (None, None) => (5, 10),
    };
    a.clients = Some(n);
    a.participation = Some(format!("{k}/{n}"));
    let d = ProblemSpec::default();
    let a = a.overlay(ConvergenceArgs {
        dim: Some(d.dim),
        mu: Some(d.mu),
        smoothness: Some(d.l),
        sigma: Some(d.sigma),
        heterogeneity: Some(d.heterogeneity),
        local_steps: Some(5),
        horizon: Some(10_000),
        runs: Some(50),
        resamples: Some(10_000),
        seed: Some(0),
        out: Some(PathBuf::from(".")),
        ..ConvergenceArgs::default()
    });

    let spec = ProblemSpec {
        num_clients: n,
        dim: a.dim.unwrap(),
        heterogeneity: a.heterogeneity.unwrap(),
        sigma: a.sigma.unwrap(),
        mu: a.mu.unwrap(),
        l: a.smoothness.unwrap(),
        seed: a.seed.unwrap(),
    };
    let problem = make_problem(&spec)?;
    let theorem = RateConfig::theorem(&problem, a.local_steps.unwrap(), k, a.horizon.unwrap());
    let a = a.overlay(ConvergenceArgs {
        gamma: Some(theorem.gamma),
        lr_scale: Some(theorem.lr_scale),
        ..ConvergenceArgs::default()
    });
    print_resolved("convergence", &a);
    let rate = RateConfig {
        gamma: a.gamma.unwrap(),
        lr_scale: a.lr_scale.unwrap(),
        ..theorem
    };
    rate.validate(&problem)?;
    for broken in rate.violated_preconditions(&problem) {
        println!("warning: step-size precondition fails: {broken}");
    }
    let report: CertificationReport = certify_rate(&problem, &rate, a.runs.unwrap(), spec.seed)?;
    let lemmas = match a.resamples.unwrap() {
        0 => None,
        r => Some(lemma_checks(&problem, &rate, spec.seed, r, LEMMA_CHECKPOINTS)?),
    };

    let c = &report.constants;
    println!(
        "L = {}  mu = {}  gamma = {}  Gamma = {:.6e}",
        problem.smoothness(),
        problem.strong_convexity(),
        rate.gamma,
        problem.heterogeneity_gap()
    );
    println!("G_emp = {:.6e}  B = {:.6e}  C = {:.6e}", report.g_emp, c.b, c.c);
    println!(
        "violations = {}  significant = {}  high_variance = {}  slope = {:.4}  verdict = {:?}",
        report.violations, report.significant_violations, report.high_variance, report.slope, report.verdict
    );
    if let Some(l) = &lemmas {
        println!(
            "drift bound: {}/{} ok (worst ratio {:.4}); unbiased sampling: {}/{} ok (worst z {:.3}); \
             sampling variance: {}/{} ok (worst ratio {:.4})",
            l.divergence.checked - l.divergence.failures,
            l.divergence.checked,
            l.divergence.worst,
            l.unbiased.checked - l.unbiased.failures,
            l.unbiased.checked,
            l.unbiased.worst,
            l.sampling_variance.checked - l.sampling_variance.failures,
            l.sampling_variance.checked,
            l.sampling_variance.worst
        );
    }

    let out = a.out.unwrap();
    ensure_dir(&out)?;
    let rows: Vec<ConvergenceRow> = (0..rate.horizon)
        .map(|i| ConvergenceRow {
            t: i + 1,
            mean_gap: report.mean_gap[i],
            bound: report.bound[i],
            violation_flag: u8::from(report.mean_gap[i] > report.bound[i]),
        })
        .collect();
    let csv_path = out.join("convergence.csv");
    write_atomic(&csv_path, reporting::csv_string(CONVERGENCE_COLUMNS, &rows)?.as_bytes())?;
    let summary = ConvergenceSummary {
        problem: spec,
        rate,
        smoothness: problem.smoothness(),
        strong_convexity: problem.strong_convexity(),
        heterogeneity_gap: problem.heterogeneity_gap(),
        constants: report.constants,
        g_emp: report.g_emp,
        slope: report.slope,
        violations: report.violations,
        significant_violations: report.significant_violations,
        high_variance: report.high_variance,
        verdict: report.verdict,
        lemmas: lemmas.as_ref(),
    };
    reporting::write_json(&out.join("convergence.json"), &summary)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn partition(flags: PartitionArgs) -> Result<()> {
    let file: PartitionArgs = load_section(flags.config.as_deref(), "partition")?;
    let mut a = flags.overlay(file);
    a.train = Some(train_file(a.data.as_deref(), a.train.take())?);
    let a = a.overlay(PartitionArgs {
        scheme: Some("iid".into()),
        clients: Some(10),
        dirichlet_alpha: Some(DEFAULT_DIRICHLET_ALPHA),
        seed: Some(0),
        out: Some(PathBuf::from(".")),
        ..PartitionArgs::default()
    });
    print_resolved("partition", &a);

    let (ds, _) = read_features(a.train.as_deref().unwrap())?;
    let spec = PartitionSpec {
        dirichlet_alpha: a.dirichlet_alpha.unwrap(),
        ..PartitionSpec::new(a.scheme.as_deref().unwrap().parse()?, a.clients.unwrap(), a.seed.unwrap())
    };
    let part = split(&ds, &spec)?;
    let report = heterogeneity_report(&part, &ds);
    let out = a.out.unwrap();
    ensure_dir(&out)?;
    write_atomic(&out.join("partition.txt"), part.to_text().as_bytes())?;
    reporting::write_json(&out.join("partition.json"), &PartitionSidecar::new(&spec, &part))?;
    reporting::write_json(&out.join("heterogeneity.json"), &report)?;
    for (k, h) in report.histograms.iter().enumerate() {
        println!("client {k:>3}  n = {:>5}  classes {:?}", part.shard(k).len(), h);
    }
    println!("max label-distribution distance: {:.4}", report.max_emd());
    Ok(())
}
