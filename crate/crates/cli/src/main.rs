//! `fracture`: phantom generation, feature extraction, cross-validation and
//! reporting as separate file-to-file steps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Errors are
//! printed as a single `error: ...` line on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fracture_core::evaluation::{compare, compare_matrices, emit_report, format_report, paper_checks, ConfusionMatrix2};
use fracture_core::features::{assemble, read_table, write_table, Condition, ExtractionParams, FirstStudyPolicy};
use fracture_core::learning::{
    cross_validate, shuffled_control, train_committee, CommitteeConfig, CvResult, Grouping, Kernel, Selection,
    SvmParams,
};
use fracture_core::phantom::{generate_cohort, CohortSpec};
use fracture_core::CohortManifest;

#[derive(Parser, Debug)]
#[command(name = "fracture", version, about = "Vertebral compression fracture etiology pipeline")]
struct Cli {
    /// Root directory for outputs of commands run without --out.
    #[arg(long, env = "FRACTURE_OUT", default_value = "fracture-out", global = true)]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic longitudinal cohort.
    Phantom(PhantomArgs),
    /// Extract the 36-feature table from a cohort manifest.
    Extract(ExtractArgs),
    /// Cross-validate SVM committees on feature-set conditions.
    Cv(CvArgs),
    /// Recompute the published accuracies and p-values from the published counts.
    PaperCheck(PaperCheckArgs),
    /// Rebuild report files from saved cross-validation predictions.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    /// 40 patients, 4 studies, about 300 fractured instances.
    Desk,
    /// 56 patients, 6 studies, about 695 fractured instances.
    Paper,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    patients: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    studies: Option<u64>,
    /// Upper end of a per-patient study-count range.
    #[arg(long)]
    studies_max: Option<usize>,
    /// Mean years between studies.
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long)]
    fraction_neoplastic: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=17))]
    vertebrae: Option<u64>,
    #[arg(long)]
    fractured_per_patient: Option<f64>,
    /// Voxel spacing in mm as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    spacing: Option<Vec<f64>>,
    /// Gaussian noise standard deviation (HU).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Exclude,
    Zero,
    Carry,
}

impl From<PolicyArg> for FirstStudyPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Exclude => FirstStudyPolicy::Exclude,
            PolicyArg::Zero => FirstStudyPolicy::Zero,
            PolicyArg::Carry => FirstStudyPolicy::Carry,
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "zero")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 3.0)]
    erosion_radius: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    compass_r1: f64,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    compass_r2: f64,
    /// Output CSV path; a `.toml` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    Greedy,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupArg {
    None,
    Patient,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "measured,longitudinal,combined")]
    conditions: Vec<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    members: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    selection: SelectionArg,
    #[arg(long, default_value_t = 5)]
    max_features: usize,
    #[arg(long, default_value_t = 3)]
    inner_folds: usize,
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelArg,
    /// RBF width; defaults to 1 / (d * median feature variance).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_passes: usize,
    /// C multipliers for osteoporotic,neoplastic.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    class_weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "none")]
    group_by: GroupArg,
    /// Also run the balanced label-permutation control on each condition.
    #[arg(long)]
    shuffled_control: bool,
    #[arg(long, default_value_t = 3)]
    permutations: usize,
    /// Write confusion-matrix heatmaps.
    #[arg(long)]
    svg: bool,
    /// Save a committee trained on the full table per condition.
    #[arg(long)]
    save_models: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PaperCheckArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding predictions.csv from a cv run.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fracture_core::Error> for Failure {
    fn from(e: fracture_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Phantom(a) => cmd_phantom(&cli, a),
        Command::Extract(a) => cmd_extract(&cli, a),
        Command::Cv(a) => cmd_cv(&cli, a),
        Command::PaperCheck(a) => cmd_paper_check(&cli, a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: usage: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}

fn write_snapshot<T: Serialize>(dir: &Path, command: &str, config: &T) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{command}-config.toml"));
    let text = toml::to_string(config).context("serializing config snapshot")?;
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct PhantomSnapshot<'a> {
    preset: Preset,
    out: &'a Path,
    cohort: &'a CohortSpec,
}

fn cmd_phantom(cli: &Cli, a: &PhantomArgs) -> Outcome {
    let mut spec = match a.preset {
        Preset::Desk => CohortSpec::desk(),
        Preset::Paper => CohortSpec::default(),
    };
    if let Some(v) = a.patients {
        spec.n_patients = v as usize;
    }
    if let Some(v) = a.studies {
        spec.studies_per_patient = v as usize;
    }
    if a.studies_max.is_some() {
        spec.studies_per_patient_max = a.studies_max;
    }
    if let Some(v) = a.interval {
        spec.study_interval = v;
    }
    if let Some(v) = a.fraction_neoplastic {
        spec.fraction_neoplastic = v;
    }
    if let Some(v) = a.vertebrae {
        spec.vertebrae_per_patient = v as usize;
        // keep the preset's fracture count feasible for fewer vertebrae
        spec.fractured_per_patient = spec.fractured_per_patient.min(v as f64);
    }
    if let Some(v) = a.fractured_per_patient {
        spec.fractured_per_patient = v;
    }
    if let Some(s) = &a.spacing {
        spec.spacing = [s[0], s[1], s[2]];
    }
    if let Some(v) = a.noise {
        spec.noise_sd = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("cohort"));
    let manifest = generate_cohort(&spec, &out).with_context(|| format!("generating cohort in {}", out.display()))?;
    write_snapshot(
        &out,
        "phantom",
        &PhantomSnapshot {
            preset: a.preset,
            out: &out,
            cohort: &spec,
        },
    )?;
    println!(
        "wrote {} patients, {} studies, {} fractured instances to {}",
        manifest.patients.len(),
        manifest.studies().count(),
        manifest.fractured_instances(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ExtractSnapshot<'a> {
    manifest: &'a Path,
    out: &'a Path,
    params: &'a ExtractionParams,
}

fn cmd_extract(cli: &Cli, a: &ExtractArgs) -> Outcome {
    if !a.manifest.is_file() {
        return Err(usage(format!("manifest {} does not exist", a.manifest.display())));
    }
    let params = ExtractionParams {
        erosion_radius_mm: a.erosion_radius,
        compass_r1: a.compass_r1,
        compass_r2: a.compass_r2,
        policy: a.policy.into(),
    };
    if !(params.erosion_radius_mm >= 0.0) {
        return Err(usage("--erosion-radius must be >= 0"));
    }
    params.layout().map_err(|e| usage(e.to_string()))?;

    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("features.csv"));
    let manifest = CohortManifest::load(&a.manifest)?;
    let mut table = assemble(&manifest, &params)?;
    table.manifest = Some(a.manifest.clone());
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_table(&table, &out)?;
    write_snapshot(
        dir,
        "extract",
        &ExtractSnapshot {
            manifest: &a.manifest,
            out: &out,
            params: &params,
        },
    )?;
    let (o, n) = table.class_counts();
    println!("wrote {} instances ({o} O, {n} N) to {}", table.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct CvSnapshot<'a> {
    csv: &'a Path,
    out: &'a Path,
    conditions: Vec<&'static str>,
    k: usize,
    seed: u64,
    grouping: Grouping,
    shuffled_control: bool,
    permutations: usize,
    committee: &'a CommitteeConfig,
}

fn committee_config(a: &CvArgs) -> std::result::Result<CommitteeConfig, Failure> {
    let kernel = match (a.kernel, a.gamma) {
        (KernelArg::Linear, _) => Kernel::Linear,
        (KernelArg::Rbf, Some(gamma)) => Kernel::Rbf { gamma },
        (KernelArg::Rbf, None) => Kernel::RbfAuto,
    };
    let cfg = CommitteeConfig {
        n_members: a.members,
        svm: SvmParams {
            kernel,
            c: a.c,
            tol: a.tol,
            max_passes: a.max_passes,
            class_weights: a.class_weights.as_ref().map(|w| [w[0], w[1]]),
            seed: a.seed,
        },
        selection: match a.selection {
            SelectionArg::Greedy => Selection::GreedyForward {
                max_features: a.max_features,
                inner_folds: a.inner_folds,
            },
            SelectionArg::None => Selection::None,
        },
        seed: a.seed,
        ..CommitteeConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn predictions_csv(results: &[CvResult], table: &fracture_core::features::FeatureTable) -> String {
    let mut s = String::from("condition,patient_id,study_id,label,fold,truth,decision,predicted\n");
    for r in results {
        for p in &r.predictions {
            let id = &table.rows[p.index].id;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.condition, id.patient_id, id.study_id, id.label, p.fold, p.truth, p.decision, p.predicted
            ));
        }
    }
    s
}

fn cmd_cv(cli: &Cli, a: &CvArgs) -> Outcome {
    if !a.csv.is_file() {
        return Err(usage(format!("feature table {} does not exist", a.csv.display())));
    }
    let mut conditions = Vec::new();
    for c in &a.conditions {
        let c: Condition = c.parse().map_err(|e: fracture_core::Error| usage(e.to_string()))?;
        if !conditions.contains(&c) {
            conditions.push(c);
        }
    }
    let cfg = committee_config(a)?;
    if a.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    let table = read_table(&a.csv)?;
    if a.k > table.len() {
        return Err(usage(format!("--k {} exceeds the {} instances in {}", a.k, table.len(), a.csv.display())));
    }
    let grouping = match a.group_by {
        GroupArg::None => Grouping::None,
        GroupArg::Patient => Grouping::Patient,
    };
    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("cv"));

    let mut results = Vec::new();
    for &c in &conditions {
        let r = cross_validate(&table, c, &cfg, a.k, a.seed, grouping).with_context(|| format!("condition {c}"))?;
        for w in &r.warnings {
            eprintln!("warning: {c}: {}", one_line(w));
        }
        println!("{c}: accuracy {:.3} ({} misclassified of {})", r.accuracy, r.confusion.misclassifications(), r.confusion.total());
        results.push(r);
    }
    let mut report = compare(&results)?;
    report.metadata.insert("k".into(), a.k.to_string());
    report.metadata.insert("seed".into(), a.seed.to_string());
    report.metadata.insert("members".into(), cfg.n_members.to_string());
    report
        .metadata
        .insert("grouping".into(), format!("{grouping:?}").to_lowercase());

    let mut control_csv = None;
    if a.shuffled_control {
        let mut s = String::from("condition,per_class,mean_accuracy,accuracies\n");
        for &c in &conditions {
            let r = shuffled_control(&table, c, &cfg, a.k, a.seed, a.permutations)?;
            let accs: Vec<String> = r.accuracies.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{c},{},{},{}\n", r.per_class, r.mean_accuracy, accs.join(";")));
            println!("{c}: shuffled control accuracy {:.3}", r.mean_accuracy);
        }
        control_csv = Some(s);
    }

    emit_report(&report, &out, a.svg)?;
    fs::write(out.join("predictions.csv"), predictions_csv(&results, &table)).context("writing predictions.csv")?;
    if let Some(s) = control_csv {
        fs::write(out.join("control.csv"), s).context("writing control.csv")?;
    }
    if a.save_models {
        let rows: Vec<_> = table.rows.iter().collect();
        for &c in &conditions {
            let committee = train_committee(&rows, c, &cfg)?;
            committee.save(&out.join(format!("model_{c}.json")))?;
        }
    }
    write_snapshot(
        &out,
        "cv",
        &CvSnapshot {
            csv: &a.csv,
            out: &out,
            conditions: conditions.iter().map(|c| c.name()).collect(),
            k: a.k,
            seed: a.seed,
            grouping,
            shuffled_control: a.shuffled_control,
            permutations: a.permutations,
            committee: &cfg,
        },
    )?;
    for p in &report.comparisons {
        println!("fisher p {} vs {}: {:.4e}", p.a, p.b, p.p_value);
    }
    Ok(())
}

#[derive(Serialize)]
struct PaperCheckSnapshot<'a> {
    out: &'a Path,
}

fn cmd_paper_check(cli: &Cli, a: &PaperCheckArgs) -> Outcome {
    let (report, checks) = paper_checks()?;
    let mut text = format_report(&report);
    text.push_str("\ncheck\tvalue\texpected\tstatus\n");
    for c in &checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        let line = format!("{}\t{:.6}\t{}\t{status}", c.name, c.value, c.expected);
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let out = a.out.clone().unwrap_or_else(|| cli.out_root.join("paper-check"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.txt"), text).context("writing report.txt")?;
    write_snapshot(&out, "paper-check", &PaperCheckSnapshot { out: &out })?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

#[derive(Serialize)]
struct ReportSnapshot<'a> {
    results: &'a Path,
    out: &'a Path,
    svg: bool,
}

/// Condition name, instance keys, truth codes and predicted codes.
type ConditionRows = (String, Vec<String>, Vec<String>, Vec<String>);

fn cmd_report(a: &ReportArgs) -> Outcome {
    let path = a.results.join("predictions.csv");
    if !path.is_file() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    // condition -> (instance keys, truth codes, predicted codes), in file order
    let mut groups: Vec<ConditionRows> = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        if rec.len() != 8 {
            return Err(Failure::Runtime(anyhow!("{}: expected 8 columns", path.display())));
        }
        let cond = rec[0].to_string();
        let pos = match groups.iter().position(|g| g.0 == cond) {
            Some(p) => p,
            None => {
                groups.push((cond, Vec::new(), Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[pos];
        g.1.push(format!("{}/{}/{}", &rec[1], &rec[2], &rec[3]));
        g.2.push(rec[5].to_string());
        g.3.push(rec[7].to_string());
    }
    if let Some(first) = groups.first() {
        for g in &groups[1..] {
            if g.1 != first.1 {
                return Err(Failure::Runtime(anyhow!(
                    "conditions {} and {} cover different instances",
                    first.0,
                    g.0
                )));
            }
        }
    }
    let mut named = Vec::new();
    for (cond, _, truth, pred) in &groups {
        let t: Vec<&str> = truth.iter().map(String::as_str).collect();
        let p: Vec<&str> = pred.iter().map(String::as_str).collect();
        named.push((cond.clone(), ConfusionMatrix2::from_codes(&t, &p)?));
    }
    let report = compare_matrices(&named)?;
    let out = a.out.clone().unwrap_or_else(|| a.results.clone());
    emit_report(&report, &out, a.svg)?;
    write_snapshot(
        &out,
        "report",
        &ReportSnapshot {
            results: &a.results,
            out: &out,
            svg: a.svg,
        },
    )?;
    print!("{}", format_report(&report));
    Ok(())
}
