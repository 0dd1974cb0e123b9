//! Command-line interface: audit, mitigate, split, synth, report.
//!
//! Exit codes: 0 when the audit found nothing above Info, 2 when a Warning
//! finding is present, 3 when a Critical finding is present, 1 on execution
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use biascope::dataset::{load_csv_reader, write_csv_path, ColumnType};
use biascope::error::{Error, Result};
use biascope::mitigation::kfold;
use biascope::pipeline::{
    build_metadata, emit_report, exit_code, findings_csv, identify, measure, read_sidecar,
    render_text, sidecar_path, verify_metadata, write_sidecar, MeasurementOutput,
    MetadataFreshness, MitigationHistoryEntry, MitigationPlan, ReportDocument, SCHEMA_VERSION,
};
use biascope::profile::AuditProfile;
use biascope::selection::SplitSpec;
use biascope::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(name = "biascope", version, about = "Bias audit toolkit for tabular datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the identification and measurement steps and write the report.
    Audit {
        /// Dataset CSV (RFC 4180, header row required).
        data: PathBuf,
        /// Audit profile JSON (schema, protected attributes, thresholds).
        #[arg(long)]
        profile: PathBuf,
        /// Optional split JSON with train/test(/validation) row indices.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Output directory for the report files and metadata sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a mitigation plan, re-measure, and write the result.
    Mitigate {
        data: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Mitigation plan JSON (target finding id plus action parameters).
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate seeded (optionally stratified, repeated) K-fold splits.
    Split {
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Categorical attribute to stratify on.
        #[arg(long)]
        stratify: Option<String>,
        #[arg(long)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with planted bias structure.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a findings document as text or CSV.
    Report {
        findings: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    Ok(std::fs::read(path)?)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    Ok(std::fs::read_to_string(path)?)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

struct AuditInputs {
    bytes: Vec<u8>,
    profile: AuditProfile,
    dataset: biascope::dataset::Dataset,
    split: Option<SplitSpec>,
}

fn load_inputs(data: &Path, profile: &Path, split: Option<&Path>) -> Result<AuditInputs> {
    let bytes = read_file(data)?;
    let profile = AuditProfile::from_json(&read_text(profile)?)?;
    let dataset = load_csv_reader(
        dataset_name(data),
        bytes.as_slice(),
        &profile.schema_pairs(),
        &profile.missing_tokens,
    )?;
    let split = match split {
        Some(path) => {
            let spec = SplitSpec::from_json(&read_text(path)?)?;
            spec.validate(dataset.n_rows())?;
            Some(spec)
        }
        None => None,
    };
    Ok(AuditInputs {
        bytes,
        profile,
        dataset,
        split,
    })
}

fn run_audit(data: &Path, profile: &Path, split: Option<&Path>, out: &Path) -> Result<i32> {
    let inputs = load_inputs(data, profile, split)?;
    let checklist = identify(&inputs.profile, &inputs.dataset, inputs.split.is_some())?;
    let MeasurementOutput {
        findings,
        artifacts,
    } = measure(
        &inputs.dataset,
        &inputs.profile,
        inputs.split.as_ref(),
        &checklist,
    );

    let document = ReportDocument {
        schema_version: SCHEMA_VERSION,
        dataset: inputs.dataset.name().to_string(),
        checklist,
        findings,
    };
    let written = emit_report(
        out,
        &document,
        &artifacts,
        &inputs.dataset,
        inputs.split.as_ref(),
    )?;

    let metadata = build_metadata(
        &inputs.dataset,
        &inputs.bytes,
        &inputs.profile,
        document.findings.clone(),
    )?;
    let sidecar = sidecar_path(out, data);
    write_sidecar(&sidecar, metadata)?;

    for path in &written {
        println!("wrote {}", path.display());
    }
    println!("wrote {}", sidecar.display());
    let code = exit_code(&document.findings);
    println!(
        "audit complete: {} findings, exit code {code}",
        document.findings.len()
    );
    Ok(code)
}

fn run_mitigate(
    data: &Path,
    profile_path: &Path,
    plan_path: &Path,
    split: Option<&Path>,
    out: &Path,
) -> Result<i32> {
    let inputs = load_inputs(data, profile_path, split)?;
    let plan = MitigationPlan::from_json(&read_text(plan_path)?)?;

    // Base findings: the fresh sidecar record when one exists, otherwise a
    // fresh measurement. The plan must target a finding that exists.
    let profile_hash =
        biascope::pipeline::sha256_hex(&serde_json::to_vec(&inputs.profile)?);
    let existing_sidecar = sidecar_path(
        data.parent().unwrap_or_else(|| Path::new(".")),
        data,
    );
    let prior_record = read_sidecar(&existing_sidecar).ok().and_then(|sidecar| {
        sidecar
            .record_for(&profile_hash)
            .filter(|record| verify_metadata(record, &inputs.bytes) == MetadataFreshness::Fresh)
            .cloned()
    });
    let (base_findings, prior_history) = match prior_record {
        Some(record) => (record.findings, record.mitigation_history),
        None => {
            let checklist =
                identify(&inputs.profile, &inputs.dataset, inputs.split.is_some())?;
            let output = measure(
                &inputs.dataset,
                &inputs.profile,
                inputs.split.as_ref(),
                &checklist,
            );
            (output.findings, Vec::new())
        }
    };
    if !base_findings.iter().any(|f| f.id == plan.target_finding) {
        return Err(Error::InvalidPlan(format!(
            "target finding {} does not exist in the audit record",
            plan.target_finding
        )));
    }

    let (ds_after, result) = biascope::pipeline::mitigate(
        &inputs.dataset,
        &inputs.profile,
        &plan,
        inputs.split.as_ref(),
    )?;

    std::fs::create_dir_all(out)?;
    let mitigated_csv = out.join(format!("{}.mitigated.csv", dataset_name(data)));
    write_csv_path(&ds_after, &mitigated_csv)?;
    if let biascope::pipeline::MitigationProduct::Weights { weights, .. } = &result.product {
        let weighted_csv = out.join(format!("{}.weighted.csv", dataset_name(data)));
        let file = std::fs::File::create(&weighted_csv)?;
        biascope::mitigation::write_weighted_csv(&ds_after, &weights.weights, file)?;
        println!("wrote {}", weighted_csv.display());
    }
    let result_path = out.join("mitigation.json");
    std::fs::write(&result_path, serde_json::to_string_pretty(&result)? + "\n")?;

    let mut metadata = build_metadata(
        &inputs.dataset,
        &inputs.bytes,
        &inputs.profile,
        base_findings,
    )?;
    metadata.mitigation_history = prior_history;
    metadata.mitigation_history.push(MitigationHistoryEntry {
        plan: result.plan.clone(),
        deltas: result.deltas.clone(),
    });
    let sidecar = sidecar_path(out, data);
    write_sidecar(&sidecar, metadata)?;

    println!("wrote {}", mitigated_csv.display());
    println!("wrote {}", result_path.display());
    println!("wrote {}", sidecar.display());
    if result.worsened.is_empty() {
        println!("no metrics worsened");
    } else {
        println!("worsened metrics: {}", result.worsened.join(", "));
    }
    Ok(0)
}

fn run_split(
    data: &Path,
    k: usize,
    repeats: usize,
    stratify: Option<&str>,
    seed: u64,
    out: Option<&Path>,
) -> Result<i32> {
    // Splitting needs row identity only; every column loads as categorical.
    let bytes = read_file(data)?;
    let mut header_reader = csv::Reader::from_reader(bytes.as_slice());
    let schema: Vec<(String, ColumnType)> = header_reader
        .headers()
        .map_err(Error::from)?
        .iter()
        .map(|h| (h.to_string(), ColumnType::Categorical))
        .collect();
    let ds = load_csv_reader(
        dataset_name(data),
        bytes.as_slice(),
        &schema,
        &biascope::dataset::default_missing_tokens(),
    )?;
    let folds = kfold(&ds, k, repeats, stratify, seed)?;
    let json = serde_json::to_string_pretty(&folds)? + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, json)?;
            println!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    for value in &folds.understratified {
        eprintln!("warning: value {value:?} has fewer rows than k; placed unstratified");
    }
    Ok(0)
}

fn run_synth(spec_path: &Path, out: &Path) -> Result<i32> {
    let spec = SynthSpec::from_json(&read_text(spec_path)?)?;
    let (ds, truth) = generate(&spec)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{}.csv", spec.name));
    write_csv_path(&ds, &csv_path)?;
    let truth_path = out.join(format!("{}.truth.json", spec.name));
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", truth_path.display());
    Ok(0)
}

fn run_report(findings: &Path, format: ReportFormat) -> Result<i32> {
    let document: ReportDocument = serde_json::from_str(&read_text(findings)?)?;
    match format {
        ReportFormat::Text => print!("{}", render_text(&document)),
        ReportFormat::Csv => print!("{}", findings_csv(&document)?),
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Audit {
            data,
            profile,
            split,
            out,
        } => run_audit(&data, &profile, split.as_deref(), &out),
        Command::Mitigate {
            data,
            profile,
            plan,
            split,
            out,
        } => run_mitigate(&data, &profile, &plan, split.as_deref(), &out),
        Command::Split {
            data,
            k,
            repeats,
            stratify,
            seed,
            out,
        } => run_split(&data, k, repeats, stratify.as_deref(), seed, out.as_deref()),
        Command::Synth { spec, out } => run_synth(&spec, &out),
        Command::Report { findings, format } => run_report(&findings, format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
