//! Text, TSV, CSV and key-value renderings of evaluation and benchmark results.

use std::fmt::Write as _;
use std::path::Path;

use crate::bench::BenchResult;
use crate::data::write_atomic;
use crate::error::Result;
use crate::eval::EvalReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub summary: String,
    pub per_snr_tsv: String,
    pub confusion_csv: String,
    pub key_values: String,
}

impl Rendered {
    /// Writes `summary.txt`, `per_snr.tsv`, `confusion.csv` and
    /// `metrics.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("summary.txt"), self.summary.as_bytes())?;
        write_atomic(&dir.join("per_snr.tsv"), self.per_snr_tsv.as_bytes())?;
        write_atomic(&dir.join("confusion.csv"), self.confusion_csv.as_bytes())?;
        write_atomic(&dir.join("metrics.txt"), self.key_values.as_bytes())?;
        Ok(())
    }
}

pub fn per_snr_tsv(report: &EvalReport) -> String {
    let mut out = String::from("snr_db\taccuracy\tcount\n");
    for (snr, b) in &report.per_snr_accuracy {
        let _ = writeln!(out, "{snr}\t{:.6}\t{}", b.accuracy, b.count);
    }
    out
}

pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\predicted");
    for name in &report.class_names {
        out.push(',');
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        out.push_str(&csv_field(name));
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn key_values(report: &EvalReport, bench: Option<&BenchResult>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "overall_accuracy={:.6}", report.overall_accuracy);
    let _ = writeln!(out, "test_examples={}", report.total());
    let _ = writeln!(out, "num_classes={}", report.class_names.len());
    let _ = writeln!(out, "param_count={}", report.param_count);
    let _ = writeln!(out, "flop_count={}", report.flop_count);
    let _ = writeln!(out, "checkpoint_bytes={}", report.checkpoint_bytes);
    for (snr, b) in &report.per_snr_accuracy {
        let _ = writeln!(out, "accuracy_snr_{snr}={:.6}", b.accuracy);
    }
    if let Some(b) = bench {
        bench_key_values(&mut out, b);
    }
    out
}

fn bench_key_values(out: &mut String, b: &BenchResult) {
    let _ = writeln!(out, "bench_mode={}", b.mode.label());
    let _ = writeln!(out, "bench_seq_len={}", b.seq_len);
    let _ = writeln!(out, "bench_repetitions={}", b.repetitions);
    let _ = writeln!(out, "classifications_per_second_mean={:.3}", b.classifications_per_second);
    let _ = writeln!(out, "classifications_per_second_std={:.3}", b.std);
    let _ = writeln!(out, "platform={}", b.platform);
}

pub fn bench_text(b: &BenchResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Platform                  {}", b.platform);
    let _ = writeln!(out, "Mode                      {}", b.mode.label());
    let _ = writeln!(out, "Sequence length           {}", b.seq_len);
    let _ = writeln!(out, "Repetitions               {}", b.repetitions);
    let _ = writeln!(
        out,
        "Classifications / second  {:.1} ± {:.1}",
        b.classifications_per_second, b.std
    );
    out
}

pub fn bench_key_value_text(b: &BenchResult) -> String {
    let mut out = String::new();
    bench_key_values(&mut out, b);
    out
}

fn summary(report: &EvalReport, bench: Option<&BenchResult>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Overall accuracy  {:.2}%  ({} examples)", 100.0 * report.overall_accuracy, report.total());
    let _ = writeln!(out, "Parameters        {}", report.param_count);
    let _ = writeln!(out, "FLOPs / forward   {}", report.flop_count);
    let _ = writeln!(out, "Checkpoint bytes  {}", report.checkpoint_bytes);
    out.push('\n');
    let _ = writeln!(out, "{:>8}  {:>9}  {:>7}", "SNR (dB)", "accuracy", "count");
    for (snr, b) in &report.per_snr_accuracy {
        let _ = writeln!(out, "{snr:>8}  {:>8.2}%  {:>7}", 100.0 * b.accuracy, b.count);
    }
    out.push('\n');
    let width = report
        .class_names
        .iter()
        .map(|n| n.chars().count())
        .chain(report.confusion.iter().flatten().map(|c| c.to_string().len()))
        .max()
        .unwrap_or(1)
        .max(4);
    let _ = write!(out, "{:>width$}", "true");
    for name in &report.class_names {
        let _ = write!(out, "  {name:>width$}");
    }
    out.push('\n');
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        let _ = write!(out, "{name:>width$}");
        for c in row {
            let _ = write!(out, "  {c:>width$}");
        }
        out.push('\n');
    }
    if let Some(b) = bench {
        out.push('\n');
        out.push_str(&bench_text(b));
    }
    out
}

/// All renderings of `report` (and `bench`, if given). Pure function.
pub fn render_tables(report: &EvalReport, bench: Option<&BenchResult>) -> Rendered {
    Rendered {
        summary: summary(report, bench),
        per_snr_tsv: per_snr_tsv(report),
        confusion_csv: confusion_csv(report),
        key_values: key_values(report, bench),
    }
}
