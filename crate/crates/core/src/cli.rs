//! The `slt` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::features::FileClipFeatures;
use crate::gradsuite::{gradient_suite, SuiteOptions};
use crate::io::{load_keypoints, read_lines, Manifest};
use crate::metrics::{corpus_bleu, reduced_bleu_report};
use crate::pipeline::{ModelConfig, Sample, Trainer};
use crate::skelgraph::{build_hops, laplacian, matrix_csv, SkeletonTopology};
use crate::text::{Blacklist, Vocabulary};

#[derive(Debug, Parser)]
#[command(name = "slt", about = "Sign language translation from pose keypoints and clip features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the records of a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Validation manifest; checkpoints are selected by its BLEU-4.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Existing vocabulary; otherwise one is learned from the training text.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value = "checkpoints")]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override one configuration key, e.g. `--set max_steps=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Translate one keypoint file.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Beam width; defaults to the checkpoint's configuration, 1 is greedy.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score hypotheses against references, one sentence per line.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        blacklist: Option<PathBuf>,
    },
    /// Learn a subword vocabulary from a text corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the most frequent words of a corpus, one per line.
    Blacklist {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        top: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        probes: usize,
    },
    /// Print the skeleton hop matrices as CSV.
    DumpGraph {
        #[arg(long, default_value_t = 1)]
        max_hop: usize,
        /// Print the raw hop shells instead of the normalised matrices.
        #[arg(long)]
        raw: bool,
        /// Print the Laplacian (normalised unless --raw).
        #[arg(long)]
        laplacian: bool,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status. Failures print `error-code: E_…` and then the message.
pub fn run_command<S: AsRef<str>>(argv: &[S], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args = argv.iter().map(|s| s.as_ref());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let _ = writeln!(err, "error-code: E_USAGE");
            let _ = write!(err, "{}", e.render());
            return 2;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error-code: {}", e.code());
            let _ = writeln!(err, "{e}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_or_print(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => emit(out, text),
    }
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    Manifest::load(path)?.records.iter().map(Sample::load).collect()
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train {
            config,
            manifest,
            valid,
            vocab,
            out: out_dir,
            resume,
            overrides,
        } => {
            let mut config = ModelConfig::load(&config)?;
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, found {kv:?}")))?;
                let k = k.trim();
                config.set(k, v).map_err(|m| Error::invalid(format!("--set {k}: {m}")))?;
            }
            config.validate()?;
            let train = load_samples(&manifest)?;
            let valid = match valid {
                Some(p) => load_samples(&p)?,
                None => Vec::new(),
            };
            let mut trainer = match resume {
                Some(ckpt) => {
                    let t = Trainer::load(&ckpt)?;
                    if t.config != config {
                        return Err(Error::CheckpointMismatch(format!(
                            "{} was trained under a different configuration",
                            ckpt.display()
                        )));
                    }
                    t
                }
                None => {
                    let vocab = match vocab {
                        Some(p) => Vocabulary::load(&p)?,
                        None => {
                            let texts: Vec<&str> = train.iter().map(|s| s.text.as_str()).collect();
                            Vocabulary::train(&texts, config.vocab_size)?
                        }
                    };
                    Trainer::new(config, vocab)?
                }
            };
            let mut log = |line: &str| {
                let _ = writeln!(out, "{line}");
            };
            let state = trainer.fit(&train, &valid, Some(&out_dir), &mut log)?;
            if let Some(best) = state.best_bleu4 {
                writeln!(out, "best validation BLEU-4 {best:.2}").ok();
            }
            writeln!(out, "saved {}", out_dir.join("last.ckpt").display()).ok();
            Ok(0)
        }
        Command::Translate {
            checkpoint,
            keypoints,
            features,
            beam,
        } => {
            let trainer = Trainer::load(&checkpoint)?;
            let sample = Sample {
                id: keypoints.display().to_string(),
                keypoints: load_keypoints(&keypoints)?,
                features: match features {
                    Some(p) => Some(FileClipFeatures::load(&p)?.rows().clone()),
                    None => None,
                },
                text: String::new(),
            };
            let beam = beam.unwrap_or(trainer.config.beam_size);
            let sentence = trainer.translate(&sample, beam)?;
            emit(out, &format!("{sentence}\n"))?;
            Ok(0)
        }
        Command::Evaluate {
            reference,
            hyp,
            blacklist,
        } => {
            let refs = read_lines(&reference)?;
            let hyps = read_lines(&hyp)?;
            if refs.len() != hyps.len() {
                return Err(Error::invalid(format!(
                    "{} has {} lines but {} has {}",
                    hyp.display(),
                    hyps.len(),
                    reference.display(),
                    refs.len()
                )));
            }
            let report = corpus_bleu(&hyps, &refs)?;
            let mut text = String::new();
            for n in 1..=4 {
                text.push_str(&format!("BLEU-{n}: {:.2}\n", report.bleu(n)));
            }
            if let Some(p) = blacklist {
                let bl = Blacklist::load(&p)?;
                let reduced = reduced_bleu_report(&hyps, &refs, &bl)?;
                text.push_str(&format!("rBLEU-4: {:.2}\n", reduced.bleu(4)));
            }
            text.push_str(&format!(
                "BP: {:.6}\nhyp_len: {}\nref_len: {}\n",
                report.brevity_penalty, report.hyp_len, report.ref_len
            ));
            emit(out, &text)?;
            Ok(0)
        }
        Command::BuildVocab {
            corpus,
            size,
            out: path,
        } => {
            let lines = read_lines(&corpus)?;
            let vocab = Vocabulary::train(&lines, size)?;
            write_or_print(path.as_deref(), &vocab.to_file_string(), out)?;
            if path.is_some() {
                writeln!(err, "{} tokens, {} merges", vocab.len(), vocab.merges().len()).ok();
            }
            Ok(0)
        }
        Command::Blacklist {
            corpus,
            top,
            out: path,
        } => {
            let lines = read_lines(&corpus)?;
            let bl = Blacklist::build(&lines, top, corpus.display().to_string())?;
            write_or_print(path.as_deref(), &bl.to_file_string(), out)?;
            Ok(0)
        }
        Command::Gradcheck { eps, tol, probes } => {
            let cases = gradient_suite(SuiteOptions {
                eps,
                probes,
                ..SuiteOptions::default()
            })?;
            let mut worst = 0.0f64;
            let mut failed = Vec::new();
            for c in &cases {
                let ok = c.report.passes(tol);
                writeln!(
                    out,
                    "{:<36} {:>5} probes  max rel err {:.3e}  {}",
                    c.name,
                    c.report.checked,
                    c.report.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                )
                .ok();
                worst = worst.max(c.report.max_rel_error);
                if !ok {
                    failed.push(c.name);
                }
            }
            writeln!(out, "max relative error: {worst:.3e}").ok();
            if failed.is_empty() {
                Ok(0)
            } else {
                writeln!(err, "error-code: E_GRADCHECK").ok();
                writeln!(err, "gradient mismatch above {tol:e} in: {}", failed.join(", ")).ok();
                Ok(1)
            }
        }
        Command::DumpGraph {
            max_hop,
            raw,
            laplacian: lap,
        } => {
            let topo = SkeletonTopology::pose33();
            let mut text = String::new();
            if lap {
                text.push_str(&format!("# laplacian normalized={}\n", !raw));
                text.push_str(&matrix_csv(&laplacian(&topo, !raw))?);
            } else {
                let hops = build_hops(&topo, max_hop)?;
                let mats = if raw { hops.raw() } else { hops.normalized() };
                for (k, m) in mats.iter().enumerate() {
                    text.push_str(&format!("# hop {k} {}\n", if raw { "raw" } else { "normalized" }));
                    text.push_str(&matrix_csv(m)?);
                }
            }
            emit(out, &text)?;
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut argv = vec!["slt"];
        argv.extend_from_slice(args);
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_command(&argv, &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_ne!(code, 0);
        assert_eq!(err.lines().next(), Some("error-code: E_USAGE"));
        assert!(err.contains("Usage"));
    }

    #[test]
    fn missing_file_reports_io() {
        let (code, _, err) = run(&["evaluate", "--ref", "/nonexistent/r", "--hyp", "/nonexistent/h"]);
        assert_eq!(code, 1);
        assert_eq!(err.lines().next(), Some("error-code: E_IO"));
    }

    #[test]
    fn dump_graph_is_33_by_33() {
        let (code, out, _) = run(&["dump-graph", "--max-hop", "1"]);
        assert_eq!(code, 0);
        let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 66);
        assert!(rows.iter().all(|r| r.split(',').count() == 33));
    }
}
