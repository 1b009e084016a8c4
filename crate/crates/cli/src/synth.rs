use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};

use morphprobe::conllu::write_conllu;
use morphprobe::morphdata::{write_agree_csv, Feature, FeatureSchema, Language};
use morphprobe::report::{ArtifactWriter, Manifest};
use morphprobe::synth::{planted_agree_bundle, planted_probe_bundle, Background, SynthAgreeConfig, SynthProbeConfig};
use morphprobe::tensorio::write_bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    /// Hidden states encode a feature value.
    Probe,
    /// One attention head links agree words.
    Agree,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "probe")]
    pub mode: SynthMode,
    #[arg(long, default_value = "English")]
    pub language: String,
    #[arg(long, default_value = "Number")]
    pub feature: String,
    #[arg(long, default_value_t = 400)]
    pub sentences: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: u32,
    #[arg(long, default_value_t = 2)]
    pub heads: u32,
    #[arg(long, default_value_t = 16)]
    pub dim: u32,
    /// Words per sentence in agree mode.
    #[arg(long, default_value_t = 24)]
    pub words: usize,
    #[arg(long, default_value_t = 2)]
    pub agree_size: usize,
    /// 1-based layer of the planted head.
    #[arg(long, default_value_t = 2)]
    pub planted_layer: usize,
    /// 1-based head number of the planted head.
    #[arg(long, default_value_t = 1)]
    pub planted_head: usize,
    #[arg(long, default_value_t = 0.9)]
    pub planted_mass: f64,
    /// Plant nothing; every head is uniform.
    #[arg(long)]
    pub uniform: bool,
    /// Noise on the hidden states in probe mode.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

fn run_config(args: &SynthArgs, seed: u64, agree: bool) -> String {
    let layers = (0..=args.layers).map(|l| l.to_string()).collect::<Vec<_>>().join(", ");
    let mut text = format!(
        "language = \"{}\"\nfeatures = [\"{}\"]\nlayers = [{layers}]\nseed = {seed}\nout = \"out\"\n",
        args.language, args.feature
    );
    if agree {
        text.push_str("treebanks = []\nagree_dataset = \"agree.csv\"\n");
    } else {
        text.push_str("treebanks = [\"treebank.conllu\"]\n");
    }
    text.push_str("\n[bundles]\npretrained = \"bundle.mprb\"\n");
    text
}

/// Writes `bundle.mprb`, the matching treebank or agree CSV, and a
/// `run.toml` that points the other commands at them.
pub fn synth_bundle(args: &SynthArgs, seed: u64, out: &Path) -> Result<()> {
    let feature: Feature = args.feature.parse()?;
    let language: Language = args.language.parse()?;
    let mut writer = ArtifactWriter::new(out, Manifest::new(&format!("{args:?} seed={seed}")));
    match args.mode {
        SynthMode::Probe => {
            let cfg = SynthProbeConfig {
                feature,
                n_sentences: args.sentences,
                layers: args.layers,
                dim: args.dim,
                noise: args.noise,
                signal_layers: if args.uniform { Some(BTreeSet::new()) } else { None },
                seed,
                ..SynthProbeConfig::default()
            };
            let (treebank, bundle) = planted_probe_bundle(&FeatureSchema::builtin(language), &cfg)?;
            writer.write("treebank.conllu", write_conllu(&treebank).as_bytes())?;
            writer.write("bundle.mprb", &write_bundle(Vec::new(), &bundle)?)?;
            writer.write("run.toml", run_config(args, seed, false).as_bytes())?;
        }
        SynthMode::Agree => {
            if args.planted_layer == 0 || args.planted_head == 0 {
                bail!("planted layer and head are 1-based");
            }
            let cfg = SynthAgreeConfig {
                n_sentences: args.sentences,
                n_words: args.words,
                agree_size: args.agree_size,
                layers: args.layers,
                heads: args.heads,
                planted: (!args.uniform).then_some((args.planted_layer - 1, args.planted_head - 1)),
                planted_mass: args.planted_mass,
                background: Background::Uniform,
                seed,
                ..SynthAgreeConfig::default()
            };
            let (examples, bundle) = planted_agree_bundle(&cfg)?;
            let mut csv = Vec::new();
            write_agree_csv(&mut csv, &examples)?;
            writer.write("agree.csv", &csv)?;
            writer.write("bundle.mprb", &write_bundle(Vec::new(), &bundle)?)?;
            writer.write("run.toml", run_config(args, seed, true).as_bytes())?;
        }
    }
    writer.finish()?;
    Ok(())
}
