//! End-to-end run through the command-line entry point: synthesize a corpus,
//! preprocess it, train two small models, evaluate, generate and render.
//!
//! cargo run --release --example pipeline -- [work_dir]

use std::path::PathBuf;

fn lark(args: &[&str]) {
    let mut full = vec!["lark", "--seed", "3"];
    full.extend_from_slice(args);
    println!("$ {}", full.join(" "));
    let code = lark::cli::run(full);
    if code != 0 {
        std::process::exit(code);
    }
}

fn main() {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lark_pipeline"));
    let p = |s: &str| work.join(s).to_string_lossy().into_owned();
    let (data, pre, models) = (p("data"), p("pre"), p("models"));

    lark(&["synthdata", "--out", &data, "--utterances", "12", "--speakers", "3"]);
    lark(&["preprocess", "--manifest", &p("data/manifest.tsv"), "--out", &pre]);
    lark(&[
        "train", "--data", &pre, "--out", &models, "--grid", "D0-C5,D40-C5", "--epochs", "30",
        "--num-layers", "2", "--hidden-size", "32", "--batch-size", "8",
    ]);
    lark(&[
        "evaluate", "--checkpoint", &p("models/D0-C5.lark"), "--checkpoint",
        &p("models/D40-C5.lark"), "--data", &pre, "--split", "train",
    ]);
    lark(&[
        "generate", "--checkpoint", &p("models/D40-C5.lark"), "--wav", &p("data/utt_000.wav"),
        "--out", &p("generated.txt"),
    ]);
    lark(&[
        "render", "--landmarks", &p("data/utt_000.txt"), "--overlay", &p("generated.txt"),
        "--align", "--canvas", "256", "--out", &p("frames"),
    ]);
}
