#![allow(dead_code)]

use std::path::PathBuf;

use intermit::{analyze, lang, Analysis};

pub const BENCHMARKS: [&str; 6] = ["activity", "greenhouse", "cem", "photo", "send_photo", "tire"];
pub const CORPUS: [&str; 9] =
    ["activity", "greenhouse", "cem", "photo", "send_photo", "tire", "weather", "tmp_chain", "confirm"];

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn source(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(format!("{name}.oct"))).unwrap()
}

pub fn load(name: &str) -> Analysis {
    let a = analyze(lang::parse(&source(name)).unwrap());
    assert!(a.diagnostics.is_empty(), "{name}: {:?}", a.diagnostics);
    a
}
