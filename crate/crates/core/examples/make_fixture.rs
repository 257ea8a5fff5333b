//! Regenerates the bundled fixture: `cargo run --example make_fixture [dir]`.

use std::path::PathBuf;

use wgf_core::synth::write_small_fixture;

/// Seed of the committed fixture.
const SEED: u64 = 7;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    write_small_fixture(&dir, SEED).expect("write fixture");
    println!("wrote fixture to {}", dir.display());
}
