//! The oracles must stay independent of the code they check.

use std::fs;
use std::path::Path;

#[test]
fn manifest_has_no_imooe_dependency() {
    let manifest = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml")).unwrap();
    let deps = manifest.split("[dependencies]").nth(1).unwrap_or("");
    for line in deps.lines().take_while(|l| !l.starts_with('[')) {
        assert!(!line.trim_start().starts_with("imooe"), "oracles depend on production crate: {line}");
    }
}

#[test]
fn sources_do_not_reference_production_modules() {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    for entry in fs::read_dir(src).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        for forbidden in ["use imooe", "imooe::spectral", "imooe::model", "extern crate imooe"] {
            assert!(!text.contains(forbidden), "{} contains `{forbidden}`", path.display());
        }
    }
}
