use std::path::PathBuf;

use imooe::recipe::{ExperimentRecipe, Scale};

#[test]
fn checked_in_recipes_validate_at_both_scales() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../recipes");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let r = ExperimentRecipe::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        r.validate().unwrap();
        for scale in [Scale::Desk, Scale::Paper] {
            let key = if scale == Scale::Desk { "desk" } else { "paper" };
            let spec = &r.scale[key];
            for arm in &r.arms {
                for seed in &r.seeds {
                    let cfg = r.train_config(spec, arm, *seed).unwrap_or_else(|e| panic!("{} {key} {}: {e}", path.display(), arm.name));
                    cfg.validate().unwrap();
                }
            }
        }
        seen += 1;
    }
    assert!(seen >= 5);
}
