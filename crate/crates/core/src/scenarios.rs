//! Scenarios shipped with the crate.

use crate::world::scenario::{ScenarioError, WorldScenario};

pub const BUNDLED: [(&str, &str); 7] = [
    ("fig2_locomotion", include_str!("../scenarios/fig2_locomotion.toml")),
    ("fig3e_navigation_a", include_str!("../scenarios/fig3e_navigation_a.toml")),
    ("fig3e_navigation_b", include_str!("../scenarios/fig3e_navigation_b.toml")),
    ("fig4_docking_match", include_str!("../scenarios/fig4_docking_match.toml")),
    ("fig4_docking_mismatch", include_str!("../scenarios/fig4_docking_mismatch.toml")),
    ("fig4_docking_stripes", include_str!("../scenarios/fig4_docking_stripes.toml")),
    ("optical_upload", include_str!("../scenarios/optical_upload.toml")),
];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Option<Result<WorldScenario, ScenarioError>> {
    bundled_text(name).map(WorldScenario::from_toml)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let s = bundled(name).unwrap().unwrap();
            assert_eq!(s.name, name);
        }
        assert!(bundled("nope").is_none());
    }
}
