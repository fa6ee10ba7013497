//! Scenarios shipped with the crate.

pub const STAGGERED: &str = include_str!("../../scenarios/staggered.toml");
pub const HOSPITAL: &str = include_str!("../../scenarios/hospital.toml");
pub const AAL: &str = include_str!("../../scenarios/aal.toml");

/// The robot's transducer followed by the six floor motes', in mote order.
pub const HOSPITAL_CONFIGURATION: [&str; 7] = ["RSSI", "PIR", "PIR", "PIR", "PIR", "PIR", "PIR"];

/// Look a bundled scenario up by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    match name {
        "staggered" => Some(STAGGERED),
        "hospital" => Some(HOSPITAL),
        "aal" => Some(AAL),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;

    #[test]
    fn bundled_scenarios_validate() {
        for name in ["staggered", "hospital", "aal"] {
            let s = Scenario::parse(by_name(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }
}
