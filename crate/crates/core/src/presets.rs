//! Configurations shipped with the crate.

use crate::config::SystemGeometry;

pub const MAORY_JSON: &str = include_str!("../../../presets/maory.json");
pub const MINI_JSON: &str = include_str!("../../../presets/mini.json");

/// ELT-scale MCAO system: 6 LGS + 3 NGS, 80x80 high-order sensors, 6 layers of 128².
pub fn maory() -> SystemGeometry {
    SystemGeometry::from_json(MAORY_JSON).expect("maory preset is valid")
}

/// Desk-scale system: 2 sensors with 4x4 subapertures, 2 layers of 8².
pub fn mini() -> SystemGeometry {
    SystemGeometry::from_json(MINI_JSON).expect("mini preset is valid")
}
