//! Grid cases shipped with the crate.

use crate::grid::GridCase;

/// Six buses, seven lines; one balanced, one thermal and two renewable units
/// (solar on bus 2, wind on bus 4) serving three loads.
pub const SIX_BUS_JSON: &str = include_str!("../cases/six_bus.json");

/// Nine buses, twelve lines; three thermal units of different size and cost,
/// two renewables and three loads. Used to exercise unit commitment.
pub const NINE_BUS_JSON: &str = include_str!("../cases/nine_bus.json");

pub fn six_bus() -> GridCase {
    GridCase::from_json(SIX_BUS_JSON).expect("bundled six-bus case is valid")
}

pub fn nine_bus() -> GridCase {
    GridCase::from_json(NINE_BUS_JSON).expect("bundled nine-bus case is valid")
}

/// Look up a bundled case by name (`six_bus`, `nine_bus`).
pub fn by_name(name: &str) -> Option<GridCase> {
    match name {
        "six_bus" | "six_bus.json" => Some(six_bus()),
        "nine_bus" | "nine_bus.json" => Some(nine_bus()),
        _ => None,
    }
}
