//! Builtin scenario registry.
//!
//! Each builtin is a complete config file embedded at compile time from
//! `scenarios/*.toml`; `describe` prints it verbatim and `run --builtin`
//! executes it, so every manifest entry round-trips through the parser.

use crate::config::ConfigFile;
use crate::CliError;

pub struct Builtin {
    pub id: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        id: "example-2.1",
        summary: "parabola atoms in the plane: wide-cone failure with a witness direction",
        toml: include_str!("../scenarios/example-2.1.toml"),
    },
    Builtin {
        id: "example-2.2",
        summary: "geometric atoms (γ = e) + linear drift: gradual smoothing, regime III.b",
        toml: include_str!("../scenarios/example-2.2.toml"),
    },
    Builtin {
        id: "example-2.3",
        summary: "factorial atoms: singular noise marginals via the 2πN! frequency probe",
        toml: include_str!("../scenarios/example-2.3.toml"),
    },
    Builtin {
        id: "stable-alpha",
        summary: "scalar α-stable measure (α = 1): divergent order indices",
        toml: include_str!("../scenarios/stable-alpha.toml"),
    },
    Builtin {
        id: "ou-jump",
        summary: "unit Poisson jumps + neg-identity drift: stationary mean one",
        toml: include_str!("../scenarios/ou-jump.toml"),
    },
    Builtin {
        id: "stationary-smooth",
        summary: "dissipative drift + wide-cone measure: bounded stationary density",
        toml: include_str!("../scenarios/stationary-smooth.toml"),
    },
];

pub fn find(id: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.id == id)
}

/// Parse a builtin's embedded config (they must always parse).
pub fn parse(id: &str) -> Result<ConfigFile, CliError> {
    let builtin = find(id).ok_or_else(|| {
        CliError::Config(format!(
            "unknown builtin scenario '{id}' (try `levylab list`)"
        ))
    })?;
    ConfigFile::parse(builtin.toml)
}
