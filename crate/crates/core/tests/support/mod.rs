//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod gen;
pub mod reference;

use raretrig_core::{parse_dut, Dut};

/// Shipped corpus designs by file stem.
pub const CORPUS: &[(&str, &str)] = &[
    ("magic32", include_str!("../../../../corpus/magic32.dut")),
    ("magic32_clean", include_str!("../../../../corpus/magic32_clean.dut")),
    ("magic16", include_str!("../../../../corpus/magic16.dut")),
    ("magic16_clean", include_str!("../../../../corpus/magic16_clean.dut")),
    ("threshold_fir", include_str!("../../../../corpus/threshold_fir.dut")),
    ("threshold_fir_clean", include_str!("../../../../corpus/threshold_fir_clean.dut")),
    ("fir16", include_str!("../../../../corpus/fir16.dut")),
    ("fir16_clean", include_str!("../../../../corpus/fir16_clean.dut")),
    ("cwm", include_str!("../../../../corpus/cwm.dut")),
    ("cwm_clean", include_str!("../../../../corpus/cwm_clean.dut")),
    ("cwm8", include_str!("../../../../corpus/cwm8.dut")),
    ("cwm8_clean", include_str!("../../../../corpus/cwm8_clean.dut")),
    ("swom", include_str!("../../../../corpus/swom.dut")),
    ("swom_clean", include_str!("../../../../corpus/swom_clean.dut")),
    ("swom4", include_str!("../../../../corpus/swom4.dut")),
    ("swom4_clean", include_str!("../../../../corpus/swom4_clean.dut")),
    ("swm", include_str!("../../../../corpus/swm.dut")),
    ("swm_clean", include_str!("../../../../corpus/swm_clean.dut")),
    ("swm4", include_str!("../../../../corpus/swm4.dut")),
    ("swm4_clean", include_str!("../../../../corpus/swm4_clean.dut")),
    ("deep_nested", include_str!("../../../../corpus/deep_nested.dut")),
    ("deep16", include_str!("../../../../corpus/deep16.dut")),
    ("loop_heavy", include_str!("../../../../corpus/loop_heavy.dut")),
    ("loop16", include_str!("../../../../corpus/loop16.dut")),
];

/// Reduced-width designs small enough to enumerate.
pub const REDUCED: &[&str] = &["magic16", "fir16", "cwm8", "swom4", "swm4", "deep16", "loop16"];

pub fn corpus(name: &str) -> Dut {
    let text = CORPUS.iter().find(|(n, _)| *n == name).unwrap_or_else(|| panic!("no corpus design {name}")).1;
    parse_dut(text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn all_corpus() -> Vec<(&'static str, Dut)> {
    CORPUS.iter().map(|(n, _)| (*n, corpus(n))).collect()
}
