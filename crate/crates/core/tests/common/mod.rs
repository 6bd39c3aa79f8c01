#![allow(dead_code)]

use std::path::PathBuf;

pub mod kat;
pub mod roundtrip;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Whitespace-separated hex records, one per line; `-` is an empty field.
pub fn hex_records(name: &str) -> Vec<Vec<Vec<u8>>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|f| if f == "-" { Vec::new() } else { decode_hex(f) })
                .collect()
        })
        .collect()
}

fn decode_hex(s: &str) -> Vec<u8> {
    let padded;
    let s = if s.len() % 2 == 1 {
        padded = format!("0{s}");
        padded.as_str()
    } else {
        s
    };
    hex::decode(s).unwrap()
}
