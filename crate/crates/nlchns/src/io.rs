//! Serialized artifacts: binary state snapshots, CSV ledgers and signal
//! files, and key-value report blocks.
//!
//! Snapshot layout (all little-endian):
//!
//! ```text
//! magic  "NLCHNS1\0"          8 bytes
//! N      u32                  points per axis
//! fields u32                  plane count (3: u_x, u_y, phi)
//! L      f64                  domain side length
//! t      f64                  time stamp
//! planes N*N f64 each         row-major u_x, u_y, phi
//! ```
//!
//! Round-trips are bit-exact.

use crate::dynamics::FlowState;
use crate::energetics::{EnergyLedgerEntry, LEDGER_COLUMNS};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::signals::SampledSignal;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"NLCHNS1\0";
const FIELD_COUNT: u32 = 3;

/// Encoded size of a snapshot at resolution `n`.
pub fn snapshot_size(n: usize) -> usize {
    8 + 4 + 4 + 8 + 8 + 3 * n * n * 8
}

/// Encode a state into the binary snapshot layout.
pub fn encode_snapshot(state: &FlowState) -> Vec<u8> {
    let n = state.phi.grid.resolution;
    let mut buf = Vec::with_capacity(snapshot_size(n));
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&FIELD_COUNT.to_le_bytes());
    buf.extend_from_slice(&state.phi.grid.side_length.to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    for plane in [&state.u.x.data, &state.u.y.data, &state.phi.data] {
        for v in plane.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Decode a snapshot, rejecting bad magic or truncated payloads.
pub fn decode_snapshot(bytes: &[u8]) -> Result<FlowState> {
    if bytes.len() < 32 {
        return Err(Error::SnapshotFormat(format!(
            "too short: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..8] != SNAPSHOT_MAGIC {
        return Err(Error::SnapshotFormat("bad magic".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let fields = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if fields != FIELD_COUNT {
        return Err(Error::SnapshotFormat(format!(
            "unsupported field count {fields}"
        )));
    }
    let side_length = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let t = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let expected = snapshot_size(n);
    if bytes.len() != expected {
        return Err(Error::SnapshotFormat(format!(
            "size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let grid = GridSpec::new(side_length, n)?;
    let mut offset = 32;
    let mut read_plane = || -> Vec<f64> {
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            data.push(f64::from_le_bytes(
                bytes[offset..offset + 8].try_into().unwrap(),
            ));
            offset += 8;
        }
        data
    };
    let ux = read_plane();
    let uy = read_plane();
    let phi = read_plane();
    Ok(FlowState {
        u: VectorField {
            x: ScalarField { grid, data: ux },
            y: ScalarField { grid, data: uy },
        },
        phi: ScalarField { grid, data: phi },
        t,
    })
}

pub fn write_snapshot(path: &Path, state: &FlowState) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_snapshot(state))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<FlowState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

/// Write the ledger CSV: a version header line, the column header, then
/// one row per entry (optionally decimated; the final row is always kept).
pub fn write_ledger_csv(
    path: &Path,
    ledger: &[EnergyLedgerEntry],
    stride: usize,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# nlchns {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(LEDGER_COLUMNS);
    out.push('\n');
    let stride = stride.max(1);
    for (i, row) in ledger.iter().enumerate() {
        if i % stride == 0 || i + 1 == ledger.len() {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Two-column `t,value` CSV for sampled signals.
pub fn write_signal_csv(path: &Path, signal: &SampledSignal) -> Result<()> {
    let mut out = String::from("t,value\n");
    for (i, v) in signal.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", signal.time(i), v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a two-column `t,value` CSV with a uniform time grid.
pub fn read_signal_csv(path: &Path) -> Result<SampledSignal> {
    let text = std::fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
            continue;
        }
        let mut parts = line.split(',');
        let t: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("bad signal row at line {}", lineno + 1)))?;
        let v: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("bad signal row at line {}", lineno + 1)))?;
        times.push(t);
        values.push(v);
    }
    if times.len() < 2 {
        return Err(Error::Config("signal file needs at least two rows".into()));
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
            return Err(Error::Config("signal time grid is not uniform".into()));
        }
    }
    SampledSignal::new(times[0], dt, values)
}
