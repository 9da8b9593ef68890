//! Report serialization: a run manifest plus deterministic JSON.
//!
//! Reports must be byte-identical across runs with the same inputs and
//! seeds (the `duration_seconds` field excepted), so floats are written
//! with a fixed 17-significant-digit format and maps use sorted keys.

use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance block embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            config,
            seeds: Vec::new(),
            duration_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        let bytes = std::fs::read(path)?;
        let hash = Sha256::digest(&bytes);
        let sha256 = hash.iter().map(|b| format!("{:02x}", b)).collect();
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }
}

/// Pretty JSON with every float rendered at 17 significant digits, so that
/// values round-trip exactly and identical payloads serialize identically.
pub fn to_deterministic_json<T: Serialize>(value: &T) -> io::Result<String> {
    let mut buf = Vec::new();
    let mut serializer = Serializer::with_formatter(&mut buf, SigDigitFormatter::new());
    value
        .serialize(&mut serializer)
        .map_err(|e| io::Error::other(format!("report serialization failed: {}", e)))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| io::Error::other(e.to_string()))
}

struct SigDigitFormatter {
    inner: PrettyFormatter<'static>,
}

impl SigDigitFormatter {
    fn new() -> Self {
        Self {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        // 1 leading + 16 fractional digits = 17 significant digits
        write!(writer, "{:.16e}", value)
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.8e}", value)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}
