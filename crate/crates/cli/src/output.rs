use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{Command, RunConfig};

/// Echoed as the first line of every output.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub flags: &'a RunConfig,
    pub config_file: Option<&'a RunConfig>,
    pub data: Option<DataSummary>,
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub n: usize,
    pub failures: usize,
    pub horizon: f64,
}

impl<'a> Provenance<'a> {
    pub fn new(command: Command, config: &'a RunConfig, flags: &'a RunConfig, file: Option<&'a RunConfig>) -> Self {
        Self {
            tool: "dynhaz",
            version: env!("CARGO_PKG_VERSION"),
            command: command.name(),
            config,
            flags,
            config_file: file,
            data: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn line(&self) -> Result<String, serde_json::Error> {
        Ok(format!("# {}\n", serde_json::to_string(self)?))
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// CSV text with a provenance comment line in front.
pub fn csv_text(provenance: &str, header: &[String], rows: &[Vec<String>]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(provenance.as_bytes().to_vec());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Writes through a temporary file in the target directory, or to stdout.
pub fn write_atomic(path: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        return out.flush();
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_comes_first() {
        let text = csv_text("# {}\n", &["a".into(), "b".into()], &[vec!["1".into(), "".into()]]).unwrap();
        assert_eq!(String::from_utf8(text).unwrap(), "# {}\na,b\n1,\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(Some(&p), b"one").unwrap();
        write_atomic(Some(&p), b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn special_floats() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_opt(None), "");
        assert_eq!(fmt_f64(0.5), "0.5");
    }
}
