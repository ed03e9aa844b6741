use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::renorm::SpectralMeasure;

use super::config::ExperimentConfig;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvOut {
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    /// Writes a row of floats.
    pub fn floats(&mut self, values: &[f64]) -> Result<()> {
        self.writer
            .write_record(values.iter().map(|v| fmt_f64(*v)))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_measure(path: &Path, nu: &SpectralMeasure) -> Result<()> {
    let mut out = CsvOut::create(path, &["lambda", "mass"])?;
    for a in nu.atoms() {
        out.floats(&[a.lambda, a.mass])?;
    }
    out.finish()
}

#[derive(Serialize)]
struct Sidecar<'a, S: Serialize> {
    experiment: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    summary: &'a S,
}

/// Writes `run.json` with the resolved config and a summary.
pub fn write_sidecar<S: Serialize>(dir: &Path, config: &ExperimentConfig, summary: &S) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sidecar = Sidecar {
        experiment: config.kind()?.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed(),
        config,
        summary,
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(dir.join("run.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn measure_csv_written() {
        let dir = tempfile::tempdir().unwrap();
        let nu = SpectralMeasure::from_pairs(&[(1.0, 1.0), (3.0, 3.0)]).unwrap();
        let path = dir.path().join("m.csv");
        write_measure(&path, &nu).unwrap();
        let back = crate::renorm::read_measure_csv(fs::File::open(&path).unwrap()).unwrap();
        assert_eq!(back, nu);
    }
}
