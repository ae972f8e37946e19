// SPDX-License-Identifier: Apache-2.0

//! Uniformly sampled multichannel waveforms and their CSV form.
//!
//! CSV layout: a header row starting with `time_s`, then one column per
//! channel named `<name>_<unit>` (`V_C11_V`, `I_C11_A`, `E_SRC_J`). Time is
//! written with 9 decimals, values with 6, `.` as decimal point and LF line
//! endings.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub unit: String,
    pub samples: Vec<f64>,
}

impl Channel {
    pub fn header(&self) -> String {
        format!("{}_{}", self.name, self.unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformRecord {
    pub sample_period: f64,
    /// Time of the first sample.
    pub t0: f64,
    pub channels: Vec<Channel>,
    pub config_digest: Option<String>,
}

impl WaveformRecord {
    pub fn new(sample_period: f64, t0: f64) -> Self {
        Self { sample_period, t0, channels: Vec::new(), config_digest: None }
    }

    pub fn add_channel(&mut self, name: impl Into<String>, unit: impl Into<String>, samples: Vec<f64>) {
        self.channels.push(Channel { name: name.into(), unit: unit.into(), samples });
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.sample_period
    }

    /// Channel lookup by bare name (`V_C11`) or header name (`V_C11_V`).
    pub fn channel(&self, name: &str) -> Result<&Channel, AnalysisError> {
        self.channels
            .iter()
            .find(|c| c.name == name || c.header() == name)
            .ok_or_else(|| AnalysisError::MissingChannel(name.to_string()))
    }

    pub fn samples(&self, name: &str) -> Result<&[f64], AnalysisError> {
        Ok(&self.channel(name)?.samples)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.sample_period > 0.0) {
            return Err(AnalysisError::InvalidArgument("sample period must be positive".into()));
        }
        let n = self.len();
        if let Some(c) = self.channels.iter().find(|c| c.samples.len() != n) {
            return Err(AnalysisError::InvalidArgument(format!(
                "channel {} has {} samples, expected {n}",
                c.name,
                c.samples.len()
            )));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = String::from("time_s");
        for c in &self.channels {
            line.push(',');
            line.push_str(&c.header());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for k in 0..self.len() {
            line.clear();
            let _ = write!(line, "{:.9}", self.time(k));
            for c in &self.channels {
                let _ = write!(line, ",{:.6}", c.samples[k]);
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Reads the CSV layout above. Row indices in errors are 1-based and
    /// count the header as row 1.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, AnalysisError> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(AnalysisError::Csv { row: 1, msg: e.to_string() }),
            None => return Err(AnalysisError::Csv { row: 1, msg: "empty file".into() }),
        };
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.first() != Some(&"time_s") {
            return Err(AnalysisError::Csv { row: 1, msg: "first column must be `time_s`".into() });
        }
        let mut channels: Vec<Channel> = cols[1..]
            .iter()
            .map(|h| {
                let (name, unit) = h.rsplit_once('_').unwrap_or((h, ""));
                Channel { name: name.to_string(), unit: unit.to_string(), samples: Vec::new() }
            })
            .collect();
        let mut times = Vec::new();
        for (idx, line) in lines.enumerate() {
            let row = idx + 2;
            let line = line.map_err(|e| AnalysisError::Csv { row, msg: e.to_string() })?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let parse = |s: Option<&str>, col: usize| -> Result<f64, AnalysisError> {
                let s = s.ok_or_else(|| AnalysisError::Csv { row, msg: format!("missing column {col}") })?;
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| AnalysisError::Csv { row, msg: format!("column {col}: bad number `{s}`") })
            };
            times.push(parse(fields.next(), 1)?);
            for (ci, ch) in channels.iter_mut().enumerate() {
                ch.samples.push(parse(fields.next(), ci + 2)?);
            }
            if fields.next().is_some() {
                return Err(AnalysisError::Csv { row, msg: "too many columns".into() });
            }
        }
        let sample_period = match times.len() {
            0 | 1 => return Err(AnalysisError::Csv { row: 2, msg: "need at least two data rows".into() }),
            n => (times[n - 1] - times[0]) / (n - 1) as f64,
        };
        if !(sample_period > 0.0) {
            return Err(AnalysisError::Csv { row: 3, msg: "time column must increase".into() });
        }
        for (k, t) in times.iter().enumerate() {
            let expect = times[0] + k as f64 * sample_period;
            if (t - expect).abs() > 0.01 * sample_period + 1e-9 {
                return Err(AnalysisError::Csv { row: k + 2, msg: "time column is not uniformly sampled".into() });
            }
        }
        Ok(Self { sample_period, t0: times[0], channels, config_digest: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_format() {
        let mut rec = WaveformRecord::new(1e-5, 1e-5);
        rec.add_channel("V_1", "V", vec![0.0, 200.123_456_7, -400.0]);
        rec.add_channel("I_C11", "A", vec![1.5, -0.25, 0.0]);
        let text = rec.to_csv_string();
        assert_eq!(
            text,
            "time_s,V_1_V,I_C11_A\n0.000010000,0.000000,1.500000\n0.000020000,200.123457,-0.250000\n0.000030000,-400.000000,0.000000\n"
        );
        let back = WaveformRecord::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.channel("V_1").unwrap().unit, "V");
        assert_eq!(back.samples("I_C11_A").unwrap(), &[1.5, -0.25, 0.0]);
        assert!((back.sample_period - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn malformed_rows_report_index() {
        let text = "time_s,V_1_V\n0.0,1\n0.1,x\n";
        assert_eq!(
            WaveformRecord::read_csv(text.as_bytes()).unwrap_err(),
            AnalysisError::Csv { row: 3, msg: "column 2: bad number `x`".into() }
        );
        let text = "t,V\n";
        assert!(matches!(WaveformRecord::read_csv(text.as_bytes()), Err(AnalysisError::Csv { row: 1, .. })));
        let text = "time_s,V_1_V\n0.0,1\n0.1\n";
        assert!(matches!(WaveformRecord::read_csv(text.as_bytes()), Err(AnalysisError::Csv { row: 3, .. })));
    }
}
