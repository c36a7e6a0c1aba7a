//! Labeled multivariate telemetry and its CSV form.
//!
//! The CSV layout is a header row `t,<channel names...>,label` followed by one
//! row per timestamp: integer seconds, one decimal per channel, and the class.
//! Decimals are written with Rust's shortest round-trip formatting, so a frame
//! survives `write_csv` then `read_csv` unchanged.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLASS_NORMAL: usize = 0;
pub const CLASS_ABNORMAL: usize = 1;
pub const CLASS_DOUBTFUL: usize = 2;

/// Upper bound on class indices accepted from files.
pub const MAX_CLASSES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub timestamps: Vec<i64>,
    /// `T × n` channel readings.
    pub channels: Tensor,
    pub labels: Vec<usize>,
    pub channel_names: Vec<String>,
}

impl TimeSeriesFrame {
    pub fn new(timestamps: Vec<i64>, channels: Tensor, labels: Vec<usize>, channel_names: Vec<String>) -> Result<Self> {
        let (t, n) = channels.dims2()?;
        if timestamps.len() != t || labels.len() != t {
            return Err(Error::Shape(format!(
                "{} timestamps and {} labels for {t} rows",
                timestamps.len(),
                labels.len()
            )));
        }
        if channel_names.len() != n {
            return Err(Error::Shape(format!(
                "{} channel names for {n} channels",
                channel_names.len()
            )));
        }
        if !channels.is_finite() {
            return Err(Error::Numeric("frame contains non-finite readings".into()));
        }
        Ok(TimeSeriesFrame {
            timestamps,
            channels,
            labels,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Number of distinct classes implied by the largest label.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            if l < n_classes {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Seconds between consecutive samples, if the frame has at least two rows.
    pub fn sample_interval(&self) -> Option<i64> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some(b - a),
            _ => None,
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        TimeSeriesFrame::new(
            self.timestamps.clone(),
            self.channels.clone(),
            labels,
            self.channel_names.clone(),
        )
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(self.n_channels() + 2);
        header.push("t".to_string());
        header.extend(self.channel_names.iter().cloned());
        header.push("label".to_string());
        w.write_record(&header).map_err(csv_err)?;
        let n = self.n_channels();
        let mut record = Vec::with_capacity(n + 2);
        for (i, (&t, &label)) in self.timestamps.iter().zip(&self.labels).enumerate() {
            record.clear();
            record.push(t.to_string());
            let row = &self.channels.data()[i * n..(i + 1) * n];
            record.extend(row.iter().map(|v| format!("{v}")));
            record.push(label.to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(format!("flushing CSV: {e}")))?;
        Ok(())
    }

    /// Parses the CSV form. Any malformed input is reported as an error.
    pub fn read_csv_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(input);
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.len() < 2 || &header[0] != "t" || &header[header.len() - 1] != "label" {
            return Err(Error::Format("header must start with `t` and end with `label`".into()));
        }
        let names: Vec<String> = header
            .iter()
            .skip(1)
            .take(header.len() - 2)
            .map(str::to_string)
            .collect();
        let n = names.len();
        let mut timestamps = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let line = row + 2;
            timestamps.push(
                record[0]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Format(format!("line {line}: bad timestamp {:?}: {e}", &record[0])))?,
            );
            for field in record.iter().skip(1).take(n) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("line {line}: bad value {field:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(Error::Format(format!("line {line}: non-finite value")));
                }
                values.push(v);
            }
            let raw = &record[n + 1];
            let label: usize = raw
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {line}: bad label {raw:?}: {e}")))?;
            if label >= MAX_CLASSES {
                return Err(Error::Format(format!("line {line}: label {label} out of range")));
            }
            labels.push(label);
        }
        let rows = labels.len();
        TimeSeriesFrame::new(timestamps, Tensor::new(vec![rows, n], values)?, labels, names)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}

pub fn write_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    frame.write_csv_to(&mut buf)?;
    buf.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TimeSeriesFrame::read_csv_from(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TimeSeriesFrame {
        let channels = Tensor::from_rows(&[vec![0.1, -2.5e-7], vec![1.0 / 3.0, 1e21], vec![5.0, 0.0]]).unwrap();
        TimeSeriesFrame::new(vec![0, 20, 40], channels, vec![0, 2, 1], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn header_lists_channels_then_label() {
        let mut buf = Vec::new();
        tiny().write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,a,b,label");
    }

    #[test]
    fn round_trip_is_exact() {
        let f = tiny();
        let mut buf = Vec::new();
        f.write_csv_to(&mut buf).unwrap();
        assert_eq!(TimeSeriesFrame::read_csv_from(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn empty_frame_is_header_only() {
        let f = TimeSeriesFrame::new(vec![], Tensor::zeros(&[0, 2]), vec![], vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        f.write_csv_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t,a,b,label\n");
        assert_eq!(TimeSeriesFrame::read_csv_from(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for text in [
            "",
            "x,a,label\n0,1,0\n",
            "t,a,label\n0,1\n",
            "t,a,label\n0,abc,0\n",
            "t,a,label\n0,NaN,0\n",
            "t,a,label\n0.5,1,0\n",
            "t,a,label\n0,1,-1\n",
            "t,a,label\n0,1,9999\n",
        ] {
            assert!(
                TimeSeriesFrame::read_csv_from(text.as_bytes()).is_err(),
                "accepted {text:?}"
            );
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_csv("/definitely/not/here.csv").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.csv"));
    }
}
