use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::header::{parse_header, LeadSpec, RecordHeader};
use super::signal::{adc_to_physical, decode_samples, encode_fmt16, SignalFormat};
use super::{Result, WfdbError};

/// A multi-lead record in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub header: RecordHeader,
    /// `[lead][sample]`, in each lead's physical units (normally mV).
    pub signal: Vec<Vec<f64>>,
}

impl EcgRecord {
    /// Builds a record whose leads are stored as format 16 in `<name>.dat`.
    pub fn new(
        name: impl Into<String>,
        fs: f64,
        lead_names: &[&str],
        gain: f64,
        signal: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let name = name.into();
        let file = format!("{name}.dat");
        let leads = lead_names
            .iter()
            .map(|l| LeadSpec::fmt16(file.clone(), *l, gain, 0))
            .collect();
        let record = Self {
            header: RecordHeader {
                record_name: name,
                n_sig: signal.len(),
                fs,
                sig_len: signal.first().map_or(0, Vec::len),
                leads,
            },
            signal,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.n_sig != h.leads.len() || h.n_sig != self.signal.len() {
            return Err(WfdbError::InvalidRecord(format!(
                "header declares {} signals, {} lead specs, signal has {} rows",
                h.n_sig,
                h.leads.len(),
                self.signal.len()
            )));
        }
        if !(h.fs > 0.0) {
            return Err(WfdbError::InvalidRecord(format!("sampling frequency {}", h.fs)));
        }
        for (i, row) in self.signal.iter().enumerate() {
            if row.len() != h.sig_len {
                return Err(WfdbError::InvalidRecord(format!(
                    "lead {i} has {} samples, header says {}",
                    row.len(),
                    h.sig_len
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(WfdbError::InvalidRecord(format!("lead {i} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Quantizes the physical signal back to ADC units with each lead's gain and baseline.
    pub fn to_adc(&self) -> Result<Vec<Vec<i32>>> {
        self.signal
            .iter()
            .zip(&self.header.leads)
            .enumerate()
            .map(|(lead, (row, spec))| {
                row.iter()
                    .map(|&v| {
                        let adc = (v * spec.gain + spec.baseline as f64).round();
                        if adc < i16::MIN as f64 || adc > i16::MAX as f64 {
                            Err(WfdbError::RangeOverflow { lead, value: adc })
                        } else {
                            Ok(adc as i32)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn n_leads(&self) -> usize {
        self.signal.len()
    }

    pub fn len(&self) -> usize {
        self.header.sig_len
    }

    pub fn is_empty(&self) -> bool {
        self.header.sig_len == 0
    }
}

/// Reads `<dir>/<name>.hea` and every signal file it references.
pub fn read_record(dir: &Path, name: &str) -> Result<EcgRecord> {
    let hea_path = dir.join(format!("{name}.hea"));
    let text = fs::read(&hea_path)
        .map_err(|_| WfdbError::MissingSignalFile(hea_path.display().to_string()))?;
    let mut header = parse_header(&text)?;

    // Leads sharing a file are interleaved in header order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, lead) in header.leads.iter().enumerate() {
        match groups.iter_mut().find(|(f, _)| *f == lead.file_name) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((lead.file_name.clone(), vec![i])),
        }
    }

    let mut adc: HashMap<usize, Vec<i32>> = HashMap::new();
    for (file, idx) in &groups {
        let first = &header.leads[idx[0]];
        if idx.iter().any(|&i| header.leads[i].fmt != first.fmt) {
            return Err(WfdbError::MalformedHeader(format!(
                "leads stored in {file} use different formats"
            )));
        }
        let path = dir.join(file);
        let raw = fs::read(&path)
            .map_err(|_| WfdbError::MissingSignalFile(path.display().to_string()))?;
        let raw = raw.get(first.byte_offset..).ok_or_else(|| {
            WfdbError::TruncatedData(format!("{file} is shorter than its byte offset"))
        })?;
        let channels = decode_samples(raw, first.fmt, idx.len())?;
        for (&i, ch) in idx.iter().zip(channels) {
            adc.insert(i, ch);
        }
    }

    let available = adc.values().map(Vec::len).min().unwrap_or(0);
    if header.sig_len == 0 {
        header.sig_len = available;
    } else if available < header.sig_len {
        return Err(WfdbError::TruncatedData(format!(
            "header declares {} samples but signal files hold {available}",
            header.sig_len
        )));
    }

    let signal = (0..header.n_sig)
        .map(|i| {
            let spec = &header.leads[i];
            adc[&i][..header.sig_len]
                .iter()
                .map(|&a| adc_to_physical(a, spec.gain, spec.baseline))
                .collect()
        })
        .collect();

    Ok(EcgRecord { header, signal })
}

/// Writes `<dir>/<record_name>.hea` and a single interleaved format-16 `<record_name>.dat`.
///
/// Gains, baselines, units and lead names are kept; the storage format and file name are
/// replaced. Returns the header as written.
pub fn write_record(record: &EcgRecord, dir: &Path) -> Result<RecordHeader> {
    record.validate()?;
    let adc = record.to_adc()?;
    let name = &record.header.record_name;
    let dat_name = format!("{name}.dat");

    let mut header = record.header.clone();
    for (spec, ch) in header.leads.iter_mut().zip(&adc) {
        spec.file_name = dat_name.clone();
        spec.fmt = SignalFormat::Fmt16;
        spec.byte_offset = 0;
        spec.adc_res = 16;
        spec.init_value = Some(ch.first().copied().unwrap_or(0));
        let sum: i64 = ch.iter().map(|&v| v as i64).sum();
        spec.checksum = Some(sum as i16 as i32);
        spec.block_size = 0;
    }

    fs::create_dir_all(dir)?;
    fs::write(dir.join(&dat_name), encode_fmt16(&adc)?)?;
    fs::write(dir.join(format!("{name}.hea")), header.to_hea())?;
    Ok(header)
}
