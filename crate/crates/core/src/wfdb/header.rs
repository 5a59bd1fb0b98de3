use super::signal::SignalFormat;
use super::{Result, WfdbError};

/// Sampling frequency assumed when the record line omits it.
pub const DEFAULT_FS: f64 = 250.0;
/// ADC gain (adu per physical unit) assumed when the signal line omits it or gives 0.
pub const DEFAULT_GAIN: f64 = 200.0;

const DEFAULT_UNITS: &str = "mV";

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_name: String,
    pub n_sig: usize,
    pub fs: f64,
    pub sig_len: usize,
    pub leads: Vec<LeadSpec>,
}

/// One signal line of a header, with WFDB defaults already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadSpec {
    pub file_name: String,
    pub fmt: SignalFormat,
    /// Bytes to skip at the start of the signal file.
    pub byte_offset: usize,
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_res: u32,
    pub adc_zero: i32,
    pub init_value: Option<i32>,
    pub checksum: Option<i32>,
    pub block_size: u32,
    pub lead_name: String,
}

impl LeadSpec {
    /// A format-16 lead with default resolution fields, as produced by the writer.
    pub fn fmt16(file_name: impl Into<String>, lead_name: impl Into<String>, gain: f64, baseline: i32) -> Self {
        Self {
            file_name: file_name.into(),
            fmt: SignalFormat::Fmt16,
            byte_offset: 0,
            gain,
            baseline,
            units: DEFAULT_UNITS.to_string(),
            adc_res: 16,
            adc_zero: 0,
            init_value: None,
            checksum: None,
            block_size: 0,
            lead_name: lead_name.into(),
        }
    }
}

impl RecordHeader {
    pub fn duration_s(&self) -> f64 {
        self.sig_len as f64 / self.fs
    }

    /// Renders the header in `.hea` syntax. Parsing the result yields an equal header.
    pub fn to_hea(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.record_name,
            self.n_sig,
            fmt_number(self.fs),
            self.sig_len
        );
        for lead in &self.leads {
            let mut fmt = lead.fmt.code().to_string();
            if lead.byte_offset > 0 {
                fmt.push_str(&format!("+{}", lead.byte_offset));
            }
            out.push_str(&format!(
                "{} {} {}({})/{} {} {} {} {} {}",
                lead.file_name,
                fmt,
                fmt_number(lead.gain),
                lead.baseline,
                lead.units,
                lead.adc_res,
                lead.adc_zero,
                lead.init_value.unwrap_or(0),
                lead.checksum.unwrap_or(0),
                lead.block_size,
            ));
            if !lead.lead_name.is_empty() {
                out.push(' ');
                out.push_str(&lead.lead_name);
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Parses the text of a `.hea` file.
pub fn parse_header(text: &[u8]) -> Result<RecordHeader> {
    let text = std::str::from_utf8(text)
        .map_err(|e| WfdbError::MalformedHeader(format!("not valid UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));

    let record_line = lines
        .next()
        .ok_or_else(|| WfdbError::MalformedHeader("empty header".into()))?;
    let (record_name, n_sig, fs, sig_len) = parse_record_line(record_line)?;

    let leads = lines
        .take(n_sig)
        .map(parse_signal_line)
        .collect::<Result<Vec<_>>>()?;
    if leads.len() != n_sig {
        return Err(WfdbError::MalformedHeader(format!(
            "record line declares {n_sig} signals but {} signal lines follow",
            leads.len()
        )));
    }

    Ok(RecordHeader {
        record_name,
        n_sig,
        fs,
        sig_len,
        leads,
    })
}

fn parse_record_line(line: &str) -> Result<(String, usize, f64, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(WfdbError::MalformedHeader(format!(
            "record line needs at least a name and a signal count: {line:?}"
        )));
    }
    let name = fields[0];
    if name.contains('/') {
        return Err(WfdbError::MalformedHeader(format!(
            "multi-segment record {name:?} is not supported"
        )));
    }
    let n_sig = parse_num::<usize>(fields[1], "signal count")?;

    // fs[/counter_freq[(base_counter)]]
    let fs = match fields.get(2) {
        Some(tok) => {
            let fs_tok = tok.split('/').next().unwrap_or(tok);
            let fs = parse_num::<f64>(fs_tok, "sampling frequency")?;
            if fs > 0.0 {
                fs
            } else if fs == 0.0 {
                DEFAULT_FS
            } else {
                return Err(WfdbError::MalformedHeader(format!(
                    "negative sampling frequency {fs}"
                )));
            }
        }
        None => DEFAULT_FS,
    };
    let sig_len = match fields.get(3) {
        Some(tok) => parse_num::<usize>(tok, "signal length")?,
        None => 0,
    };
    Ok((name.to_string(), n_sig, fs, sig_len))
}

fn parse_signal_line(line: &str) -> Result<LeadSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(WfdbError::MalformedHeader(format!(
            "signal line needs a file name and a format: {line:?}"
        )));
    }
    let file_name = fields[0].to_string();
    let (fmt, byte_offset) = parse_format_spec(fields[1])?;

    let adc_zero = match fields.get(4) {
        Some(tok) => parse_num::<i32>(tok, "ADC zero")?,
        None => 0,
    };

    // gain[(baseline)][/units]
    let (gain, baseline, units) = match fields.get(2) {
        Some(tok) => {
            let (gain_part, units) = match tok.split_once('/') {
                Some((g, u)) => (g, u.to_string()),
                None => (*tok, DEFAULT_UNITS.to_string()),
            };
            let (gain_str, baseline) = match gain_part.split_once('(') {
                Some((g, rest)) => {
                    let b = rest.strip_suffix(')').ok_or_else(|| {
                        WfdbError::MalformedHeader(format!("unterminated baseline in {tok:?}"))
                    })?;
                    (g, parse_num::<i32>(b, "baseline")?)
                }
                None => (gain_part, adc_zero),
            };
            let gain = parse_num::<f64>(gain_str, "ADC gain")?;
            let units = if units.is_empty() { DEFAULT_UNITS.to_string() } else { units };
            (gain, baseline, units)
        }
        None => (DEFAULT_GAIN, adc_zero, DEFAULT_UNITS.to_string()),
    };
    let gain = if gain == 0.0 { DEFAULT_GAIN } else { gain };

    let adc_res = match fields.get(3) {
        Some(tok) => parse_num::<u32>(tok, "ADC resolution")?,
        None => 0,
    };
    let init_value = fields
        .get(5)
        .map(|t| parse_num::<i32>(t, "initial value"))
        .transpose()?;
    let checksum = fields
        .get(6)
        .map(|t| parse_num::<i32>(t, "checksum"))
        .transpose()?;
    let block_size = match fields.get(7) {
        Some(tok) => parse_num::<u32>(tok, "block size")?,
        None => 0,
    };
    let lead_name = fields.get(8..).map(|d| d.join(" ")).unwrap_or_default();

    Ok(LeadSpec {
        file_name,
        fmt,
        byte_offset,
        gain,
        baseline,
        units,
        adc_res,
        adc_zero,
        init_value,
        checksum,
        block_size,
        lead_name,
    })
}

/// `format[xsamples_per_frame][:skew][+byte_offset]`
fn parse_format_spec(tok: &str) -> Result<(SignalFormat, usize)> {
    let digits_end = tok
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(tok.len());
    let code = parse_num::<u32>(&tok[..digits_end], "signal format")?;
    let fmt = SignalFormat::from_code(code)?;

    let mut rest = &tok[digits_end..];
    let mut byte_offset = 0;
    if let Some(r) = rest.strip_prefix('x') {
        let end = r.find(|c: char| !c.is_ascii_digit()).unwrap_or(r.len());
        let spf = parse_num::<u32>(&r[..end], "samples per frame")?;
        if spf != 1 {
            return Err(WfdbError::UnsupportedFormat(format!(
                "{tok} ({spf} samples per frame)"
            )));
        }
        rest = &r[end..];
    }
    if let Some(r) = rest.strip_prefix(':') {
        let end = r.find(|c: char| !c.is_ascii_digit()).unwrap_or(r.len());
        parse_num::<u32>(&r[..end], "skew")?;
        rest = &r[end..];
    }
    if let Some(r) = rest.strip_prefix('+') {
        byte_offset = parse_num::<usize>(r, "byte offset")?;
        rest = "";
    }
    if !rest.is_empty() {
        return Err(WfdbError::MalformedHeader(format!(
            "trailing characters in format field {tok:?}"
        )));
    }
    Ok((fmt, byte_offset))
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| WfdbError::MalformedHeader(format!("invalid {what}: {tok:?}")))
}
