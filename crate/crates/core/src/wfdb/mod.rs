//! Reader and minimal writer for WFDB records.
//!
//! A record is a `.hea` text header plus one or more binary signal files.
//! Beat and rhythm labels live in MIT-format annotation files (`.atr`, `.qrs`, ...).
//! Supported signal formats are 16, 212 and 80.

mod annotation;
mod header;
mod record;
mod signal;

pub use annotation::{
    encode_annotations, parse_annotations, standard_symbol_table, Annotation, AnnotationMode,
    AnnotationSet, SymbolTable,
};
pub use header::{parse_header, LeadSpec, RecordHeader, DEFAULT_FS, DEFAULT_GAIN};
pub use record::{read_record, write_record, EcgRecord};
pub use signal::{adc_to_physical, decode_samples, encode_fmt16, SignalFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported signal format {0}")]
    UnsupportedFormat(String),
    #[error("truncated data: {0}")]
    TruncatedData(String),
    #[error("missing signal file {0}")]
    MissingSignalFile(String),
    #[error("value {value} adu in lead {lead} does not fit in 16 bits")]
    RangeOverflow { lead: usize, value: f64 },
    #[error("unknown annotation code {code} at byte {offset}")]
    UnknownCode { code: u8, offset: usize },
    #[error("record is inconsistent: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WfdbError>;
