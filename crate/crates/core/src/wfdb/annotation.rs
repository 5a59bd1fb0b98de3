use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Result, WfdbError};

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

/// Symbol used for codes missing from the table in lenient mode.
pub const UNKNOWN_SYMBOL: &str = "?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample: u64,
    pub symbol: String,
    pub code: u8,
    pub subtype: i32,
    pub chan: u32,
    pub num: i32,
    pub aux: Option<Vec<u8>>,
}

impl Annotation {
    pub fn aux_text(&self) -> Option<String> {
        self.aux.as_ref().map(|a| String::from_utf8_lossy(a).into_owned())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    /// Sorted by `sample`, non-decreasing.
    pub entries: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Occurrence count per symbol, in first-seen order.
    pub fn symbol_counts(&self) -> Vec<(String, usize)> {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for a in &self.entries {
            match counts.iter_mut().find(|(s, _)| *s == a.symbol) {
                Some((_, n)) => *n += 1,
                None => counts.push((a.symbol.clone(), 1)),
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotationMode {
    /// Codes absent from the symbol table decode as `"?"`.
    #[default]
    Lenient,
    /// Codes absent from the symbol table are an error.
    Strict,
}

/// Mapping from MIT annotation codes (1..=58) to mnemonic symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    map: HashMap<u8, String>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self { map: HashMap::new() }
    }

    pub fn insert(&mut self, code: u8, symbol: impl Into<String>) -> &mut Self {
        self.map.insert(code, symbol.into());
        self
    }

    pub fn symbol(&self, code: u8) -> Option<&str> {
        self.map.get(&code).map(String::as_str)
    }

    pub fn code(&self, symbol: &str) -> Option<u8> {
        self.map
            .iter()
            .filter(|(_, s)| *s == symbol)
            .map(|(&c, _)| c)
            .min()
    }
}

impl Default for SymbolTable {
    fn default() -> Self {
        standard_symbol_table()
    }
}

/// The MIT/WFDB standard code table (`ecgcodes.h`).
pub fn standard_symbol_table() -> SymbolTable {
    const CODES: &[(u8, &str)] = &[
        (0, " "),
        (1, "N"),
        (2, "L"),
        (3, "R"),
        (4, "a"),
        (5, "V"),
        (6, "F"),
        (7, "J"),
        (8, "A"),
        (9, "S"),
        (10, "E"),
        (11, "j"),
        (12, "/"),
        (13, "Q"),
        (14, "~"),
        (16, "|"),
        (18, "s"),
        (19, "T"),
        (20, "*"),
        (21, "D"),
        (22, "\""),
        (23, "="),
        (24, "p"),
        (25, "B"),
        (26, "^"),
        (27, "t"),
        (28, "+"),
        (29, "u"),
        (30, "?"),
        (31, "!"),
        (32, "["),
        (33, "]"),
        (34, "e"),
        (35, "n"),
        (36, "@"),
        (37, "x"),
        (38, "f"),
        (39, "("),
        (40, ")"),
        (41, "r"),
    ];
    let mut t = SymbolTable::new();
    for &(c, s) in CODES {
        t.insert(c, s);
    }
    t
}

fn read_word(raw: &[u8], pos: usize) -> Result<u16> {
    raw.get(pos..pos + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| WfdbError::TruncatedData(format!("annotation stream ends at byte {pos}")))
}

/// Decodes an MIT-format annotation byte stream.
///
/// Each 16-bit little-endian word carries a 6-bit code and a 10-bit time increment.
/// `SKIP` precedes the annotation it shifts; `SUB`, `CHN`, `NUM` and `AUX` follow the
/// annotation they modify. `chan` and `num` persist until changed, as in the WFDB library.
pub fn parse_annotations(raw: &[u8], table: &SymbolTable, mode: AnnotationMode) -> Result<AnnotationSet> {
    let mut entries: Vec<Annotation> = Vec::new();
    let mut pos = 0usize;
    let mut time: i64 = 0;
    let mut chan = 0u32;
    let mut num = 0i32;

    while pos < raw.len() {
        if raw.len() - pos == 1 {
            return Err(WfdbError::TruncatedData(format!("odd trailing byte at {pos}")));
        }
        let word = read_word(raw, pos)?;
        let code = (word >> 10) as u8;
        let data = word & 0x03FF;
        let word_pos = pos;
        pos += 2;

        match code {
            0 if data == 0 => break,
            SKIP => {
                let b = raw.get(pos..pos + 4).ok_or_else(|| {
                    WfdbError::TruncatedData(format!("SKIP at byte {word_pos} lacks its interval"))
                })?;
                // PDP-11 long: high word first, each word little-endian.
                let skip = i32::from_le_bytes([b[2], b[3], b[0], b[1]]);
                time += skip as i64;
                pos += 4;
            }
            NUM | SUB | CHN | AUX => {
                let last = entries.last_mut().ok_or_else(|| {
                    WfdbError::TruncatedData(format!(
                        "modifier code {code} at byte {word_pos} precedes any annotation"
                    ))
                })?;
                match code {
                    NUM => {
                        num = sign_extend_10(data);
                        last.num = num;
                    }
                    SUB => last.subtype = sign_extend_10(data),
                    CHN => {
                        chan = data as u32;
                        last.chan = chan;
                    }
                    _ => {
                        let len = data as usize;
                        let bytes = raw.get(pos..pos + len).ok_or_else(|| {
                            WfdbError::TruncatedData(format!(
                                "AUX at byte {word_pos} declares {len} bytes past the end"
                            ))
                        })?;
                        last.aux = Some(bytes.to_vec());
                        pos += len + (len & 1);
                    }
                }
            }
            _ => {
                time += data as i64;
                if time < 0 {
                    return Err(WfdbError::TruncatedData(format!(
                        "negative annotation time at byte {word_pos}"
                    )));
                }
                let symbol = match table.symbol(code) {
                    Some(s) => s.to_string(),
                    None => match mode {
                        AnnotationMode::Lenient => UNKNOWN_SYMBOL.to_string(),
                        AnnotationMode::Strict => {
                            return Err(WfdbError::UnknownCode { code, offset: word_pos })
                        }
                    },
                };
                entries.push(Annotation {
                    sample: time as u64,
                    symbol,
                    code,
                    subtype: 0,
                    chan,
                    num,
                    aux: None,
                });
            }
        }
    }
    Ok(AnnotationSet { entries })
}

fn sign_extend_10(v: u16) -> i32 {
    let v = v as i32;
    if v & 0x200 != 0 {
        v - 0x400
    } else {
        v
    }
}

fn push_word(out: &mut Vec<u8>, code: u8, data: u16) {
    out.extend_from_slice(&(((code as u16) << 10) | (data & 0x03FF)).to_le_bytes());
}

/// Encodes annotations in MIT format, terminated by a zero word.
///
/// Entries must be sorted by sample. Codes are taken from `Annotation::code`.
pub fn encode_annotations(set: &AnnotationSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut time = 0u64;
    let mut chan = 0u32;
    let mut num = 0i32;
    for a in &set.entries {
        if a.sample < time {
            return Err(WfdbError::InvalidRecord("annotations are not sorted".into()));
        }
        if a.code == 0 || a.code >= SKIP {
            return Err(WfdbError::InvalidRecord(format!("cannot encode code {}", a.code)));
        }
        let mut delta = a.sample - time;
        if delta > 0x03FF {
            let skip = i32::try_from(delta)
                .map_err(|_| WfdbError::InvalidRecord("annotation interval too large".into()))?;
            push_word(&mut out, SKIP, 0);
            let b = skip.to_le_bytes();
            out.extend_from_slice(&[b[2], b[3], b[0], b[1]]);
            delta = 0;
        }
        push_word(&mut out, a.code, delta as u16);
        time = a.sample;
        if a.subtype != 0 {
            push_word(&mut out, SUB, (a.subtype & 0x3FF) as u16);
        }
        if a.chan != chan {
            push_word(&mut out, CHN, a.chan as u16);
            chan = a.chan;
        }
        if a.num != num {
            push_word(&mut out, NUM, (a.num & 0x3FF) as u16);
            num = a.num;
        }
        if let Some(aux) = &a.aux {
            if aux.len() > 0x03FF {
                return Err(WfdbError::InvalidRecord("aux string too long".into()));
            }
            push_word(&mut out, AUX, aux.len() as u16);
            out.extend_from_slice(aux);
            if aux.len() % 2 == 1 {
                out.push(0);
            }
        }
    }
    out.extend_from_slice(&[0, 0]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn word(code: u8, data: u16) -> [u8; 2] {
        (((code as u16) << 10) | data).to_le_bytes()
    }

    fn parse(raw: &[u8]) -> AnnotationSet {
        parse_annotations(raw, &standard_symbol_table(), AnnotationMode::Lenient).unwrap()
    }

    #[test]
    fn two_normal_beats() {
        let mut raw = Vec::new();
        raw.extend_from_slice(&word(1, 100));
        raw.extend_from_slice(&word(1, 150));
        raw.extend_from_slice(&[0, 0]);
        let set = parse(&raw);
        let samples: Vec<u64> = set.entries.iter().map(|a| a.sample).collect();
        assert_eq!(samples, vec![100, 250]);
        assert!(set.entries.iter().all(|a| a.symbol == "N"));
    }

    #[test]
    fn empty_stream() {
        assert!(parse(&[0, 0]).is_empty());
        assert!(parse(&[]).is_empty());
    }

    #[test]
    fn odd_length_aux_is_padded() {
        let mut raw = Vec::new();
        raw.extend_from_slice(&word(28, 10));
        raw.extend_from_slice(&word(AUX, 5));
        raw.extend_from_slice(b"(AFIB\0");
        raw.extend_from_slice(&word(5, 3));
        raw.extend_from_slice(&[0, 0]);
        let set = parse(&raw);
        assert_eq!(set.len(), 2);
        assert_eq!(set.entries[0].aux.as_deref(), Some(&b"(AFIB"[..]));
        assert_eq!(set.entries[0].symbol, "+");
        assert_eq!(set.entries[1].symbol, "V");
        assert_eq!(set.entries[1].sample, 13);
        assert_eq!(set.entries[1].aux, None);
    }

    #[test]
    fn skip_chn_num_sub() {
        let mut raw = Vec::new();
        raw.extend_from_slice(&word(SKIP, 0));
        // 70000 = 0x0001_1170: high word 0x0001, low word 0x1170
        raw.extend_from_slice(&[0x01, 0x00, 0x70, 0x11]);
        raw.extend_from_slice(&word(8, 5));
        raw.extend_from_slice(&word(CHN, 1));
        raw.extend_from_slice(&word(NUM, 0x3FF));
        raw.extend_from_slice(&word(SUB, 2));
        raw.extend_from_slice(&word(1, 1));
        raw.extend_from_slice(&[0, 0]);
        let set = parse(&raw);
        assert_eq!(set.entries[0].sample, 70_005);
        assert_eq!(set.entries[0].symbol, "A");
        assert_eq!(set.entries[0].chan, 1);
        assert_eq!(set.entries[0].num, -1);
        assert_eq!(set.entries[0].subtype, 2);
        // chan and num carry over, subtype does not
        assert_eq!(set.entries[1].chan, 1);
        assert_eq!(set.entries[1].num, -1);
        assert_eq!(set.entries[1].subtype, 0);
    }

    #[test]
    fn unknown_codes() {
        let mut raw = Vec::new();
        raw.extend_from_slice(&word(50, 4));
        raw.extend_from_slice(&[0, 0]);
        assert_eq!(parse(&raw).entries[0].symbol, "?");
        assert!(matches!(
            parse_annotations(&raw, &standard_symbol_table(), AnnotationMode::Strict),
            Err(WfdbError::UnknownCode { code: 50, offset: 0 })
        ));
        let mut custom = standard_symbol_table();
        custom.insert(50, "VENDOR");
        let set = parse_annotations(&raw, &custom, AnnotationMode::Strict).unwrap();
        assert_eq!(set.entries[0].symbol, "VENDOR");
    }

    #[test]
    fn truncation() {
        let table = standard_symbol_table();
        let m = AnnotationMode::Lenient;
        assert!(matches!(parse_annotations(&[1], &table, m), Err(WfdbError::TruncatedData(_))));
        let mut raw = word(1, 1).to_vec();
        raw.extend_from_slice(&word(AUX, 4));
        raw.extend_from_slice(b"ab");
        assert!(matches!(parse_annotations(&raw, &table, m), Err(WfdbError::TruncatedData(_))));
        let mut raw = word(SKIP, 0).to_vec();
        raw.extend_from_slice(&[0, 0]);
        assert!(matches!(parse_annotations(&raw, &table, m), Err(WfdbError::TruncatedData(_))));
    }

    proptest! {
        #[test]
        fn encode_parse_round_trip(
            items in prop::collection::vec((0u64..5000, 1u8..42, prop::option::of("[A-Z(]{1,7}")), 0..40)
        ) {
            let table = standard_symbol_table();
            let mut t = 0;
            let entries: Vec<Annotation> = items
                .into_iter()
                .filter(|(_, c, _)| table.symbol(*c).is_some())
                .map(|(d, code, aux)| {
                    t += d;
                    Annotation {
                        sample: t,
                        symbol: table.symbol(code).unwrap().to_string(),
                        code,
                        subtype: 0,
                        chan: 0,
                        num: 0,
                        aux: aux.map(String::into_bytes),
                    }
                })
                .collect();
            let set = AnnotationSet { entries };
            let back = parse(&encode_annotations(&set).unwrap());
            prop_assert!(back.entries.windows(2).all(|w| w[0].sample <= w[1].sample));
            prop_assert_eq!(back, set);
        }
    }
}
