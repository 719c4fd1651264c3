//! Corpus container format.
//!
//! A textual header terminated by an `end_header` line, followed by binary
//! records. The header is
//!
//! ```text
//! UWBNLOS-CORPUS
//! version=1
//! records=<count>
//! <optional CorpusConfig echo, one key=value per line>
//! end_header
//! ```
//!
//! Each record is little-endian: `state: u8` (0 = LOS, 1 = NLOS),
//! `sample_rate: f64`, `t0: f64`, `distance: f64`, `bias: f64`,
//! `n_samples: u64`, then `n_samples` `f64` samples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelState, CorpusConfig, WaveformRecord};
use crate::config::KvConfig;
use crate::error::{parse_err, Error, Location, Result};

pub const CORPUS_MAGIC: &str = "UWBNLOS-CORPUS";
pub const CORPUS_VERSION: u32 = 1;

pub fn write_corpus<W: Write>(
    mut out: W,
    records: &[WaveformRecord],
    config: Option<&CorpusConfig>,
) -> Result<()> {
    writeln!(out, "{CORPUS_MAGIC}")?;
    writeln!(out, "version={CORPUS_VERSION}")?;
    writeln!(out, "records={}", records.len())?;
    if let Some(cfg) = config {
        for line in cfg.to_kv_lines() {
            writeln!(out, "{line}")?;
        }
    }
    writeln!(out, "end_header")?;
    for r in records {
        out.write_all(&[match r.state {
            ChannelState::Los => 0u8,
            ChannelState::Nlos => 1u8,
        }])?;
        for v in [r.sample_rate, r.t0, r.distance, r.bias] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(r.samples.len() as u64).to_le_bytes())?;
        for s in &r.samples {
            out.write_all(&s.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(
    path: impl AsRef<Path>,
    records: &[WaveformRecord],
    config: Option<&CorpusConfig>,
) -> Result<()> {
    write_corpus(BufWriter::new(File::create(path)?), records, config)
}

/// Reads a corpus, returning the echoed config (if any) and the records.
pub fn read_corpus<R: Read>(input: R) -> Result<(Option<CorpusConfig>, Vec<WaveformRecord>)> {
    let mut input = BufReader::new(input);
    let mut line_no = 0usize;
    let mut next_line = |input: &mut BufReader<R>| -> Result<(usize, String)> {
        let mut buf = Vec::new();
        line_no += 1;
        let n = input.read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Err(parse_err(Location::Line(line_no), "unexpected end of header"));
        }
        let text = String::from_utf8(buf)
            .map_err(|_| parse_err(Location::Line(line_no), "header is not UTF-8"))?;
        Ok((line_no, text.trim_end_matches(['\n', '\r']).to_string()))
    };

    let (_, magic) = next_line(&mut input)?;
    if magic != CORPUS_MAGIC {
        return Err(parse_err(Location::Header, format!("bad magic `{magic}`")));
    }
    let (ln, version) = next_line(&mut input)?;
    let version: u32 = version
        .strip_prefix("version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(Location::Line(ln), "expected `version=<n>`"))?;
    if version != CORPUS_VERSION {
        return Err(Error::Version {
            what: "corpus",
            found: version,
            expected: CORPUS_VERSION,
        });
    }
    let (ln, count) = next_line(&mut input)?;
    let count: usize = count
        .strip_prefix("records=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(Location::Line(ln), "expected `records=<n>`"))?;

    let mut echo = String::new();
    loop {
        let (_, line) = next_line(&mut input)?;
        if line == "end_header" {
            break;
        }
        echo.push_str(&line);
        echo.push('\n');
    }
    let config = if echo.trim().is_empty() {
        None
    } else {
        let mut kv = KvConfig::parse(&echo)?;
        let cfg = CorpusConfig::from_kv(&mut kv)?;
        kv.finish()?;
        Some(cfg)
    };

    let mut records = Vec::with_capacity(count.min(1 << 16));
    for idx in 0..count {
        let truncated = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                parse_err(Location::Record(idx), "truncated record")
            } else {
                Error::Io(e)
            }
        };
        let mut state = [0u8; 1];
        input.read_exact(&mut state).map_err(truncated)?;
        let state = match state[0] {
            0 => ChannelState::Los,
            1 => ChannelState::Nlos,
            other => {
                return Err(parse_err(
                    Location::Record(idx),
                    format!("invalid channel state byte {other}"),
                ))
            }
        };
        let mut word = [0u8; 8];
        let mut read_f64 = |input: &mut BufReader<R>| -> Result<f64> {
            input.read_exact(&mut word).map_err(truncated)?;
            Ok(f64::from_le_bytes(word))
        };
        let sample_rate = read_f64(&mut input)?;
        let t0 = read_f64(&mut input)?;
        let distance = read_f64(&mut input)?;
        let bias = read_f64(&mut input)?;
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(truncated)?;
        let len = u64::from_le_bytes(len) as usize;
        if len == 0 {
            return Err(parse_err(Location::Record(idx), "record has no samples"));
        }
        let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| {
            parse_err(Location::Record(idx), "sample count overflows")
        })?];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(WaveformRecord {
            samples,
            sample_rate,
            t0,
            distance,
            bias,
            state,
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(parse_err(
            Location::Record(count),
            "trailing bytes after the declared record count",
        ));
    }
    Ok((config, records))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Option<CorpusConfig>, Vec<WaveformRecord>)> {
    read_corpus(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_los: 3,
            n_nlos: 4,
            duration: 40e-9,
            ..CorpusConfig::default()
        }
    }

    fn encode(records: &[WaveformRecord], cfg: Option<&CorpusConfig>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_corpus(&mut buf, records, cfg).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = small();
        let records = generate_corpus(&cfg).unwrap();
        let (echo, back) = read_corpus(&encode(&records, Some(&cfg))[..]).unwrap();
        assert_eq!(echo, Some(cfg));
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.state, b.state);
            assert_eq!(a.distance.to_bits(), b.distance.to_bits());
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert!(a
                .samples
                .iter()
                .zip(&b.samples)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn empty_corpus_is_valid() {
        let (cfg, back) = read_corpus(&encode(&[], None)[..]).unwrap();
        assert!(cfg.is_none());
        assert!(back.is_empty());
    }

    #[test]
    fn truncated_file_names_the_record() {
        let records = generate_corpus(&small()).unwrap();
        let bytes = encode(&records, None);
        let cut = &bytes[..bytes.len() - 100];
        match read_corpus(cut) {
            Err(Error::Parse { location, .. }) => {
                assert_eq!(location, Location::Record(records.len() - 1))
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let bytes = encode(&[], None);
        let text = String::from_utf8(bytes).unwrap().replace("version=1", "version=7");
        match read_corpus(text.as_bytes()) {
            Err(Error::Version { found, expected, .. }) => {
                assert_eq!((found, expected), (7, CORPUS_VERSION))
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(
            read_corpus(&b"NOTACORPUS\n"[..]),
            Err(Error::Parse { location: Location::Header, .. })
        ));
    }
}
