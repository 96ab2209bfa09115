use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use super::Op;
use crate::devsim::OpKind;

/// One trace record: an access issued at `timestamp_us`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceOp {
    pub timestamp_us: u64,
    pub op: Op,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_line(text: &str, line: usize) -> Result<TraceOp, TraceError> {
    let err = |message: String| TraceError::Parse { line, message };
    let fields: Vec<&str> = text.split_whitespace().collect();
    let [ts, kind, lba, len] = fields[..] else {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    };
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|e| err(format!("bad {what} {s:?}: {e}")));
    let kind = match kind {
        "R" | "r" => OpKind::Read,
        "W" | "w" => OpKind::Write,
        other => return Err(err(format!("op must be R or W, found {other:?}"))),
    };
    Ok(TraceOp { timestamp_us: num(ts, "timestamp")?, op: Op { kind, lba: num(lba, "lba")?, len: num(len, "length")? } })
}

/// Parses `<timestamp_us> <R|W> <lba_bytes> <len_bytes>` lines. Blank lines
/// and lines starting with `#` are skipped; timestamps must not decrease.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceOp>, TraceError> {
    let mut out: Vec<TraceOp> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let op = parse_line(text, i + 1)?;
        if let Some(prev) = out.last() {
            if op.timestamp_us < prev.timestamp_us {
                return Err(TraceError::Parse {
                    line: i + 1,
                    message: format!("timestamp {} precedes {}", op.timestamp_us, prev.timestamp_us),
                });
            }
        }
        out.push(op);
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceOp>, TraceError> {
    parse_trace(io::BufReader::new(std::fs::File::open(path)?))
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut s = String::new();
    for t in ops {
        let k = match t.op.kind {
            OpKind::Read => 'R',
            OpKind::Write => 'W',
        };
        writeln!(s, "{} {k} {} {}", t.timestamp_us, t.op.lba, t.op.len).unwrap();
    }
    s
}

pub fn write_trace(mut w: impl Write, ops: &[TraceOp]) -> io::Result<()> {
    w.write_all(format_trace(ops).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_read() {
        let ops = parse_trace("0 R 0 4096\n".as_bytes()).unwrap();
        assert_eq!(ops, vec![TraceOp { timestamp_us: 0, op: Op { kind: OpKind::Read, lba: 0, len: 4096 } }]);
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_trace("0 R 0 4096\n\n5 X 0 4096\n".as_bytes()).unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 3, .. }), "{e}");
        let e = parse_trace("0 R 0\n".as_bytes()).unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn rejects_out_of_order_timestamps() {
        let e = parse_trace("10 R 0 4096\n5 W 0 4096\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 2"));
    }
}
