//! Line-oriented text encoding of a trace.
//!
//! ```text
//! itb-trace v1
//! # stream_id,pid,tid,op,arg,offset,nbytes,t_start_ns,t_end_ns
//! 0,100,1,open,"/data/DISK01",3,,0,2100
//! 0,100,1,lseek,3,65536,,2500,2600
//! 0,100,1,write,3,,8192,2700,9100
//! 0,100,1,close,3,,,9500,9600
//! ```
//!
//! `arg` is the quoted path for `open` and the descriptor otherwise. For `open`
//! the offset column carries the descriptor the open returned; for `lseek` it
//! is the absolute seek target. Lines starting with `#` are comments. Paths
//! may not contain line breaks.

use std::io::{self, Read, Write};

use super::{IoStream, Mode, OpKind, TraceError, TraceEvent};

pub const TRACE_HEADER: &str = "itb-trace v1";

const COLUMNS: usize = 9;

pub fn parse_trace<R: Read>(mut input: R, mode: Mode) -> Result<IoStream, TraceError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    parse_str(&text, mode)
}

pub fn parse_str(input: &str, mode: Mode) -> Result<IoStream, TraceError> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, l)) if l.trim_end() == TRACE_HEADER => {}
        Some((line, _)) => {
            return Err(TraceError::MalformedLine {
                line,
                reason: format!("expected `{TRACE_HEADER}` header"),
            })
        }
        None => {
            return Err(TraceError::MalformedLine {
                line: 1,
                reason: format!("missing `{TRACE_HEADER}` header"),
            })
        }
    }

    let mut items = Vec::new();
    for (line, text) in lines {
        let fields = split_fields(text).map_err(|reason| TraceError::MalformedLine { line, reason })?;
        items.push((line, parse_record(&fields, line)?));
    }
    IoStream::build(items, mode)
}

/// Splits one record on commas. A field may be double-quoted, with `""`
/// standing for a literal quote.
fn split_fields(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::with_capacity(COLUMNS);
    let mut chars = line.chars().peekable();
    loop {
        let mut field = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        field.push('"');
                    }
                    Some('"') => break,
                    Some(c) => field.push(c),
                    None => return Err("unterminated quoted field".into()),
                }
            }
            match chars.next() {
                None => {
                    fields.push(field);
                    return Ok(fields);
                }
                Some(',') => fields.push(field),
                Some(c) => return Err(format!("unexpected `{c}` after quoted field")),
            }
        } else {
            loop {
                match chars.next() {
                    None => {
                        fields.push(field);
                        return Ok(fields);
                    }
                    Some(',') => break,
                    Some(c) => field.push(c),
                }
            }
            fields.push(field);
        }
    }
}

fn parse_record(rec: &[String], line: usize) -> Result<TraceEvent, TraceError> {
    if rec.len() != COLUMNS {
        return Err(TraceError::MalformedLine {
            line,
            reason: format!("expected {COLUMNS} fields, found {}", rec.len()),
        });
    }
    let malformed = |reason: String| TraceError::MalformedLine { line, reason };
    let int = |idx: usize, name: &str| -> Result<Option<u64>, TraceError> {
        let raw = rec[idx].as_str();
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<u64>()
            .map(Some)
            .map_err(|_| malformed(format!("{name}: `{raw}` is not a non-negative integer")))
    };
    let required = |idx: usize, name: &'static str| -> Result<u64, TraceError> {
        int(idx, name)?.ok_or(TraceError::SchemaViolation { line, field: name })
    };
    let narrow = |v: u64, name: &str| -> Result<u32, TraceError> {
        u32::try_from(v).map_err(|_| malformed(format!("{name}: {v} out of range")))
    };

    let stream_id = narrow(required(0, "stream_id")?, "stream_id")?;
    let pid = narrow(required(1, "pid")?, "pid")?;
    let tid = narrow(required(2, "tid")?, "tid")?;
    let op: OpKind = rec[3].parse().map_err(|e| malformed(format!("{e}")))?;
    let t_start = required(7, "t_start")?;
    let t_end = required(8, "t_end")?;
    let col_offset = int(5, "offset")?;
    let nbytes = int(6, "nbytes")?;

    let (path, fd, offset) = if op == OpKind::Open {
        if rec[4].is_empty() {
            return Err(TraceError::SchemaViolation { line, field: "path" });
        }
        let fd = col_offset.ok_or(TraceError::SchemaViolation { line, field: "fd" })?;
        (Some(rec[4].clone()), narrow(fd, "fd")?, None)
    } else {
        let fd = required(4, "fd")?;
        (None, narrow(fd, "fd")?, col_offset)
    };

    let ev = TraceEvent {
        stream_id,
        pid,
        tid,
        op,
        path,
        fd,
        offset,
        nbytes,
        t_start,
        t_end,
    };
    match ev.schema_violation() {
        Some(field) => Err(TraceError::SchemaViolation { line, field }),
        None => Ok(ev),
    }
}

pub fn serialize_trace<W: Write>(stream: &IoStream, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for ev in stream.events() {
        write_event(&mut out, ev)?;
    }
    out.flush()
}

pub fn serialize_to_string(stream: &IoStream) -> String {
    let mut buf = Vec::new();
    serialize_trace(stream, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace output is UTF-8")
}

fn write_event<W: Write>(out: &mut W, ev: &TraceEvent) -> io::Result<()> {
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    let (arg, offset_col) = match (&ev.path, ev.op) {
        (Some(path), OpKind::Open) => (quote(path), ev.fd.to_string()),
        _ => (ev.fd.to_string(), opt(ev.offset)),
    };
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        ev.stream_id,
        ev.pid,
        ev.tid,
        ev.op,
        arg,
        offset_col,
        opt(ev.nbytes),
        ev.t_start,
        ev.t_end
    )
}

fn quote(path: &str) -> String {
    format!("\"{}\"", path.replace('"', "\"\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_read_line() {
        let text = "itb-trace v1\n0,1,1,read,3,,4096,0,1000\n";
        let s = parse_str(text, Mode::Repair).unwrap();
        // the orphan read gets its open synthesized
        assert_eq!(s.len(), 2);
        let read = &s.events()[1];
        assert_eq!(read.op, OpKind::Read);
        assert_eq!(read.nbytes, Some(4096));
        assert_eq!(read.response_time(), 1000);
    }

    #[test]
    fn write_without_nbytes_is_a_schema_violation() {
        let text = "itb-trace v1\n0,1,1,open,\"/f\",3,,0,1\n0,1,1,write,3,,,1,2\n";
        let err = parse_str(text, Mode::Repair).unwrap_err();
        assert!(
            matches!(
                err,
                TraceError::SchemaViolation {
                    line: 3,
                    field: "nbytes"
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn misplaced_fields_are_rejected() {
        let text = "itb-trace v1\n0,1,1,open,\"/f\",3,,0,1\n0,1,1,read,3,5,10,1,2\n";
        let err = parse_str(text, Mode::Repair).unwrap_err();
        assert!(matches!(
            err,
            TraceError::SchemaViolation {
                line: 3,
                field: "offset"
            }
        ));

        let text = "itb-trace v1\n0,1,1,open,\"/f\",,,0,1\n";
        let err = parse_str(text, Mode::Repair).unwrap_err();
        assert!(matches!(err, TraceError::SchemaViolation { line: 2, field: "fd" }));
    }

    #[test]
    fn malformed_lines() {
        for (text, line) in [
            ("itb-trace v1\n0,1,1,read,3\n", 2),
            ("itb-trace v1\n0,1,1,fsync,3,,,0,1\n", 2),
            ("itb-trace v1\n# c\n0,x,1,close,3,,,0,1\n", 3),
            ("itb-trace v1\n0,1,1,lseek,3,-4,,0,1\n", 2),
            ("not a trace\n", 1),
            ("", 1),
        ] {
            match parse_str(text, Mode::Repair) {
                Err(TraceError::MalformedLine { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn comments_and_quoted_paths() {
        let text = "# leading comment\nitb-trace v1\n# another\n0,1,1,open,\"/odd, \"\"name\"\"\",4,,0,1\n";
        let s = parse_str(text, Mode::Strict).unwrap();
        assert_eq!(s.events()[0].path.as_deref(), Some("/odd, \"name\""));
        assert_eq!(s.events()[0].fd, 4);
        let again = parse_str(&serialize_to_string(&s), Mode::Strict).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let out = serialize_to_string(&IoStream::empty());
        assert_eq!(out, "itb-trace v1\n");
        assert!(parse_str(&out, Mode::Strict).unwrap().is_empty());
    }

    #[test]
    fn one_event_round_trips_bit_exactly() {
        let text = "itb-trace v1\n2,10,11,open,\"/db/a\",3,,5,9\n";
        let s = parse_str(text, Mode::Strict).unwrap();
        assert_eq!(serialize_to_string(&s), text);
    }

    #[test]
    fn two_interleaved_threads_partition() {
        let text = "itb-trace v1
0,1,1,open,\"/a\",3,,0,10
0,1,2,open,\"/b\",4,,5,15
0,1,1,read,3,,10,20,30
0,1,2,write,4,,20,25,35
0,1,1,close,3,,,40,50
0,1,2,close,4,,,45,55
";
        let s = parse_str(text, Mode::Strict).unwrap();
        // independent grouping over the raw lines
        let mut by_tid: std::collections::BTreeMap<&str, Vec<&str>> = Default::default();
        for l in text.lines().skip(1) {
            let cols: Vec<&str> = l.split(',').collect();
            by_tid.entry(cols[2]).or_default().push(cols[3]);
        }
        let sizes: Vec<usize> = s.threads().values().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3]);
        for (key, idxs) in s.threads() {
            let ops: Vec<&str> = idxs.iter().map(|&i| s.events()[i].op.as_str()).collect();
            assert_eq!(ops, by_tid[key.tid.to_string().as_str()]);
        }
    }
}
