//! Command traces as CSV, one record per line:
//!
//! ```text
//! time_ns,kind,subchannel,bank,bank_set,agent,completion_ns
//! ```
//!
//! `kind` is `ACT`, `REF`, `RFMAB` or `RFMSB`. Absent `bank`, `bank_set` and
//! `agent` values are empty fields.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dram::{CommandKind, CommandRecord};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    time_ns: u64,
    kind: String,
    subchannel: u32,
    bank: Option<u32>,
    bank_set: Option<u32>,
    agent: Option<u32>,
    completion_ns: u64,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_trace(w: impl Write, records: &[CommandRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(Row {
            time_ns: r.issue,
            kind: r.kind.as_str().to_string(),
            subchannel: r.subchannel,
            bank: r.bank,
            bank_set: r.bank_set,
            agent: r.agent,
            completion_ns: r.completion,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(r: impl Read) -> Result<Vec<CommandRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = row.map_err(|e| Error::Trace {
            line,
            reason: e.to_string(),
        })?;
        let kind = CommandKind::parse(&row.kind).ok_or_else(|| Error::Trace {
            line,
            reason: format!("unknown command kind `{}`", row.kind),
        })?;
        if row.completion_ns < row.time_ns {
            return Err(Error::Trace {
                line,
                reason: "completion precedes issue".into(),
            });
        }
        out.push(CommandRecord {
            kind,
            subchannel: row.subchannel,
            bank: row.bank,
            bank_set: row.bank_set,
            issue: row.time_ns,
            completion: row.completion_ns,
            agent: row.agent,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<CommandRecord> {
        vec![
            CommandRecord {
                kind: CommandKind::Ref,
                subchannel: 0,
                bank: None,
                bank_set: None,
                issue: 0,
                completion: 410,
                agent: None,
            },
            CommandRecord {
                kind: CommandKind::Act,
                subchannel: 1,
                bank: Some(7),
                bank_set: None,
                issue: 410,
                completion: 458,
                agent: Some(3),
            },
            CommandRecord {
                kind: CommandKind::Rfmsb,
                subchannel: 0,
                bank: None,
                bank_set: Some(2),
                issue: 500,
                completion: 690,
                agent: Some(0),
            },
        ]
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "time_ns,kind,subchannel,bank,bank_set,agent,completion_ns\n\
             0,REF,0,,,,410\n\
             410,ACT,1,7,,3,458\n\
             500,RFMSB,0,,2,0,690\n"
        );
        assert_eq!(read_trace(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn malformed_lines_are_located() {
        let text = "time_ns,kind,subchannel,bank,bank_set,agent,completion_ns\n0,REF,0,,,,410\n5,NOP,0,,,,9\n";
        match read_trace(text.as_bytes()) {
            Err(Error::Trace { line: 3, reason }) => assert!(reason.contains("NOP")),
            other => panic!("{other:?}"),
        }
        let text = "time_ns,kind,subchannel,bank,bank_set,agent,completion_ns\nx,REF,0,,,,410\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Trace { line: 2, .. })));
    }
}
