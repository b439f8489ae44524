//! Line protocol:
//!
//! ```text
//! INGEST <base64 report>    -> OK <segments_inserted> <growth_events>
//! QUERY <value> <s_t> <m>   -> COUNT <estimate> <sim_max>
//! STATS                     -> key=value lines, then END
//! ```
//!
//! Failures answer `ERR <message>`. `<value>` may contain spaces.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::ServerState;
use crate::client::WireReport;
use crate::encoding::Value;
use crate::error::{Error, Result};

fn query(state: &ServerState, args: &str) -> Result<String> {
    let mut parts = args.rsplitn(3, ' ');
    let (m, s_t, value) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(s), Some(v)) if !v.is_empty() => (m, s, v),
        _ => return Err(Error::InvalidInput("usage: QUERY <value> <s_t> <m>".into())),
    };
    let s_t: f64 = s_t
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad s_t {s_t:?}")))?;
    let m: usize = m
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad m {m:?}")))?;
    let r = state.query_count(&Value::parse(value), s_t, m)?;
    Ok(format!("COUNT {} {}", r.estimate, r.sim_max))
}

fn ingest(state: &ServerState, payload: &str) -> Result<String> {
    let bytes = STANDARD
        .decode(payload.trim())
        .map_err(|e| Error::MalformedReport(format!("bad base64: {e}")))?;
    let s = state.ingest(&WireReport::from_bytes(&bytes)?)?;
    Ok(format!("OK {} {}", s.segments_inserted, s.growth_events))
}

/// The `INGEST` request line carrying `report`.
pub fn ingest_request(report: &WireReport) -> String {
    format!("INGEST {}", STANDARD.encode(report.to_bytes()))
}

/// Answers one request line. The response may span several lines.
pub fn handle_line(state: &ServerState, line: &str) -> Vec<String> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (cmd, rest) = line.split_once(' ').unwrap_or((line, ""));
    let result = match cmd {
        "INGEST" => ingest(state, rest).map(|l| vec![l]),
        "QUERY" => query(state, rest).map(|l| vec![l]),
        "STATS" => {
            let mut lines = state.stats().to_lines();
            lines.push("END".to_string());
            Ok(lines)
        }
        "" => Err(Error::InvalidInput("empty request".into())),
        other => Err(Error::InvalidInput(format!("unknown command {other:?}"))),
    };
    result.unwrap_or_else(|e| vec![format!("ERR {e}")])
}

/// Serves requests from `reader` until EOF.
pub fn serve_connection<R: BufRead, W: Write>(
    state: &ServerState,
    reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        for out in handle_line(state, &line) {
            writeln!(writer, "{out}")?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread each.
pub fn serve(addr: impl ToSocketAddrs, state: Arc<ServerState>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let state = Arc::clone(&state);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_connection(&state, reader, stream);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::SegmentRecord;
    use crate::encoding::{self, EncoderConfig};
    use crate::ldp::MechanismParams;
    use crate::server::ServerConfig;

    fn state() -> ServerState {
        ServerState::new(&ServerConfig {
            mech: MechanismParams {
                m: 5,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap()
    }

    fn encoded(value: &str) -> String {
        let bf = encoding::encode_string(value, &EncoderConfig::default()).unwrap();
        let records = encoding::segment(&bf, 5)
            .unwrap()
            .into_segments()
            .into_iter()
            .enumerate()
            .map(|(j, bits)| SegmentRecord {
                position: j as u8,
                bits,
            })
            .collect();
        let r = WireReport {
            version: 1,
            client_id: 3,
            records,
        };
        ingest_request(&r)["INGEST ".len()..].to_string()
    }

    #[test]
    fn ingest_then_query_over_lines() {
        let s = state();
        let input = format!(
            "INGEST {0}\nINGEST {0}\nQUERY romeo and juliet 0.8 5\nQUERY nothing 0.8 5\nSTATS\n",
            encoded("romeo and juliet")
        );
        let mut out = Vec::new();
        serve_connection(&s, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "OK 5 0");
        assert_eq!(lines[2], "COUNT 2 1");
        assert_eq!(lines[3], "COUNT 0 0");
        assert!(lines.contains(&"load=5"));
        assert_eq!(*lines.last().unwrap(), "END");
    }

    #[test]
    fn bad_requests_get_err() {
        let s = state();
        assert!(handle_line(&s, "INGEST !!!")[0].starts_with("ERR"));
        assert!(handle_line(&s, "QUERY x")[0].starts_with("ERR"));
        assert!(handle_line(&s, "QUERY x 0.8 4")[0].starts_with("ERR"));
        assert!(handle_line(&s, "DELETE x")[0].starts_with("ERR"));
        assert!(handle_line(&s, "")[0].starts_with("ERR"));
    }
}
