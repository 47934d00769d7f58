//! Classifies one flow through an HTTP completion endpoint. Uses
//! FLOWPROMPT_ENDPOINT when set; otherwise starts a local stub that always
//! answers with a fixed verdict.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use flowprompt::flags::FlagSet;
use flowprompt::inference::{BackendConfig, Client, ENV_ENDPOINT};

fn spawn_stub() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).is_ok_and(|n| n > 0) {
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let reply = r#"{"choices":[{"text":"{\"prediction\":\"attack\",\"p_attack\":0.8123}"}]}"#;
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Ok(format!("http://{addr}/completion"))
}

fn main() -> anyhow::Result<()> {
    let endpoint = match std::env::var(ENV_ENDPOINT) {
        Ok(e) => e,
        Err(_) => spawn_stub()?,
    };
    println!("endpoint {endpoint}");
    let config = BackendConfig {
        timeout_secs: 10.0,
        ..BackendConfig::remote(endpoint, "default")
    }
    .with_env();
    let client = Client::new(config)?;
    let prompt = "### FLOW\nflags: burst=true synflood=false ... proto=tcp service=- state=INT\n\n### ANSWER\n";
    let outcome = client.classify(1, prompt, &FlagSet::default());
    match outcome.result {
        Ok(v) => println!("verdict {} ({} attempt(s), {:.1} ms)", v.canonical_json(), outcome.attempts, outcome.latency_ms),
        Err(e) => println!("failed after {} attempt(s): {e}", outcome.attempts),
    }
    Ok(())
}
