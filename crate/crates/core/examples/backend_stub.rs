//! Serve the deterministic stub model over TCP, talk to it through the
//! line-delimited JSON client and run the conformance checks against it.

use std::net::TcpListener;
use std::time::Duration;

use selftalk::audio::AudioClip;
use selftalk::backend::{self, Backend, BackendUri, RemoteBackend, StubBackend};

fn main() -> selftalk::Result<()> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let uri = BackendUri::Tcp(listener.local_addr()?.to_string());
    std::thread::spawn(move || StubBackend::default().serve_tcp(listener));

    let remote = RemoteBackend::new(uri.clone(), Duration::from_secs(5), Some(backend::DEFAULT_STUB_DIM));
    let clip = AudioClip::new((0..8000).map(|i| (i as f32 * 0.05).sin() * 0.2).collect(), 16_000)?;
    let frames = remote.embed(&clip)?;
    println!("embedding: {} frames x {} dims", frames.len(), frames[0].len());
    println!("llm reply: {:?}", remote.llm("Utterance: \"why again\"\nClassification:")?);

    for c in backend::conformance_suite(&uri, Duration::from_secs(5), &StubBackend::default())? {
        println!("{} {:<24} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
