//! Honest block certificates verify; tampered ones are rejected with a
//! reason code.

use fairlab::leaders::EngineMode;
use fairlab::simnet::{benign, run};

fn main() {
    let out = run(&benign(4, 3, EngineMode::Clocked)).expect("benign scenario runs");
    let verifier = out.chain.verifier();
    let cert = out.chain.blocks()[0].cert.clone();
    println!("honest: {}", verifier.verify(&cert));

    let mut empty = cert.clone();
    empty.requests.clear();
    println!("emptied: {}", verifier.verify(&empty));

    let mut thin = cert.clone();
    let member = thin.requests[0];
    thin.cited
        .get_mut(&member)
        .expect("members are cited")
        .truncate(1);
    println!("one vote left: {}", verifier.verify(&thin));

    let mut forged = cert;
    let first = forged.cited.values_mut().next().expect("cited votes");
    first[0].att.tag[0] ^= 0xff;
    println!("forged attestation: {}", verifier.verify(&forged));
}
