//! Export the accepted chain and re-verify it from the file alone.

use fairlab::abc::verify_export;
use fairlab::leaders::EngineMode;
use fairlab::simnet::{benign, run};

fn main() {
    let out = run(&benign(7, 5, EngineMode::Neverending)).expect("benign scenario runs");
    let text = out.chain.export_jsonl();
    println!("{} bytes, {} blocks", text.len(), out.chain.blocks().len());
    let audit = verify_export(&text).expect("well-formed export");
    println!(
        "re-verified: {} blocks, {} failures",
        audit.blocks,
        audit.failures.len()
    );

    // Flip one hex digit near the end of the first block's certificate.
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let at = lines[1].len() - 12;
    let flipped = if &lines[1][at..at + 1] == "0" {
        "1"
    } else {
        "0"
    };
    lines[1].replace_range(at..at + 1, flipped);
    let audit = verify_export(&lines.join("\n")).expect("still well-formed");
    println!("after tampering: {} failures", audit.failures.len());
}
