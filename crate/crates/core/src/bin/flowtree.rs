use clap::Parser;
use flowtree::cli::{emit, run, RunConfig};

fn main() {
    let cfg = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Exit code 2 is reserved for inconclusive numerics.
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = run(&cfg);
    if let Err(e) = emit(&outcome, cfg.out.as_deref()) {
        eprintln!("error: cannot write artifacts: {e}");
        std::process::exit(1);
    }
    std::process::exit(outcome.code);
}
