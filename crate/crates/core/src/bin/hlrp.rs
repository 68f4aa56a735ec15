use clap::Parser;

use highlights_lrp::cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.global.log_level)
        .format_timestamp(None)
        .init();
    if let Err(e) = run(&cli) {
        eprintln!("hlrp: {e}");
        std::process::exit(e.exit_code());
    }
}
