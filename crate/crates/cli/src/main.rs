use clap::Parser;
use psbp_cli::args::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = psbp_cli::run(cli) {
        eprintln!("psbp: {e}");
        std::process::exit(e.exit_code());
    }
}
