use clap::error::ErrorKind;
use clap::Parser;

use darl::cli;

fn main() {
    let parsed = cli::Cli::try_parse();
    let args = match parsed {
        Ok(args) => args,
        Err(e) => {
            // --help/--version are successes; anything else is a usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = cli::init_threads() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    if let Err(e) = cli::dispatch(&args) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
