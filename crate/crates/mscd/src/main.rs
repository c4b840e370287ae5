use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = mscd::cli::parse_args();
    match mscd::cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
