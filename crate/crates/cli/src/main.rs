use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match morphgen_cli::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("morphgen: {e}");
            if matches!(e, morphgen_cli::error::CliError::Usage(_)) {
                eprintln!("\n{}", morphgen_cli::USAGE);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
