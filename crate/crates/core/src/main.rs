use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(immunocert::cli::run_cli())
}
