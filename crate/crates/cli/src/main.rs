use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tbdl_cli::run(std::env::args_os()))
}
