use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(molm::cli::run(std::env::args_os()))
}
