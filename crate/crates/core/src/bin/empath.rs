use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(empath_core::cli::run() as u8)
}
