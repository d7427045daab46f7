use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(placeopt::main_with_args(std::env::args_os()) as u8)
}
