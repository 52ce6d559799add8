use std::process::ExitCode;

fn main() -> ExitCode {
    camds::cli::run(std::env::args_os())
}
