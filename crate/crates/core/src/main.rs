use std::process::ExitCode;

fn main() -> ExitCode {
    negkit::cli::main_with(std::env::args_os())
}
