use std::process::ExitCode;

fn main() -> ExitCode {
    etpa::cli::main_with_args(std::env::args_os())
}
