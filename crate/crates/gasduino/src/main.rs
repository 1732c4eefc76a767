use std::process::ExitCode;

fn main() -> ExitCode {
    gasduino::cli::main_with_args(std::env::args_os())
}
