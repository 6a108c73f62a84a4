use std::process::ExitCode;

fn main() -> ExitCode {
    stsa::cli::main_entry()
}
