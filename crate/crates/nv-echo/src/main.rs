use std::process::ExitCode;

fn main() -> ExitCode {
    nv_echo::cli::run()
}
