use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rs_cavity::cli::main(std::env::args_os()))
}
