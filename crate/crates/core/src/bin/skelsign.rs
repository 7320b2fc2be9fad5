use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = skelsign::cli::run(std::env::args_os(), io::stdin().lock(), io::stdout(), io::stderr());
    ExitCode::from(code as u8)
}
