use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let code = vtnet_cli::run(std::env::args_os(), &mut stdout.lock());
    ExitCode::from(code)
}
