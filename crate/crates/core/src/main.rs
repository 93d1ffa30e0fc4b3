use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYMDIFF_LOG", "warn")).init();
    symdiff::cli::main_with_args(std::env::args_os())
}
