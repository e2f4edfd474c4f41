fn main() -> std::process::ExitCode {
    nailguard_cli::main_with_args(std::env::args_os())
}
