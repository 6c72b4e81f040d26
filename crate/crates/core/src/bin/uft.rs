fn main() -> std::process::ExitCode {
    uft::cli::run(std::env::args_os())
}
