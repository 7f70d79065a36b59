fn main() -> std::process::ExitCode {
    raretrig::cli::run(std::env::args_os())
}
