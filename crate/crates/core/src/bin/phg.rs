fn main() -> std::process::ExitCode {
    phg_core::cli::main()
}
