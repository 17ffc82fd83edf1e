fn main() -> std::process::ExitCode {
    specdec_core::cli::main()
}
